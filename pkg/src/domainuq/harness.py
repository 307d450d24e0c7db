"""Convergence experiments: QMC in n, dimension truncation in s, FEM in h.

Every experiment is a pure function of its ``ExperimentConfig``. Lattice
rules come from the CBC construction, samples are processed in fixed-size
batches in a fixed order, and nodal averages use compensated summation, so
reports are bitwise reproducible regardless of the thread count.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sympy import isprime

from .errors import ConfigError, InsufficientPoints
from .fem import (
    DEFAULT_BATCH,
    Mesh,
    grad_norms_batch,
    norms,
    prolongate,
    solve_capacity_batch,
    solve_source_batch,
    structured_mesh,
)
from .lattice import LatticeRule, build_spod_params, cbc_construct, lattice_points
from .random_field import FieldSpec, b_sequence
from .summation import NeumaierSum


class Experiment(enum.Enum):
    SOURCE_FIELD = "SOURCE_FIELD"
    SOURCE_QOI = "SOURCE_QOI"
    CAPACITY = "CAPACITY"
    DIM_TRUNCATION = "DIM_TRUNCATION"
    FEM_H = "FEM_H"


def _source_x2(x):
    return x[..., 1]


def _source_zero(x):
    return np.zeros(x.shape[:-1])


def _source_sine(x):
    return 2.0 * math.pi**2 * np.sin(math.pi * x[..., 0]) * np.sin(math.pi * x[..., 1])


SOURCES = {"x2": _source_x2, "zero": _source_zero, "sine": _source_sine}


def _strict_keys(d: dict, allowed: set, where: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


@dataclass(frozen=True)
class QmcConfig:
    n_list: tuple[int, ...] = (67, 131, 257, 521, 1031, 2053, 4099)
    reference_n: int = 16411
    alpha: int = 2
    weight_amplitude: float = 1e-6
    sigma_min: float = 1.0
    rho: float = 1.0
    cbc_method: str = "fft"


@dataclass(frozen=True)
class TruncationConfig:
    s_list: tuple[int, ...] = (2, 4, 8, 16, 32)
    s_ref: int = 64
    n: int = 4099


@dataclass(frozen=True)
class FemConfig:
    m_list: tuple[int, ...] = (4, 8, 16, 32)
    reference_m: int = 128
    samples: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: Experiment
    field: FieldSpec
    mesh_m: int = 16
    qmc: QmcConfig = QmcConfig()
    truncation: TruncationConfig = TruncationConfig()
    fem: FemConfig = FemConfig()
    source: str = "x2"
    quadrature: str = "centroid"
    qoi_domain: str = "mapped"
    batch_size: int = DEFAULT_BATCH

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        q = self.qmc
        if not _is_pow2(self.mesh_m):
            raise ConfigError(f"mesh_m must be a power of two, got {self.mesh_m}")
        if self.source not in SOURCES:
            raise ConfigError(f"source must be one of {sorted(SOURCES)}")
        if self.quadrature not in ("centroid", "midpoint"):
            raise ConfigError("quadrature must be 'centroid' or 'midpoint'")
        if self.qoi_domain not in ("mapped", "reference"):
            raise ConfigError("qoi_domain must be 'mapped' or 'reference'")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if q.cbc_method not in ("fft", "naive"):
            raise ConfigError("cbc_method must be 'fft' or 'naive'")
        for n in q.n_list + (q.reference_n,):
            if not isprime(n):
                raise ConfigError(f"n must be prime, got {n}")
        if list(q.n_list) != sorted(set(q.n_list)):
            raise ConfigError("n_list must be strictly increasing")
        if q.n_list and q.reference_n < max(q.n_list):
            raise ConfigError("reference_n must be at least max(n_list)")
        t = self.truncation
        if list(t.s_list) != sorted(set(t.s_list)) or (t.s_list and t.s_list[0] < 1):
            raise ConfigError("s_list must be strictly increasing positive integers")
        if t.s_list and t.s_ref < max(t.s_list):
            raise ConfigError("s_ref must be at least max(s_list)")
        if not isprime(t.n):
            raise ConfigError(f"truncation n must be prime, got {t.n}")
        f = self.fem
        for m in f.m_list + (f.reference_m,):
            if not _is_pow2(m):
                raise ConfigError(f"mesh sizes must be powers of two, got {m}")
        if f.m_list and f.reference_m < max(f.m_list):
            raise ConfigError("reference_m must be at least max(m_list)")
        if f.samples < 1:
            raise ConfigError("fem samples must be >= 1")

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment.value,
            "field": self.field.to_dict(),
            "mesh_m": self.mesh_m,
            "qmc": {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self.qmc).items()},
            "truncation": {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self.truncation).items()},
            "fem": {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self.fem).items()},
            "source": self.source,
            "quadrature": self.quadrature,
            "qoi_domain": self.qoi_domain,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        top = {f.name for f in dataclasses.fields(cls)}
        _strict_keys(d, top, "config")
        if "experiment" not in d or "field" not in d:
            raise ConfigError("config needs 'experiment' and 'field'")
        try:
            experiment = Experiment(d["experiment"])
        except ValueError:
            raise ConfigError(f"unknown experiment {d['experiment']!r}") from None
        try:
            spec = FieldSpec.from_dict(d["field"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid field: {exc}") from exc
        kwargs = {k: v for k, v in d.items() if k not in ("experiment", "field", "qmc", "truncation", "fem")}
        for name, sub in (("qmc", QmcConfig), ("truncation", TruncationConfig), ("fem", FemConfig)):
            if name in d:
                _strict_keys(d[name], {f.name for f in dataclasses.fields(sub)}, name)
                vals = {k: tuple(v) if isinstance(v, list) else v for k, v in d[name].items()}
                kwargs[name] = sub(**vals)
        return cls(experiment, spec, **kwargs)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _is_pow2(m) -> bool:
    return isinstance(m, int) and m >= 2 and (m & (m - 1)) == 0


@dataclass
class ConvergenceReport:
    axis_name: str
    axis_values: list
    errors: list
    fitted_rate: float
    metadata: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    flags: set = field(default_factory=set)
    expected_rate: float | None = None

    def __post_init__(self):
        if len(self.axis_values) != len(self.errors):
            raise ValueError("axis and error lists differ in length")
        for col in self.extra.values():
            if len(col) != len(self.errors):
                raise ValueError("extra column length mismatch")


def fit_rate(axis, errors) -> float:
    """Negative slope of the least-squares line through (log axis, log error); zero errors are skipped."""
    pts = [(float(a), float(e)) for a, e in zip(axis, errors) if e > 0]
    if len(pts) < 3:
        raise InsufficientPoints(f"need at least 3 positive errors, got {len(pts)}")
    x = np.log([a for a, _ in pts])
    y = np.log([e for _, e in pts])
    slope = np.polyfit(x, y, 1)[0]
    return float(-slope)


def _rate_or_nan(axis, errors, flags: set) -> float:
    try:
        return fit_rate(axis, errors)
    except InsufficientPoints:
        flags.add("InsufficientPoints")
        return math.nan


# lattice plumbing -----------------------------------------------------------


def spod_params_for(config: ExperimentConfig, s: int | None = None):
    q = config.qmc
    spec = config.field.with_s(s or config.field.s)
    unit = b_sequence(dataclasses.replace(spec, amplitude=1.0))
    return build_spod_params(unit, q.alpha, 2, q.sigma_min, q.rho, q.weight_amplitude)


def lattice_rule(config: ExperimentConfig, n: int, s: int | None = None) -> LatticeRule:
    s = s or config.field.s
    return cbc_construct(n, s, spod_params_for(config, s), method=config.qmc.cbc_method)


def _lattice_average(points: np.ndarray, evaluate, width: int, batch_size: int, threads: int) -> np.ndarray:
    """Compensated, order-fixed mean of evaluate(ys, offset) rows over all lattice points."""
    acc = NeumaierSum(width)
    block = batch_size * max(threads, 1)
    for start in range(0, len(points), block):
        rows = evaluate(points[start : start + block], start)
        acc.add_rows(np.asarray(rows).reshape(len(rows), width))
    return acc.mean()


def _source_mean(config, mesh, spec, points, threads):
    f = SOURCES[config.source]

    def evaluate(ys, offset):
        return solve_source_batch(mesh, spec, ys, f, config.quadrature, batch_size=config.batch_size, threads=threads, offset=offset)

    return _lattice_average(points, evaluate, mesh.num_vertices, config.batch_size, threads)


def _qoi_mean(config, mesh, spec, points, threads):
    f = SOURCES[config.source]

    def evaluate(ys, offset):
        vals = solve_source_batch(mesh, spec, ys, f, config.quadrature, batch_size=config.batch_size, threads=threads, offset=offset)
        return grad_norms_batch(mesh, spec, ys, vals, config.qoi_domain)

    return float(_lattice_average(points, evaluate, 1, config.batch_size, threads)[0])


def _capacity_mean(config, mesh, spec, points, threads):
    def evaluate(ys, offset):
        cap, conj = solve_capacity_batch(mesh, spec, ys, batch_size=config.batch_size, threads=threads, offset=offset)
        return np.column_stack([cap, np.abs(1.0 - cap * conj)])

    out = _lattice_average(points, evaluate, 2, config.batch_size, threads)
    return float(out[0]), float(out[1])


def _meta(config: ExperimentConfig, **more) -> dict:
    return {"config": config.to_dict(), **more}


def _require(config: ExperimentConfig, kind: Experiment) -> None:
    if config.experiment is not kind:
        raise ConfigError(f"config is for {config.experiment.value}, not {kind.value}")


# experiments ----------------------------------------------------------------


def run_source_field(config: ExperimentConfig, threads: int = 1) -> ConvergenceReport:
    """||E[u] - Q_n(u)||_{L1} / ||E[u]||_{L2} against the reference_n lattice average."""
    _require(config, Experiment.SOURCE_FIELD)
    mesh = structured_mesh(config.mesh_m)
    spec = config.field
    ref_rule = lattice_rule(config, config.qmc.reference_n)
    reference = _source_mean(config, mesh, spec, lattice_points(ref_rule), threads)
    denom = norms(reference, mesh).l2
    flags: set = set()
    if denom == 0.0:
        flags.add("ZeroReference")
    errors, e2 = [], []
    for n in config.qmc.n_list:
        rule = ref_rule if n == ref_rule.n else lattice_rule(config, n)
        mean = _source_mean(config, mesh, spec, lattice_points(rule), threads)
        diff = norms(mean - reference, mesh).l1
        errors.append(diff if denom == 0.0 else diff / denom)
        e2.append(rule.e2_history[-1])
    return ConvergenceReport(
        "n", list(config.qmc.n_list), errors, _rate_or_nan(config.qmc.n_list, errors, flags),
        _meta(config), {"wce_sq": e2}, flags,
    )


def run_source_qoi(config: ExperimentConfig, threads: int = 1) -> ConvergenceReport:
    """|E[G] - Q_n(G)| / |E[G]| for G = ||grad u||_{L2}."""
    _require(config, Experiment.SOURCE_QOI)
    mesh = structured_mesh(config.mesh_m)
    spec = config.field
    ref_rule = lattice_rule(config, config.qmc.reference_n)
    reference = _qoi_mean(config, mesh, spec, lattice_points(ref_rule), threads)
    flags: set = set()
    if reference == 0.0:
        flags.add("ZeroReference")
    errors, values = [], []
    for n in config.qmc.n_list:
        rule = ref_rule if n == ref_rule.n else lattice_rule(config, n)
        value = _qoi_mean(config, mesh, spec, lattice_points(rule), threads)
        diff = abs(value - reference)
        errors.append(diff if reference == 0.0 else diff / abs(reference))
        values.append(value)
    return ConvergenceReport(
        "n", list(config.qmc.n_list), errors, _rate_or_nan(config.qmc.n_list, errors, flags),
        _meta(config, reference=reference), {"qoi": values}, flags,
    )


def run_capacity(config: ExperimentConfig, threads: int = 1) -> ConvergenceReport:
    """|E[cap] - Q_n(cap)| / |E[cap]|, with the mean reciprocity defect |1 - cap cap_conj| per n."""
    _require(config, Experiment.CAPACITY)
    mesh = structured_mesh(config.mesh_m)
    spec = config.field
    ref_rule = lattice_rule(config, config.qmc.reference_n)
    reference, ref_recip = _capacity_mean(config, mesh, spec, lattice_points(ref_rule), threads)
    flags: set = set()
    errors, recips = [], []
    for n in config.qmc.n_list:
        rule = ref_rule if n == ref_rule.n else lattice_rule(config, n)
        value, recip = _capacity_mean(config, mesh, spec, lattice_points(rule), threads)
        errors.append(abs(value - reference) / abs(reference))
        recips.append(recip)
    return ConvergenceReport(
        "n", list(config.qmc.n_list), errors, _rate_or_nan(config.qmc.n_list, errors, flags),
        _meta(config, reference=reference, reference_reciprocity=ref_recip), {"reciprocity": recips}, flags,
    )


def run_dim_truncation(config: ExperimentConfig, threads: int = 1) -> ConvergenceReport:
    """||Q(u_{s_ref}) - Q(u_s)||_{L1} with one s_ref-dimensional rule; tail coordinates set to 0."""
    _require(config, Experiment.DIM_TRUNCATION)
    t = config.truncation
    mesh = structured_mesh(config.mesh_m)
    spec = config.field.with_s(t.s_ref)
    rule = lattice_rule(dataclasses.replace(config, field=spec), t.n, t.s_ref)
    pts = lattice_points(rule)
    reference = _source_mean(config, mesh, spec, pts, threads)
    errors = []
    for s in t.s_list:
        truncated = pts.copy()
        truncated[:, s:] = 0.0
        mean = reference if s == t.s_ref else _source_mean(config, mesh, spec, truncated, threads)
        errors.append(norms(mean - reference, mesh).l1)
    flags: set = set()
    # rate 2/p - 1 with p = 1/(theta - 1)
    expected = 2.0 * config.field.theta - 3.0
    return ConvergenceReport(
        "s", list(t.s_list), errors, _rate_or_nan(t.s_list, errors, flags), _meta(config), {}, flags, expected,
    )


def fem_sample_points(config: ExperimentConfig) -> np.ndarray:
    """The fixed small parameter set for the h-study: a CBC lattice with the smallest prime >= samples."""
    count = config.fem.samples
    if count == 1:
        return np.zeros((1, config.field.s))
    n = count
    while not isprime(n):
        n += 1
    return lattice_points(lattice_rule(config, n))[:count]


def run_fem_h(config: ExperimentConfig, threads: int = 1) -> ConvergenceReport:
    """Mean over the sample set of ||u_{h_ref} - u_h||_{L1(D_ref)}, coarse solutions prolonged to the reference mesh."""
    _require(config, Experiment.FEM_H)
    f = SOURCES[config.source]
    spec = config.field
    ys = fem_sample_points(config)
    fine = structured_mesh(config.fem.reference_m)

    def solve(mesh: Mesh) -> np.ndarray:
        return solve_source_batch(mesh, spec, ys, f, config.quadrature, batch_size=config.batch_size, threads=threads)

    ref = solve(fine)
    errors = []
    for m in config.fem.m_list:
        coarse = structured_mesh(m)
        vals = ref if m == fine.m else solve(coarse)
        per_sample = [norms(prolongate(v, coarse, fine) - r, fine).l1 for v, r in zip(vals, ref)]
        errors.append(math.fsum(per_sample) / len(per_sample))
    flags: set = set()
    return ConvergenceReport(
        "m", list(config.fem.m_list), errors, _rate_or_nan(config.fem.m_list, errors, flags), _meta(config), {}, flags, 2.0,
    )


RUNNERS = {
    Experiment.SOURCE_FIELD: run_source_field,
    Experiment.SOURCE_QOI: run_source_qoi,
    Experiment.CAPACITY: run_capacity,
    Experiment.DIM_TRUNCATION: run_dim_truncation,
    Experiment.FEM_H: run_fem_h,
}


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ConvergenceReport:
    return RUNNERS[config.experiment](config, threads)


def write_report_csv(path, report: ConvergenceReport, config: ExperimentConfig) -> None:
    cols = sorted(report.extra)
    lines = [f"# config: {config.canonical_json()}"]
    lines.append(",".join([report.axis_name, "error"] + cols))
    for k, (a, e) in enumerate(zip(report.axis_values, report.errors)):
        lines.append(",".join([str(a), repr(float(e))] + [repr(float(report.extra[c][k])) for c in cols]))
    lines.append(f"# fitted_rate: {report.fitted_rate!r}")
    if report.flags:
        lines.append(f"# flags: {','.join(sorted(report.flags))}")
    Path(path).write_text("\n".join(lines) + "\n")
