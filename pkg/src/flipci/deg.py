"""Per-gene differential-expression intervals under Poisson and negative binomial fits.

Each gene is regressed on the binary stage indicator with intercept,
gender and standardized age as nuisance covariates.  Intervals for the stage
coefficient are built with the sign-flip method and with Wald-type
baselines under both count models, and the agreement between the two
models is measured per method with :func:`overlap`.

File formats
------------
expression CSV : ``gene_id,<sample_1>,...,<sample_m>``; one gene per row,
    non-negative integer counts.
covariates CSV : ``sample_id,stage,gender,age[,log_offset]``; ``stage`` and
    ``gender`` are 0/1, ``age`` in years.
results CSV : ``gene_id,model,method,lower,upper,width,overlap,status``.
    Interval rows leave ``overlap`` empty; one extra row per method with
    ``model=poisson-vs-negbin`` carries the overlap value.
summary CSV : ``metric,model,method,value`` (long format, see
    :data:`SUMMARY_METRICS`).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import sandwich_interval, wald_interval
from .errors import ConvergenceError, FlipCIError, InputError
from .families import Family, estimate_theta_mom, negbin, poisson
from .flips import generate_flips
from .glm import DesignSplit, fit_full
from .intervals import ConfidenceInterval
from .inversion import CiConfig, flip_intervals
from .simulation import derive_seed

MODELS = ("poisson", "negbin")
PAIR = "poisson-vs-negbin"
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
RESULT_COLUMNS = ("gene_id", "model", "method", "lower", "upper", "width", "overlap", "status")
SUMMARY_COLUMNS = ("metric", "model", "method", "value")
SUMMARY_METRICS = (
    "genes_total", "genes_analyzed", "genes_skipped", "skipped_fraction", "skipped_warning",
    "amplitude_q05", "amplitude_q25", "amplitude_q50", "amplitude_q75", "amplitude_q95",
    "amplitude_mean", "amplitude_n", "amplitude_inf_count",
    "overlap_q05", "overlap_q25", "overlap_q50", "overlap_q75", "overlap_q95",
    "overlap_mean", "overlap_n", "mean_log_ratio_flip_vs_sandwich",
)
SKIP_WARNING_FRACTION = 0.2


def fmt(v) -> str:
    """Serialize a value for CSV output; floats keep 9 significant digits."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


@dataclass(frozen=True)
class ExpressionMatrix:
    gene_ids: tuple
    sample_ids: tuple
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64).reshape(len(self.gene_ids),
                                                           len(self.sample_ids))
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)


@dataclass(frozen=True)
class SampleCovariates:
    sample_ids: tuple
    stage: np.ndarray
    gender: np.ndarray
    age: np.ndarray
    log_offset: np.ndarray | None = None

    def nuisance(self) -> np.ndarray:
        """``[1, gender, standardized age]``."""
        sd = self.age.std(ddof=1) if self.age.size > 1 else 0.0
        age_std = (self.age - self.age.mean()) / sd if sd > 0 else self.age - self.age.mean()
        return np.column_stack([np.ones(self.age.size), self.gender, age_std])

    def reorder(self, sample_ids) -> SampleCovariates:
        index = {s: i for i, s in enumerate(self.sample_ids)}
        missing = [s for s in sample_ids if s not in index]
        if missing or len(sample_ids) != len(self.sample_ids):
            raise InputError(f"covariates do not match expression samples (missing: {missing[:5]})")
        order = np.array([index[s] for s in sample_ids], dtype=int)
        off = None if self.log_offset is None else self.log_offset[order]
        return SampleCovariates(tuple(sample_ids), self.stage[order], self.gender[order],
                                self.age[order], off)


def _parse_count(cell: str, where: str) -> int:
    s = cell.strip()
    try:
        v = int(s)
    except ValueError:
        try:
            f = float(s)
        except ValueError:
            raise InputError(f"{where}: invalid count {cell!r}") from None
        if not (math.isfinite(f) and f == int(f)):
            raise InputError(f"{where}: invalid count {cell!r}") from None
        v = int(f)
    if v < 0:
        raise InputError(f"{where}: negative count {cell!r}")
    return v


def load_expression(path) -> ExpressionMatrix:
    """Read an expression CSV, validating every cell."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if len(header) < 2:
            raise InputError(f"{path}: header needs gene_id and at least one sample")
        samples = tuple(h.strip() for h in header[1:])
        if len(set(samples)) != len(samples):
            raise InputError(f"{path}: duplicate sample ids in header")
        genes, rows, seen = [], [], set()
        for r, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            gid = row[0].strip()
            if gid in seen:
                raise InputError(f"{path}: row {r}: duplicate gene id {gid!r}")
            seen.add(gid)
            genes.append(gid)
            rows.append([_parse_count(c, f"{path}: row {r}, column {j + 2} "
                                         f"(gene {gid}, sample {samples[j]})")
                         for j, c in enumerate(row[1:])])
    counts = np.array(rows, dtype=np.int64).reshape(len(genes), len(samples))
    return ExpressionMatrix(tuple(genes), samples, counts)


def load_covariates(path) -> SampleCovariates:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        cols = reader.fieldnames or []
        need = ["sample_id", "stage", "gender", "age"]
        if cols[:4] != need:
            raise InputError(f"{path}: header must start with {','.join(need)}")
        has_off = "log_offset" in cols
        ids, stage, gender, age, off = [], [], [], [], []
        for r, row in enumerate(reader, start=2):
            sid = row["sample_id"].strip()
            for name, dest, binary in (("stage", stage, True), ("gender", gender, True),
                                       ("age", age, False)):
                try:
                    val = float(row[name])
                except (TypeError, ValueError):
                    raise InputError(f"{path}: row {r}, column {name}: "
                                     f"invalid value {row[name]!r}") from None
                if binary and val not in (0.0, 1.0):
                    raise InputError(f"{path}: row {r}, column {name}: must be 0 or 1")
                if not math.isfinite(val):
                    raise InputError(f"{path}: row {r}, column {name}: not finite")
                dest.append(val)
            if has_off:
                try:
                    off.append(float(row["log_offset"]))
                except (TypeError, ValueError):
                    raise InputError(f"{path}: row {r}, column log_offset: "
                                     f"invalid value {row['log_offset']!r}") from None
            ids.append(sid)
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate sample ids")
    return SampleCovariates(tuple(ids), np.array(stage), np.array(gender), np.array(age),
                            np.array(off) if has_off else None)


def overlap(a, b) -> float:
    """Agreement of two intervals: ``2 * |a & b| / (|a| + |b|)``.

    ``a`` and ``b`` are :class:`ConfidenceInterval` objects or
    ``(lower, upper)`` pairs.  Returns NaN when either interval is infinite;
    two identical zero-width intervals give 1.
    """
    la, ua = (a.lower, a.upper) if isinstance(a, ConfidenceInterval) else a
    lb, ub = (b.lower, b.upper) if isinstance(b, ConfidenceInterval) else b
    if not all(math.isfinite(v) for v in (la, ua, lb, ub)):
        return math.nan
    num = 2 * max(0, min(ua, ub) - max(la, lb))
    den = (ua - la) + (ub - lb)
    if den == 0:
        return 1.0 if (la, ua) == (lb, ub) else 0.0
    return num / den


@dataclass(frozen=True)
class DegConfig:
    level: float = 0.95
    w: int = 1000
    seed: int = 0
    theta: float | None = None
    symmetric: bool = False
    min_per_group: int = 10
    standardized: bool = True
    small_sample: bool = False

    @property
    def methods(self) -> tuple:
        flip = ("flip-equitailed", "flip-symmetric") if self.symmetric else ("flip-equitailed",)
        return flip + ("wald", "sandwich")


@dataclass
class GeneResult:
    gene_id: str
    intervals: dict = field(default_factory=dict)
    overlaps: dict = field(default_factory=dict)
    status: str = "ok"
    theta: float | None = None


def _model_intervals(family: Family, y, design, config: DegConfig, ensemble):
    fit = fit_full(family, y, design)
    cfg = CiConfig(level=config.level, w=config.w, standardized=config.standardized)
    kinds = ("equitailed", "symmetric") if config.symmetric else ("equitailed",)
    out = flip_intervals(family, y, design, cfg, ensemble=ensemble, full_fit=fit,
                         methods=kinds)
    alpha = 1.0 - config.level
    out["wald"] = wald_interval(fit, alpha)
    out["sandwich"] = sandwich_interval(fit, design, alpha, config.small_sample)
    return out


def analyze_gene(gene_id: str, counts, covariates: SampleCovariates,
                 config: DegConfig | None = None) -> GeneResult:
    """Intervals for the stage effect of one gene under both count models."""
    config = config or DegConfig()
    y = np.asarray(counts, dtype=float)
    res = GeneResult(str(gene_id))
    if not np.any(y > 0):
        res.status = "skipped(all-zero)"
        return res
    n1 = int(np.sum(covariates.stage == 1))
    if min(n1, y.size - n1) < config.min_per_group:
        res.status = "skipped(small-group)"
        return res
    try:
        design = DesignSplit(covariates.stage, covariates.nuisance(), covariates.log_offset)
    except FlipCIError as err:
        res.status = f"skipped(design:{err})"
        return res
    theta = config.theta if config.theta is not None else estimate_theta_mom(y)
    res.theta = theta
    ensemble = generate_flips(y.size, config.w, derive_seed(config.seed, "gene", res.gene_id))
    for model, family in (("poisson", poisson()), ("negbin", negbin(theta))):
        try:
            for method, ci in _model_intervals(family, y, design, config, ensemble).items():
                res.intervals[(model, method)] = ci
        except (FlipCIError, ConvergenceError):
            res.status = f"skipped(fit-failure:{model})"
            return res
    for method in config.methods:
        res.overlaps[method] = overlap(res.intervals[("poisson", method)],
                                       res.intervals[("negbin", method)])
    return res


def result_rows(res: GeneResult, config: DegConfig):
    if not res.intervals and res.status != "ok":
        yield (res.gene_id, "", "", None, None, None, None, res.status)
        return
    for model in MODELS:
        for method in config.methods:
            ci = res.intervals.get((model, method))
            if ci is not None:
                yield (res.gene_id, model, method, ci.lower, ci.upper, ci.width, None, res.status)
    for method, ov in res.overlaps.items():
        yield (res.gene_id, PAIR, method, None, None, None, ov, res.status)


def _quantiles(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return [math.nan] * len(QUANTILES)
    return list(np.quantile(v, QUANTILES))


def summary_rows(results: list[GeneResult], config: DegConfig):
    total = len(results)
    ok = [r for r in results if r.status == "ok"]
    skipped = total - len(ok)
    frac = skipped / total if total else 0.0
    yield ("genes_total", "", "", total)
    yield ("genes_analyzed", "", "", len(ok))
    yield ("genes_skipped", "", "", skipped)
    yield ("skipped_fraction", "", "", frac)
    yield ("skipped_warning", "", "", int(frac > SKIP_WARNING_FRACTION))
    for model in MODELS:
        for method in config.methods:
            widths = np.array([r.intervals[(model, method)].width for r in ok])
            finite = widths[np.isfinite(widths)]
            for q, val in zip(QUANTILES, _quantiles(finite)):
                yield (f"amplitude_q{int(round(q * 100)):02d}", model, method, val)
            yield ("amplitude_mean", model, method, float(finite.mean()) if finite.size else math.nan)
            yield ("amplitude_n", model, method, int(finite.size))
            yield ("amplitude_inf_count", model, method, int(widths.size - finite.size))
    for method in config.methods:
        ov = np.array([r.overlaps[method] for r in ok], dtype=float)
        ov = ov[~np.isnan(ov)]
        for q, val in zip(QUANTILES, _quantiles(ov)):
            yield (f"overlap_q{int(round(q * 100)):02d}", PAIR, method, val)
        yield ("overlap_mean", PAIR, method, float(ov.mean()) if ov.size else math.nan)
        yield ("overlap_n", PAIR, method, int(ov.size))
    for model in MODELS:
        ratios = []
        for r in ok:
            wf = r.intervals[(model, "flip-equitailed")].width
            ws = r.intervals[(model, "sandwich")].width
            if math.isfinite(wf) and wf > 0 and ws > 0:
                ratios.append(math.log(wf / ws))
        yield ("mean_log_ratio_flip_vs_sandwich", model, "flip-equitailed",
               float(np.mean(ratios)) if ratios else math.nan)


def _analyze_chunk(args):
    items, covariates, config = args
    return [analyze_gene(g, c, covariates, config) for g, c in items]


def analyze_matrix(expr: ExpressionMatrix, covariates: SampleCovariates,
                   config: DegConfig | None = None, n_jobs: int = 1) -> list[GeneResult]:
    """Analyze every gene; results come back in input gene order."""
    config = config or DegConfig()
    covariates = covariates.reorder(expr.sample_ids)
    items = list(zip(expr.gene_ids, expr.counts))
    if n_jobs <= 1 or len(items) < 2:
        return [analyze_gene(g, c, covariates, config) for g, c in items]
    chunks = [items[i::n_jobs] for i in range(n_jobs)]
    with ProcessPoolExecutor(n_jobs) as pool:
        parts = list(pool.map(_analyze_chunk, [(c, covariates, config) for c in chunks]))
    out = [None] * len(items)
    for i, part in enumerate(parts):
        out[i::n_jobs] = part
    return out


def _write(path, columns, rows, header_lines):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for row in rows:
            wr.writerow([fmt(v) for v in row])


def run_pipeline(expression_path, covariates_path, results_path, summary_path,
                 config: DegConfig | None = None, n_jobs: int = 1, header_lines=()):
    """Load inputs, analyze all genes, write the results and summary CSVs."""
    config = config or DegConfig()
    expr = load_expression(expression_path)
    cov = load_covariates(covariates_path)
    results = analyze_matrix(expr, cov, config, n_jobs)
    _write(results_path, RESULT_COLUMNS,
           (row for r in results for row in result_rows(r, config)), header_lines)
    summary = list(summary_rows(results, config))
    _write(summary_path, SUMMARY_COLUMNS, summary, header_lines)
    return results, summary


def synthetic_corpus(n_genes: int, n_samples: int, seed: int = 0, theta=(None, 0.5, 2.0),
                     stage_effect_sd: float = 0.3, base_log_mean: float = 3.0):
    """Simulated expression matrix and covariates for testing the pipeline.

    Gene ``g`` uses ``theta[g % len(theta)]`` as negative-binomial size
    (``None`` means Poisson counts).
    """
    rng = np.random.default_rng(derive_seed(seed, "corpus"))
    samples = tuple(f"S{j:04d}" for j in range(n_samples))
    stage = (np.arange(n_samples) % 2).astype(float)
    rng.shuffle(stage)
    gender = rng.integers(0, 2, n_samples).astype(float)
    age = np.round(rng.normal(60, 12, n_samples), 1)
    cov = SampleCovariates(samples, stage, gender, age)
    Z = cov.nuisance()
    genes, rows = [], []
    for g in range(n_genes):
        beta = rng.normal(0, stage_effect_sd)
        gamma = np.array([base_log_mean + rng.normal(0, 0.5), rng.normal(0, 0.2),
                          rng.normal(0, 0.2)])
        mu = np.exp(stage * beta + Z @ gamma)
        th = theta[g % len(theta)]
        y = rng.poisson(mu) if th is None else rng.negative_binomial(th, th / (th + mu))
        genes.append(f"G{g:05d}")
        rows.append(y)
    return ExpressionMatrix(tuple(genes), samples, np.array(rows)), cov


def write_expression(path, expr: ExpressionMatrix):
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("gene_id",) + expr.sample_ids)
        for g, row in zip(expr.gene_ids, expr.counts):
            wr.writerow([g] + [str(int(v)) for v in row])


def write_covariates(path, cov: SampleCovariates):
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        cols = ["sample_id", "stage", "gender", "age"]
        if cov.log_offset is not None:
            cols.append("log_offset")
        wr.writerow(cols)
        for j, s in enumerate(cov.sample_ids):
            row = [s, int(cov.stage[j]), int(cov.gender[j]), fmt(float(cov.age[j]))]
            if cov.log_offset is not None:
                row.append(fmt(float(cov.log_offset[j])))
            wr.writerow(row)
