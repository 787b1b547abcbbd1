"""eps-sweeps, log-log rate fits, the naive-mean negative control and report files."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from . import field as fld
from .cell import DEFAULT_TOL, CellSolutionSet, HomogenizedMatrix, cached_cells, homogenize, solve_all_cells
from .operators import CoefficientMatrix, estimate_garding, load_problem, validate_ellipticity
from .resolvent import TorusProblem, build_bundle, error_report, make_rhs

log = logging.getLogger(__name__)

SLOPE_THRESHOLD = 0.9
CONTROL_MAX_SLOPE = 0.3
CONTROL_MIN_GAP = 0.5
FLOOR_FACTOR = 10.0
COLUMNS = ("l2_u", "hm_vhat", "hm_steklov")
CSV_FIELDS = ("k", "eps", "l2_u", "hm_vhat", "hm_steklov", "hm_v", "ratio_l2_u", "ratio_hm_vhat",
              "ratio_hm_steklov", "residual", "iterations", "status")


class DegenerateFitError(ValueError):
    """Some errors sit at the solver floor, so the slope would fit round-off."""


@dataclass
class SweepConfig:
    problem: str
    ks: list[int]
    lam: str | float = "auto"
    f: dict | None = None
    cell_cutoff: int | None = None
    output_dir: str | None = None
    seed: int = 0
    tol: float = DEFAULT_TOL
    width: int = 1
    plot: bool = False
    gate: tuple[str, ...] = COLUMNS
    use_cache: bool = True

    def __post_init__(self):
        self.ks = [int(k) for k in self.ks]
        if not self.ks:
            raise ValueError("the k list is empty")
        if any(k < 2 for k in self.ks):
            raise ValueError(f"all k must be >= 2, got {self.ks}")
        if any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise ValueError(f"the k list must be strictly increasing, got {self.ks}")
        if isinstance(self.lam, str) and self.lam != "auto":
            self.lam = float(self.lam)
        self.gate = tuple(self.gate)
        bad = set(self.gate) - set(COLUMNS)
        if bad:
            raise ValueError(f"unknown gated columns {sorted(bad)}")
        if self.width < 1:
            raise ValueError("width must be at least 1")

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "SweepConfig":
        data = dict(data)
        problem = str(data.pop("problem"))
        if base is not None and (base / problem).exists():
            problem = str(base / problem)
        out = data.pop("output_dir", data.pop("output", None))
        if out is not None and base is not None and not Path(out).is_absolute():
            out = str(base / out)
        ks = data.pop("k", data.pop("ks", None))
        lam = data.pop("lambda", data.pop("lam", "auto"))
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown sweep config keys {sorted(extra)}")
        return cls(problem=problem, ks=ks, lam=lam, output_dir=out, **data)

    @classmethod
    def from_file(cls, path) -> "SweepConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base=path.parent)

    def rhs_spec(self) -> dict:
        spec = dict(self.f or {"kind": "random"})
        if spec.get("kind", "random") == "random":
            spec.setdefault("seed", self.seed)
        return spec

    def to_dict(self) -> dict:
        """Settings that determine the numbers; the output location is left out so
        that reports written to different directories are byte-identical."""
        out = asdict(self)
        out.pop("output_dir")
        out["gate"] = list(self.gate)
        return out


@dataclass
class SlopeFit:
    slope: float | None
    residual: float | None = None
    ci95: float | None = None
    points: int = 0
    note: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConvergenceReport:
    problem: str
    problem_hash: str
    lam: float
    lambda2: float
    cell_cutoff: int
    rows: list[dict]
    slopes: dict[str, SlopeFit]
    pass_flags: dict[str, bool]
    threshold: float = SLOPE_THRESHOLD
    degenerate: bool = False
    notes: list[str] = field(default_factory=list)
    version: str = __version__
    config: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.pass_flags) and all(self.pass_flags.values())

    def as_dict(self) -> dict:
        return {
            "problem": self.problem,
            "problem_hash": self.problem_hash,
            "lambda": self.lam,
            "lambda2": self.lambda2,
            "resolutions": {"cell_cutoff": self.cell_cutoff,
                            "torus_cutoff": {str(r["k"]): r["k"] * self.cell_cutoff for r in self.rows}},
            "rows": self.rows,
            "slopes": {k: v.as_dict() for k, v in self.slopes.items()},
            "pass_flags": self.pass_flags,
            "passed": self.passed,
            "threshold": self.threshold,
            "degenerate": self.degenerate,
            "notes": self.notes,
            "version": self.version,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow([_cell(r.get(name)) for name in CSV_FIELDS])
        return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def fit_slope(points, tol: float = DEFAULT_TOL, floor_factor: float = FLOOR_FACTOR) -> tuple[float, float]:
    """Least-squares slope of ``log error`` against ``log eps`` and the RMS log residual.

    Errors must be relative to the data size (``error / ||f||``) for the floor
    guard ``error > floor_factor * tol`` to be meaningful.
    """
    pts = [(float(e), float(r)) for e, r in points]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points for a slope, got {len(pts)}")
    floor = floor_factor * tol
    low = [r for _, r in pts if not r > floor]
    if low:
        raise DegenerateFitError(f"{len(low)} error(s) at or below the floor {floor:.1e}; rerun with a smaller tol")
    x = np.log([e for e, _ in pts])
    y = np.log([r for _, r in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return float(slope), float(math.sqrt(np.mean(resid ** 2)))


def _ci95(points, slope: float) -> float:
    x = np.log([e for e, _ in points])
    y = np.log([r for _, r in points])
    n = len(x)
    if n < 3:
        return math.nan
    intercept = np.mean(y) - slope * np.mean(x)
    s2 = float(np.sum((y - slope * x - intercept) ** 2)) / (n - 2)
    se = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
    return float(stats.t.ppf(0.975, n - 2) * se)


def _fit_column(rows: list[dict], column: str, tol: float) -> SlopeFit:
    ok = [r for r in rows if r["status"] == "ok"]
    pts = [(r["eps"], r[column] / r["f_norm"]) for r in ok]
    if len(pts) < 3:
        return SlopeFit(None, points=len(pts), note="fewer than 3 successful rows")
    floor = FLOOR_FACTOR * tol
    if all(not v > floor for _, v in pts):
        return SlopeFit(None, points=len(pts), note="degenerate: errors at solver floor")
    try:
        slope, resid = fit_slope(pts, tol)
    except DegenerateFitError as exc:
        return SlopeFit(None, points=len(pts), note=f"degenerate fit: {exc}")
    return SlopeFit(slope, resid, _ci95(pts, slope), len(pts))


def naive_homogenized(a: CoefficientMatrix) -> HomogenizedMatrix:
    """The cell averages ``<a_ab>`` in place of the homogenized matrix."""
    return HomogenizedMatrix(a.d, a.m, {key: fld.mean(f) for key, f in a.entries.items()})


def _row(a, k, f, cells, hat, lam, tol, lambda2) -> dict:
    row = {"k": k, "eps": 1.0 / k}
    try:
        p = TorusProblem.build(a, k, f, cells.cutoff, None if lam == "auto" else lam, tol, lambda2)
        bundle = build_bundle(p, hat, cells)
        rep = error_report(bundle)
    except Exception as exc:  # recorded, the row is dropped from the fit
        log.warning("row k=%d failed: %s", k, exc)
        row.update(status=f"failed: {type(exc).__name__}: {exc}")
        return row
    row.update(
        l2_u=rep.l2_u, hm_vhat=rep.hm_vhat, hm_steklov=rep.hm_steklov, hm_v=rep.hm_v, f_norm=rep.f_norm,
        ratio_l2_u=rep.ratios["l2_u"], ratio_hm_vhat=rep.ratios["hm_vhat"],
        ratio_hm_steklov=rep.ratios["hm_steklov"], residual=bundle.info["residual"],
        iterations=bundle.info["iterations"], lam=p.lam, status="ok",
    )
    return row


@dataclass
class _Prepared:
    a: CoefficientMatrix
    cells: CellSolutionSet
    hat: HomogenizedMatrix
    lambda2: float
    f: object


def _prepare(cfg: SweepConfig) -> _Prepared:
    a = load_problem(cfg.problem)
    report = validate_ellipticity(a, garding_cutoff=False)
    if not report.ok:
        raise ValueError(f"problem {cfg.problem} fails the ellipticity check: {report.as_dict()}")
    if cfg.use_cache:
        cells, _ = cached_cells(a, cfg.cell_cutoff, cfg.tol)
    else:
        cells = solve_all_cells(a, cfg.cell_cutoff, cfg.tol)
    return _Prepared(a, cells, homogenize(a, cells), estimate_garding(a), make_rhs(cfg.rhs_spec(), a.d))


def _sweep(cfg: SweepConfig, prep: _Prepared, hat: HomogenizedMatrix, gate) -> ConvergenceReport:
    def one(k):
        return _row(prep.a, k, prep.f, prep.cells, hat, cfg.lam, cfg.tol, prep.lambda2)

    if cfg.width > 1:
        with ThreadPoolExecutor(cfg.width) as pool:
            rows = list(pool.map(one, cfg.ks))
    else:
        rows = [one(k) for k in cfg.ks]
    slopes = {c: _fit_column(rows, c, cfg.tol) for c in COLUMNS}
    notes = [f"{c}: {s.note}" for c, s in slopes.items() if s.note]
    degenerate = any(s.note.startswith("degenerate: errors at solver floor") for s in slopes.values())
    flags = {}
    for c in gate:
        s = slopes[c]
        if s.note.startswith("degenerate: errors at solver floor"):
            flags[c] = True  # the error bound holds trivially
        else:
            flags[c] = s.slope is not None and s.slope >= SLOPE_THRESHOLD
    lam_used = next((r["lam"] for r in rows if r["status"] == "ok"), math.nan)
    return ConvergenceReport(
        problem=str(cfg.problem), problem_hash=prep.a.digest(), lam=lam_used, lambda2=prep.lambda2,
        cell_cutoff=prep.cells.cutoff, rows=rows, slopes=slopes, pass_flags=flags, degenerate=degenerate,
        notes=notes, config=cfg.to_dict(),
    )


def run_sweep(cfg: SweepConfig, write: bool = True) -> ConvergenceReport:
    """Solve the eps- and homogenized problems for every k, fit the rates and
    write ``sweep.csv``, ``report.json`` (and ``sweep.svg`` if asked) to the output directory."""
    prep = _prepare(cfg)
    report = _sweep(cfg, prep, prep.hat, cfg.gate)
    if write and cfg.output_dir:
        write_report(report, cfg.output_dir, plot=cfg.plot)
    return report


@dataclass
class ControlReport:
    real: ConvergenceReport
    control: ConvergenceReport
    coincident: bool
    real_slope: float | None
    control_slope: float | None
    passed: bool
    column: str = "l2_u"

    def as_dict(self) -> dict:
        return {
            "column": self.column,
            "real_slope": self.real_slope,
            "control_slope": self.control_slope,
            "coincident": self.coincident,
            "passed": self.passed,
            "max_control_slope": CONTROL_MAX_SLOPE,
            "min_gap": CONTROL_MIN_GAP,
            "control_rows": self.control.rows,
        }


def negative_control(cfg: SweepConfig, real: ConvergenceReport | None = None) -> ControlReport:
    """Rerun the sweep with the naive averages ``<a_ab>`` in place of the homogenized matrix.

    The control passes when its L2 slope stays below 0.3 and the real slope
    exceeds it by at least 0.5.
    """
    prep = _prepare(cfg)
    real = real or _sweep(cfg, prep, prep.hat, cfg.gate)
    naive = naive_homogenized(prep.a)
    keys = set(naive.entries) | set(prep.hat.entries)
    coincident = all(abs(naive[key] - prep.hat[key]) <= 1e-12 * max(1.0, abs(prep.hat[key])) for key in keys)
    control = _sweep(cfg, prep, naive, ("l2_u",))
    rs, cs = real.slopes["l2_u"].slope, control.slopes["l2_u"].slope
    passed = (not coincident and rs is not None and cs is not None
              and cs < CONTROL_MAX_SLOPE and rs - cs >= CONTROL_MIN_GAP)
    return ControlReport(real, control, coincident, rs, cs, passed)


def write_report(report: ConvergenceReport, directory, plot: bool = False) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"csv": directory / "sweep.csv", "json": directory / "report.json"}
    paths["csv"].write_text(report.to_csv())
    paths["json"].write_text(report.to_json())
    if plot:
        paths["svg"] = directory / "sweep.svg"
        plot_report(report, paths["svg"])
    return paths


def plot_report(report: ConvergenceReport, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "higherhom"

    ok = [r for r in report.rows if r["status"] == "ok"]
    fig, ax = plt.subplots(figsize=(5, 4))
    eps = np.array([r["eps"] for r in ok])
    for c in COLUMNS:
        vals = np.array([r[c] for r in ok])
        if np.all(vals > 0):
            s = report.slopes[c].slope
            label = f"{c} (slope {s:.2f})" if s is not None else c
            ax.loglog(eps, vals, "o-", label=label)
    if len(eps):
        ax.loglog(eps, eps * max((r["l2_u"] for r in ok), default=1.0) / eps.max(), "k--", lw=0.8, label="O(eps)")
    ax.set_xlabel("eps")
    ax.set_ylabel("error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    # fixed metadata keeps the file reproducible
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
