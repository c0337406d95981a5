"""Experiment registry: sweeps, engine runs and result emission."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import __version__
from ..cascade_fixed import fixed_lti_run
from ..cascade_lti import iterate_to_fixed_point, lti_model_from_ensemble
from ..cascade_mc import CascadeOverflowError, FixedSource, PoissonSource, SweepPoint, monte_carlo
from ..dists import AliasingError, GridError
from ..ensemble import Ensemble, LawSpec
from ..netgen import EdgeTypeLaw, poisson_law
from .config import ConfigError, ExperimentConfig
from .eu import build_eu_skeleton, eu_analytic_model
from .modelfile import ModelFileError, read_model
from .tables import write_table, write_yaml

log = logging.getLogger(__name__)

GUARD_ERRORS = (AliasingError, CascadeOverflowError, GridError, FloatingPointError)

# Stylised Poisson-network parameters
EXP1_DELTA = 0.04
EXP1_SIGMA = 0.035
EXP1_OMEGA_MEAN = 0.2
EXP1_OMEGA_CV = 0.383


def exp1_ensemble(p0: float = 0.01, delta: float = EXP1_DELTA, sigma: float = EXP1_SIGMA) -> Ensemble:
    """Fixed buffers; exposure mean 0.2 / j of the creditor, std 0.383 of the mean."""
    omega = LawSpec(EXP1_OMEGA_MEAN, EXP1_OMEGA_CV * EXP1_OMEGA_MEAN, j_power=-1.0)
    return Ensemble(LawSpec(delta), LawSpec(sigma), omega, p0=p0, name="exp1")


def exp2b_ensemble(p0: float = 0.01) -> Ensemble:
    """Log-normal buffers; exposures proportional to (j k)**-0.5 with unit network average."""
    return Ensemble(
        LawSpec(0.18, 0.18),
        LawSpec(0.12, 0.12),
        LawSpec(1.0, 1.0, j_power=-0.5, k_power=-0.5),
        p0=p0,
        normalize_omega=True,
        name="exp2b",
    )


# --------------------------------------------------------------------------
# results


@dataclass
class AnalyticCurve:
    engine: str
    iterations: np.ndarray
    default: np.ndarray
    stress: np.ndarray
    converged: np.ndarray


@dataclass
class McCurve:
    default: np.ndarray  # (trials, points)
    stress: np.ndarray
    steps: np.ndarray

    def aggregate(self) -> dict[str, np.ndarray]:
        d, s = self.default, self.stress
        return {
            "mean_default": d.mean(axis=0),
            "p10_default": np.percentile(d, 10, axis=0),
            "p90_default": np.percentile(d, 90, axis=0),
            "mean_stress": s.mean(axis=0),
            "p10_stress": np.percentile(s, 10, axis=0),
            "p90_stress": np.percentile(s, 90, axis=0),
        }


@dataclass
class Sweep:
    """One swept family of points and the curves every engine produced on it."""

    name: str
    figure: str
    axes: tuple[str, ...]
    coords: np.ndarray  # (points, len(axes)); the last axis is always lambda
    analytic: AnalyticCurve | None = None
    mc: McCurve | None = None
    nodes: int | None = None  # set when figure values are bank counts
    aborted: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.coords.shape[0]


@dataclass
class RunResult:
    config: ExperimentConfig
    sweeps: list[Sweep]
    summary: dict

    @property
    def guard_aborts(self) -> list[str]:
        return [a for s in self.sweeps for a in s.aborted]


def knife_edge(x, y) -> dict | None:
    """Adjacent grid pair with the largest jump in ``y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = ~np.isnan(y)
    x, y = x[ok], y[ok]
    if x.size < 2:
        return None
    jumps = np.abs(np.diff(y))
    i = int(np.argmax(jumps))
    return {"lo": float(x[i]), "hi": float(x[i + 1]), "index": i, "jump": float(jumps[i])}


def crossovers(x, default, stress) -> list[float]:
    """Points where ``default - stress`` changes sign, by linear interpolation."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(default, dtype=float) - np.asarray(stress, dtype=float)
    out = []
    for i in range(x.size - 1):
        a, b = g[i], g[i + 1]
        if np.isnan(a) or np.isnan(b):
            continue
        if a == 0 and (i == 0 or g[i - 1] != 0):
            out.append(float(x[i]))
        elif a * b < 0:
            out.append(float(x[i] + (x[i + 1] - x[i]) * a / (a - b)))
    if x.size and g[-1] == 0 and (x.size == 1 or g[-2] != 0):
        out.append(float(x[-1]))
    return out


# --------------------------------------------------------------------------
# engines over sweeps


def _analytic(engine: str, n: int, run_point: Callable[[int], tuple], labels: list[str], aborted: list[str]) -> AnalyticCurve:
    it = np.full(n, -1, dtype=np.int64)
    d = np.full(n, np.nan)
    s = np.full(n, np.nan)
    conv = np.zeros(n, dtype=bool)
    for i in range(n):
        try:
            it[i], d[i], s[i], conv[i] = run_point(i)
        except GUARD_ERRORS as exc:
            msg = f"{engine} at {labels[i]}: {exc}"
            log.error("numerical guard aborted sweep point %s", msg)
            aborted.append(msg)
        else:
            log.info("%s %s: iterations %d, default %.6g, stress %.6g", engine, labels[i], it[i], d[i], s[i])
    return AnalyticCurve(engine, it, d, s, conv)


def _lti_point(ens: Ensemble, P, Q, lam: float, cfg: ExperimentConfig):
    model = lti_model_from_ensemble(ens, P, Q, lam, cfg.grid_step, cfg.M, mode=cfg.mode)
    r = iterate_to_fixed_point(model, tol=cfg.tol, max_iter=cfg.max_iter)
    return r.iterations, r.default_frac, r.stress_frac, r.converged


def _mc(source, laws, points, cfg: ExperimentConfig, master_seed, aborted, seeding="atoms") -> McCurve | None:
    try:
        r = monte_carlo(source, laws, points, cfg.trials, master_seed, seeding=seeding, workers=cfg.workers)
    except GUARD_ERRORS as exc:
        msg = f"mc: {exc}"
        log.error("numerical guard aborted Monte Carlo sweep: %s", msg)
        aborted.append(msg)
        return None
    return McCurve(r.default_frac, r.stress_frac, r.steps)


def _labels(axes, coords) -> list[str]:
    return [", ".join(f"{a}={v:g}" for a, v in zip(axes, row)) for row in coords]


def _lambda_sweep(name, figure, lambdas) -> Sweep:
    return Sweep(name, figure, ("lambda",), np.array(lambdas, dtype=float).reshape(-1, 1))


def run_exp1(cfg: ExperimentConfig) -> list[Sweep]:
    ens = exp1_ensemble(cfg.p0)
    sw = _lambda_sweep("exp1", "fig3", cfg.lambdas)
    if "lti" in cfg.engines:
        P = poisson_law(cfg.z, cfg.K)
        Q = EdgeTypeLaw.independent(P)
        sw.analytic = _analytic(
            "lti", sw.size, lambda i: _lti_point(ens, P, Q, cfg.lambdas[i], cfg), _labels(sw.axes, sw.coords), sw.aborted
        )
    if "mc" in cfg.engines:
        sw.mc = _mc(PoissonSource(cfg.N, cfg.z), ens, list(cfg.lambdas), cfg, cfg.seed, sw.aborted)
    return [sw]


def run_exp2a(cfg: ExperimentConfig) -> list[Sweep]:
    out = []
    P = poisson_law(cfg.z, cfg.K)
    Q = EdgeTypeLaw.independent(P)
    base = exp1_ensemble(cfg.p0)
    for axis, grid, figure, base_value in (
        ("delta", cfg.delta_grid, "fig4a", EXP1_DELTA),
        ("sigma", cfg.sigma_grid, "fig4b", EXP1_SIGMA),
    ):
        if not grid:
            continue
        coords = np.array([(b, lam) for b in grid for lam in cfg.lambdas], dtype=float).reshape(-1, 2)
        sw = Sweep(f"exp2a_{axis}", figure, (axis, "lambda"), coords)

        def ens_at(b, axis=axis):
            return exp1_ensemble(cfg.p0, delta=b) if axis == "delta" else exp1_ensemble(cfg.p0, sigma=b)

        if "lti" in cfg.engines:
            sw.analytic = _analytic(
                "lti",
                sw.size,
                lambda i, sw=sw, ens_at=ens_at: _lti_point(ens_at(sw.coords[i, 0]), P, Q, sw.coords[i, 1], cfg),
                _labels(sw.axes, coords),
                sw.aborted,
            )
        if "mc" in cfg.engines:
            pts = [
                SweepPoint(lam, b / base_value, 1.0) if axis == "delta" else SweepPoint(lam, 1.0, b / base_value)
                for b, lam in coords
            ]
            sw.mc = _mc(PoissonSource(cfg.N, cfg.z), base, pts, cfg, cfg.seed, sw.aborted)
        out.append(sw)
    return out


def _sub_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(i)]).generate_state(1, np.uint32)[0])


def run_exp2b(cfg: ExperimentConfig) -> list[Sweep]:
    ens = exp2b_ensemble(cfg.p0)
    coords = np.array([(z, lam) for z in cfg.z_grid for lam in cfg.lambdas], dtype=float).reshape(-1, 2)
    sw = Sweep("exp2b", "fig5", ("z", "lambda"), coords)
    if "lti" in cfg.engines:
        laws = {}
        for z in cfg.z_grid:
            P = poisson_law(z, cfg.K)
            laws[z] = (P, EdgeTypeLaw.independent(P))

        def point(i):
            z, lam = coords[i]
            return _lti_point(ens, *laws[float(z)], lam, cfg)

        sw.analytic = _analytic("lti", sw.size, point, _labels(sw.axes, coords), sw.aborted)
    if "mc" in cfg.engines:
        parts = []
        for zi, z in enumerate(cfg.z_grid):
            part = _mc(PoissonSource(cfg.N, z), ens, list(cfg.lambdas), cfg, _sub_seed(cfg.seed, zi), sw.aborted)
            if part is None:
                parts = None
                break
            parts.append(part)
        if parts:
            sw.mc = McCurve(
                np.concatenate([p.default for p in parts], axis=1),
                np.concatenate([p.stress for p in parts], axis=1),
                np.concatenate([p.steps for p in parts], axis=1),
            )
    return [sw]


def _eu_setup(cfg: ExperimentConfig):
    cal = cfg.calibration()
    g = build_eu_skeleton(cal, cfg.eu_seed)
    return cal, g


def run_exp3a(cfg: ExperimentConfig) -> list[Sweep]:
    cal, g = _eu_setup(cfg)
    sw = _lambda_sweep("exp3a", "fig6a", cfg.lambdas)
    sw.nodes = g.N
    if "fixed" in cfg.engines:

        def point(i):
            model = eu_analytic_model(cal, g, cfg.lambdas[i], cfg.p0, cfg.grid_step, cfg.M, delta_factor=cfg.delta_factor)
            r = fixed_lti_run(model, tol=cfg.tol, max_iter=cfg.max_iter)
            return r.iterations, r.default_frac, r.stress_frac, r.converged

        sw.analytic = _analytic("fixed", sw.size, point, _labels(sw.axes, sw.coords), sw.aborted)
    if "mc" in cfg.engines:
        pts = [SweepPoint(lam, cfg.delta_factor, 1.0) for lam in cfg.lambdas]
        sw.mc = _mc(FixedSource(g), cal.ensemble(0.0), pts, cfg, cfg.seed, sw.aborted, seeding="single")
    return [sw]


def run_exp3b(cfg: ExperimentConfig) -> list[Sweep]:
    cal, g = _eu_setup(cfg)
    coords = np.array([(f, lam) for f in cfg.sigma_grid for lam in cfg.lambdas], dtype=float).reshape(-1, 2)
    sw = Sweep("exp3b", "fig6b", ("sigma_fraction", "lambda"), coords)
    sw.nodes = g.N
    if "fixed" in cfg.engines:

        def point(i):
            f, lam = coords[i]
            model = eu_analytic_model(cal, g, lam, cfg.p0, cfg.grid_step, cfg.M, delta_factor=cfg.delta_factor, sigma_factor=f)
            r = fixed_lti_run(model, tol=cfg.tol, max_iter=cfg.max_iter)
            return r.iterations, r.default_frac, r.stress_frac, r.converged

        sw.analytic = _analytic("fixed", sw.size, point, _labels(sw.axes, coords), sw.aborted)
    if "mc" in cfg.engines:
        pts = [SweepPoint(lam, cfg.delta_factor, f) for f, lam in coords]
        sw.mc = _mc(FixedSource(g), cal.ensemble(0.0), pts, cfg, cfg.seed, sw.aborted, seeding="single")
    return [sw]


def run_custom(cfg: ExperimentConfig) -> list[Sweep]:
    try:
        spec = read_model(cfg.model_file)
    except ModelFileError as exc:
        raise ConfigError(str(exc)) from None
    sw = _lambda_sweep("custom", "custom", spec.lambdas)
    if "lti" in cfg.engines:

        def point(i):
            model = lti_model_from_ensemble(spec.ensemble, spec.P, spec.Q, spec.lambdas[i], spec.grid_step, spec.M, mode=spec.mode)
            r = iterate_to_fixed_point(model, tol=cfg.tol, max_iter=cfg.max_iter)
            return r.iterations, r.default_frac, r.stress_frac, r.converged

        sw.analytic = _analytic("lti", sw.size, point, _labels(sw.axes, sw.coords), sw.aborted)
    if "mc" in cfg.engines:
        if spec.poisson_z is None or spec.N is None:
            raise ConfigError("mc for a custom model needs 'P = poisson ...' and 'N = ...' in the model file")
        sw.mc = _mc(PoissonSource(spec.N, spec.poisson_z), spec.ensemble, list(spec.lambdas), cfg, cfg.seed, sw.aborted)
    return [sw]


RUNNERS = {
    "exp1": run_exp1,
    "exp2a": run_exp2a,
    "exp2b": run_exp2b,
    "exp3a": run_exp3a,
    "exp3b": run_exp3b,
    "custom": run_custom,
}


def summarize(cfg: ExperimentConfig, sweeps: list[Sweep]) -> dict:
    out: dict = {"experiment": cfg.experiment, "version": __version__, "sweeps": {}}
    for sw in sweeps:
        info: dict = {"points": sw.size, "aborted": list(sw.aborted)}
        if sw.analytic is not None:
            info["analytic_converged"] = bool(sw.analytic.converged.all())
            info["analytic_max_iterations"] = int(sw.analytic.iterations.max()) if sw.size else 0
        # transition detection along the first axis, at the first lambda
        x = sw.coords[:, 0]
        if len(sw.axes) == 1 or not sw.size:
            sel = np.ones(sw.size, dtype=bool)
        else:
            sel = sw.coords[:, -1] == sw.coords[0, -1]
        if sw.analytic is not None:
            info["knife_edge_analytic"] = knife_edge(x[sel], sw.analytic.default[sel])
        if sw.mc is not None:
            agg = sw.mc.aggregate()
            info["knife_edge_mc"] = knife_edge(x[sel], agg["mean_default"][sel])
        if sw.name == "exp3b":
            if sw.analytic is not None:
                info["crossovers_analytic"] = crossovers(x[sel], sw.analytic.default[sel], sw.analytic.stress[sel])
            if sw.mc is not None:
                info["crossovers_mc"] = crossovers(x[sel], agg["mean_default"][sel], agg["mean_stress"][sel])
        out["sweeps"][sw.name] = info
    return out


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> RunResult:
    """Run every selected engine over the experiment's sweep and write its tables."""
    cfg.validate()
    log.info("running %s with engines %s", cfg.experiment, ",".join(cfg.engines))
    sweeps = RUNNERS[cfg.experiment](cfg)
    res = RunResult(cfg, sweeps, summarize(cfg, sweeps))
    if write:
        write_results(res, cfg.out)
    return res


# --------------------------------------------------------------------------
# emission


def _prefix(res: RunResult, sw: Sweep) -> str:
    return f"{sw.name.split('_', 1)[1]}_" if len(res.sweeps) > 1 else ""


def write_results(res: RunResult, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = [write_yaml(out / "config.yaml", res.config.effective())]
    for sw in res.sweeps:
        pre = _prefix(res, sw)
        if sw.analytic is not None:
            a = sw.analytic
            rows = [
                (*sw.coords[i, :-1], sw.coords[i, -1], a.iterations[i], a.default[i], a.stress[i]) for i in range(sw.size)
            ]
            cols = (*sw.axes, "iterations", "default_frac", "stress_frac")
            written.append(write_table(out / f"{pre}{a.engine}.csv", cols, rows))
        if sw.mc is not None:
            m = sw.mc
            T = m.default.shape[0]
            rows = [
                (*sw.coords[i], t, m.steps[t, i], m.default[t, i], m.stress[t, i]) for i in range(sw.size) for t in range(T)
            ]
            written.append(write_table(out / f"{pre}mc_trials.csv", (*sw.axes, "trial", "steps", "default_frac", "stress_frac"), rows))
            agg = m.aggregate()
            names = ("mean_default", "p10_default", "p90_default", "mean_stress", "p10_stress", "p90_stress")
            rows = [(*sw.coords[i], *(agg[k][i] for k in names)) for i in range(sw.size)]
            written.append(write_table(out / f"{pre}mc_aggregate.csv", (*sw.axes, *names), rows))
        written.extend(emit_plot_data(sw, out))
    written.append(write_yaml(out / "summary.yaml", res.summary))
    return written


def figure_tables(sw: Sweep) -> dict[str, tuple[tuple[str, ...], list[tuple]]]:
    """Tidy per-figure tables: name -> (columns, rows)."""
    if sw.figure == "fig5":
        return {
            "fig5a": _figure_table(sw, ("default",)),
            "fig5b": _figure_table(sw, ("stress",)),
        }
    return {sw.figure: _figure_table(sw, ("default", "stress"))}


def _figure_table(sw: Sweep, quantities) -> tuple[tuple[str, ...], list[tuple]]:
    counts = sw.nodes is not None
    scale = float(sw.nodes) if counts else 1.0
    label = {"default": "defaults", "stress": "stressed"} if counts else {"default": "default", "stress": "stress"}
    axes = sw.axes
    if len(axes) > 1 and np.unique(sw.coords[:, -1]).size == 1:
        axes = axes[:-1]  # a single lambda is recorded in config.yaml
    idx = [sw.axes.index(a) for a in axes]
    cols = list(axes)
    series = []
    if sw.analytic is not None:
        for q in quantities:
            cols.append(f"{sw.analytic.engine}_{label[q]}")
            series.append(getattr(sw.analytic, q) * scale)
    if sw.mc is not None:
        agg = sw.mc.aggregate()
        for q in quantities:
            for stat in ("mean", "p10", "p90"):
                cols.append(f"mc_{stat}_{label[q]}")
                series.append(agg[f"{stat}_{q}"] * scale)
    rows = [tuple(sw.coords[i, idx]) + tuple(s[i] for s in series) for i in range(sw.size)]
    return tuple(cols), rows


def emit_plot_data(sw: Sweep, out) -> list[Path]:
    out = Path(out)
    return [write_table(out / f"{name}.csv", cols, rows) for name, (cols, rows) in figure_tables(sw).items()]
