"""Experiment orchestration: single training runs, the filter-comparison
benchmark on synthetic regression, (kappa, gamma) sweep grids, and
deterministic CSV/SVG emission.

Runs are pure functions of their config and seed: datasets, minibatch order,
and DP noise each come from a named substream of the run's seed, so the full
pipeline (calibrate -> train -> emit) is byte-reproducible. Grid cells and
seeds touch disjoint state, so callers may parallelise them; this module keeps
execution sequential for determinism of emitted files.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import seeding, svgplot
from .disk import (
    DiskConfig,
    DiskState,
    FullFilterConfig,
    disk_step,
    dpsgd_step,
    full_filter_init,
    full_filter_step,
)
from .kalman import random_stable_system, simulate_estimation
from .objectives import (
    Dataset,
    LinearRegression,
    MinibatchSampler,
    Objective,
    full_gradient,
    full_loss,
    gen_classification,
    gen_linear_regression,
    make_objective,
)
from .privacy import (
    PrivacyError,
    calibrate_noise_multiplier,
    compose_and_convert,
    delta_convention,
    subsampled_curve,
)

ALGORITHMS = ("dpsgd", "disk", "noisy-gd", "noisy-lp", "noisy-kf", "full-kf")
TRACE_HEADER = "step,loss,grad_norm,filtered_grad_norm,epsilon_spent"
COMPARISON_HEADER = "sigma_dp,method,seed,final_loss"
SWEEP_HEADER = "kappa,gamma,metric"
RELATIVE_NOISE_GRID = (0.01, 0.03, 0.1, 0.3, 1.0)


@dataclass
class StepRecord:
    t: int
    loss: float
    grad_norm: float
    filtered_grad_norm: float
    epsilon_spent: float
    noise_index: int = 0


@dataclass
class MetricsTrace:
    records: list[StepRecord]
    loss0: float
    grad0_norm: float
    seed: int

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss

    @property
    def epsilon_total(self) -> float:
        return self.records[-1].epsilon_spent

    @property
    def mean_sq_grad_norm(self) -> float:
        """(1/T) * sum over x_0..x_T of ||grad F||^2 (T+1 terms over T)."""
        T = len(self.records)
        total = self.grad0_norm**2 + sum(r.grad_norm**2 for r in self.records)
        return total / T

    def csv_lines(self) -> list[str]:
        lines = [TRACE_HEADER]
        for r in self.records:
            lines.append(
                f"{r.t},{r.loss!r},{r.grad_norm!r},{r.filtered_grad_norm!r},"
                f"{r.epsilon_spent!r}"
            )
        return lines


@dataclass
class ExperimentConfig:
    objective: dict
    algorithm: str = "disk"
    optimizer: DiskConfig = field(default_factory=DiskConfig)
    epsilon_target: float | None = None
    delta: float | None = None
    T: int = 100
    B: int = 50
    seeds: tuple[int, ...] = (0,)
    outdir: str = "out"
    init_scale: float = 1.0
    full_filter: FullFilterConfig | None = None
    _sigma_explicit: bool = True

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.T < 1 or self.B < 1:
            raise ValueError("need T >= 1 and B >= 1")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if (self.epsilon_target is not None) == self._sigma_explicit:
            raise ValueError(
                "set exactly one of: a privacy target (epsilon) or an explicit sigma_dp"
            )

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        opt_raw = dict(raw.get("optimizer", {}))
        sigma_explicit = "sigma_dp" in opt_raw
        if "betas" in opt_raw:
            opt_raw["betas"] = tuple(opt_raw["betas"])
        optimizer = DiskConfig(**opt_raw)
        privacy_raw = raw.get("privacy") or {}
        ff = raw.get("full_filter")
        seeds = raw.get("seeds")
        if seeds is None:
            seeds = [raw.get("seed", 0)]
        return cls(
            objective=raw["objective"],
            algorithm=raw.get("algorithm", "disk"),
            optimizer=optimizer,
            epsilon_target=privacy_raw.get("epsilon"),
            delta=privacy_raw.get("delta"),
            T=raw.get("T", 100),
            B=raw.get("B", 50),
            seeds=tuple(int(s) for s in seeds),
            outdir=raw.get("outdir", "out"),
            init_scale=raw.get("init_scale", 1.0),
            full_filter=FullFilterConfig(**ff) if ff else None,
            _sigma_explicit=sigma_explicit,
        )


def build_problem(problem: dict, seed: int, batch_floor: int = 1) -> tuple[Objective, Dataset]:
    """Instantiate the objective and its dataset for one seed."""
    kind = problem["kind"]
    if kind == "quadratic":
        dim = problem["dim"]
        eigs = problem.get("eigenvalues")
        H = np.diag(np.asarray(eigs, dtype=float)) if eigs is not None else np.eye(dim)
        obj = make_objective("quadratic", dim, H=H, x_star=problem.get("x_star"))
        ds = obj.placeholder_dataset(max(problem.get("n", batch_floor), batch_floor))
        return obj, ds
    n, p = problem["n"], problem["p"]
    if kind == "linear-regression":
        return LinearRegression(p), gen_linear_regression(
            n, p, problem.get("noise_std", 0.1), seed
        )
    if kind == "logistic-regression":
        return make_objective("logistic-regression", p), gen_classification(n, p, seed)
    if kind == "mlp":
        ds = gen_linear_regression(n, p, problem.get("noise_std", 0.1), seed)
        return make_objective("mlp", p, hidden=problem.get("hidden", 16)), ds
    raise ValueError(f"unknown objective kind: {kind!r}")


def _resolve_privacy(
    cfg: ExperimentConfig, N: int
) -> tuple[DiskConfig, float | None, float]:
    """Fill in sigma_dp from the target budget when requested.

    Returns (optimizer config, delta used for accounting, q). The accountant
    works on the noise multiplier z = sigma_dp * B / C; the noise actually
    added to the batch-averaged clipped gradient has std z * C / B.
    """
    q = min(cfg.B / N, 1.0)
    delta = cfg.delta if cfg.delta is not None else (
        delta_convention(N) if N > 1 else None
    )
    opt = cfg.optimizer
    if cfg.epsilon_target is None:
        return opt, delta, q
    if opt.clip_variant == "none" or not opt.clip:
        raise PrivacyError("a privacy target requires an active clipping variant")
    if delta is None:
        raise PrivacyError("a privacy target needs delta (or N > 1 for the convention)")
    z = calibrate_noise_multiplier(cfg.epsilon_target, delta, q, cfg.T)
    sigma_dp = z * opt.clip / cfg.B
    return replace(opt, sigma_dp=sigma_dp), delta, q


def _epsilon_schedule(
    opt: DiskConfig, delta: float | None, q: float, B: int, T: int
) -> list[float]:
    """Budget spent after 1..T steps; inf when the run is not clipped/noised."""
    if opt.clip_variant == "none" or opt.sigma_dp <= 0 or delta is None:
        return [math.inf] * T
    z = opt.sigma_dp * B / opt.clip
    curve = subsampled_curve(q, z)
    return [compose_and_convert(curve, t, delta) for t in range(1, T + 1)]


def run_experiment(cfg: ExperimentConfig, seed: int | None = None) -> MetricsTrace:
    """Run one algorithm for T steps; deterministic per seed."""
    seed = cfg.seeds[0] if seed is None else seed
    obj, ds = build_problem(cfg.objective, seed, batch_floor=cfg.B)
    if cfg.B > ds.n:
        raise ValueError("batch size exceeds dataset size")

    algorithm = cfg.algorithm
    if algorithm in ("noisy-gd", "full-kf") and cfg.epsilon_target is not None:
        raise PrivacyError(
            f"{algorithm} takes an explicit sigma_dp, not a privacy target"
        )
    opt, delta, q = _resolve_privacy(cfg, ds.n)
    full_batch = cfg.B == ds.n or algorithm == "noisy-gd"
    if algorithm == "noisy-gd":
        # Full-batch descent with additive noise and no clipping.
        opt = replace(opt, clip_variant="none", kappa=1.0)
        q = 1.0
    if algorithm == "noisy-lp":
        opt = replace(opt, two_point=False)

    x0 = obj.init_point(seed, cfg.init_scale)
    noise_rng = seeding.substream(seed, seeding.DP_NOISE)
    sampler = None if full_batch else MinibatchSampler(ds.n, cfg.B, seed)

    if algorithm == "full-kf":
        ff_cfg = cfg.full_filter or FullFilterConfig(eta=opt.eta)
        ff_state = full_filter_init(x0, ff_cfg)
        sched_opt = ff_cfg.as_disk()
    else:
        ff_cfg, ff_state = None, None
        sched_opt = opt
    eps_sched = _epsilon_schedule(
        sched_opt, delta, q, ds.n if full_batch else cfg.B, cfg.T
    )
    state = DiskState(x=x0.copy())

    loss0 = full_loss(obj, x0, ds)
    grad0 = float(np.linalg.norm(full_gradient(obj, x0, ds)))
    records: list[StepRecord] = []
    for t in range(cfg.T):
        if full_batch:
            batch = (ds.X, ds.y)
        else:
            idx = sampler.next_batch()
            batch = ds.subset(idx)
        if algorithm in ("disk", "noisy-kf", "noisy-lp"):
            state = disk_step(state, batch, obj, opt, noise_rng)
            x, filt = state.x, state.g_filt
        elif algorithm in ("dpsgd", "noisy-gd"):
            state = dpsgd_step(state, batch, obj, opt, noise_rng)
            x, filt = state.x, state.g_filt
        else:  # full-kf
            ff_state = full_filter_step(ff_state, batch, obj, ff_cfg, noise_rng)
            x, filt = ff_state.x, ff_state.g_filt
        records.append(
            StepRecord(
                t=t + 1,
                loss=full_loss(obj, x, ds),
                grad_norm=float(np.linalg.norm(full_gradient(obj, x, ds))),
                filtered_grad_norm=float(np.linalg.norm(filt)),
                epsilon_spent=eps_sched[t],
                noise_index=t,
            )
        )
    return MetricsTrace(records=records, loss0=loss0, grad0_norm=grad0, seed=seed)


# ---------------------------------------------------------------------------
# Filter comparison on synthetic regression
# ---------------------------------------------------------------------------

COMPARISON_METHODS = ("noisy-gd", "noisy-lp", "noisy-kf")


@dataclass
class ComparisonRow:
    sigma_dp: float
    method: str
    seed: int
    final_loss: float


def comparison_noise_levels(
    n: int = 1000, p: int = 20, noise_std: float = 0.1, seed: int = 0
) -> list[float]:
    """Relative grid scaled by ||grad F(0)|| / sqrt(d) on the seed-0 dataset."""
    ds = gen_linear_regression(n, p, noise_std, seed)
    obj = LinearRegression(p)
    scale = float(np.linalg.norm(full_gradient(obj, np.zeros(p), ds))) / math.sqrt(p)
    return [r * scale for r in RELATIVE_NOISE_GRID]


def compare_filters(
    noise_levels: list[float] | None = None,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    n: int = 1000,
    p: int = 20,
    noise_std: float = 0.1,
    T: int = 400,
    kappa: float = 0.5,
) -> list[ComparisonRow]:
    """Final regression loss of three full-batch methods at each noise level.

    * noisy-gd: plain descent on the noised gradient,
    * noisy-lp: exponential filter on the single-point noised gradient,
    * noisy-kf: exponential filter on the two-point (gamma = -1) combination.

    Step size (1/L) and the per-step noise realisations are shared across
    methods, so differences isolate the filter. Deterministic per seed.
    """
    if noise_levels is None:
        noise_levels = comparison_noise_levels(n, p, noise_std, seed=seeds[0])
    rows: list[ComparisonRow] = []
    for seed in seeds:
        ds = gen_linear_regression(n, p, noise_std, seed)
        obj = LinearRegression(p)
        eta = 1.0 / obj.smoothness(ds)
        x0 = np.zeros(p)
        for sigma in noise_levels:
            for method in COMPARISON_METHODS:
                cfg = DiskConfig(
                    kappa=1.0 if method == "noisy-gd" else kappa,
                    gamma=-1.0,
                    eta=eta,
                    clip=None,
                    clip_variant="none",
                    sigma_dp=sigma,
                    base="sgd",
                    two_point=(method == "noisy-kf"),
                )
                rng = seeding.substream(seed, seeding.DP_NOISE, f"sigma={sigma!r}")
                state = DiskState(x=x0.copy())
                step = dpsgd_step if method == "noisy-gd" else disk_step
                for _ in range(T):
                    state = step(state, (ds.X, ds.y), obj, cfg, rng)
                rows.append(
                    ComparisonRow(
                        sigma_dp=sigma,
                        method=method,
                        seed=seed,
                        final_loss=full_loss(obj, state.x, ds),
                    )
                )
    return rows


def aggregate_comparison(rows: list[ComparisonRow]) -> dict[tuple[float, str], float]:
    """Seed-averaged final loss per (noise level, method)."""
    sums: dict[tuple[float, str], list[float]] = {}
    for r in rows:
        sums.setdefault((r.sigma_dp, r.method), []).append(r.final_loss)
    return {key: float(np.mean(vals)) for key, vals in sums.items()}


# ---------------------------------------------------------------------------
# (kappa, gamma) sweep
# ---------------------------------------------------------------------------


def sweep_kappa_gamma(
    kappas: list[float],
    gammas: list[float],
    cfg: ExperimentConfig,
    metric: str = "final_loss",
) -> list[list[float]]:
    """Seed-averaged metric for every grid cell; one run per (cell, seed)."""
    matrix: list[list[float]] = []
    for kappa in kappas:
        row = []
        for gamma in gammas:
            cell_cfg = replace(
                cfg, optimizer=replace(cfg.optimizer, kappa=kappa, gamma=gamma)
            )
            vals = [
                getattr(run_experiment(cell_cfg, seed=s), metric) for s in cfg.seeds
            ]
            row.append(float(np.mean(vals)))
        matrix.append(row)
    return matrix


# ---------------------------------------------------------------------------
# Output emission
# ---------------------------------------------------------------------------


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def emit_trace(trace: MetricsTrace, outdir: str, stem: str = "trace") -> list[str]:
    csv_path = os.path.join(outdir, f"{stem}.csv")
    svg_path = os.path.join(outdir, f"{stem}.svg")
    _write(csv_path, "\n".join(trace.csv_lines()) + "\n")
    steps = [float(r.t) for r in trace.records]
    svg = svgplot.line_plot(
        {
            "loss": (steps, [r.loss for r in trace.records]),
            "grad_norm": (steps, [r.grad_norm for r in trace.records]),
        },
        title="training trace",
        xlabel="step",
        ylabel="value",
    )
    _write(svg_path, svg)
    return [csv_path, svg_path]


def read_trace_csv(path: str) -> MetricsTrace:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines[0] != TRACE_HEADER:
        raise ValueError(f"unexpected trace header: {lines[0]!r}")
    records = []
    for ln in lines[1:]:
        t, loss, gn, fgn, eps = ln.split(",")
        records.append(
            StepRecord(
                t=int(t), loss=float(loss), grad_norm=float(gn),
                filtered_grad_norm=float(fgn), epsilon_spent=float(eps),
                noise_index=int(t) - 1,
            )
        )
    return MetricsTrace(records=records, loss0=math.nan, grad0_norm=math.nan, seed=-1)


def emit_comparison(rows: list[ComparisonRow], outdir: str, stem: str = "comparison") -> list[str]:
    csv_path = os.path.join(outdir, f"{stem}.csv")
    svg_path = os.path.join(outdir, f"{stem}.svg")
    lines = [COMPARISON_HEADER] + [
        f"{r.sigma_dp!r},{r.method},{r.seed},{r.final_loss!r}" for r in rows
    ]
    _write(csv_path, "\n".join(lines) + "\n")
    agg = aggregate_comparison(rows)
    levels = sorted({r.sigma_dp for r in rows})
    series = {
        method: (levels, [agg[(lvl, method)] for lvl in levels])
        for method in COMPARISON_METHODS
        if any(r.method == method for r in rows)
    }
    svg = svgplot.line_plot(
        series, title="final loss vs noise level", xlabel="sigma_dp",
        ylabel="log10 final loss", log_y=True,
    )
    _write(svg_path, svg)
    return [csv_path, svg_path]


def emit_sweep(
    kappas: list[float], gammas: list[float], matrix: list[list[float]],
    outdir: str, stem: str = "sweep",
) -> list[str]:
    csv_path = os.path.join(outdir, f"{stem}.csv")
    svg_path = os.path.join(outdir, f"{stem}.svg")
    lines = [SWEEP_HEADER]
    for i, kappa in enumerate(kappas):
        for j, gamma in enumerate(gammas):
            lines.append(f"{kappa!r},{gamma!r},{matrix[i][j]!r}")
    _write(csv_path, "\n".join(lines) + "\n")
    svg = svgplot.heatmap(
        kappas, gammas, matrix, title="sweep metric", xlabel="gamma", ylabel="kappa"
    )
    _write(svg_path, svg)
    return [csv_path, svg_path]


def estimation_demo(
    dim: int = 3, steps: int = 10_000, runs: int = 50, seed: int = 0
) -> list[str]:
    """CSV lines (run,mse_raw,mse_kf) for the estimator-quality simulation."""
    sys = random_stable_system(dim, seed)
    results = simulate_estimation(sys, steps=steps, runs=runs, seed=seed)
    lines = ["run,mse_raw,mse_kf"]
    for i, res in enumerate(results):
        lines.append(f"{i},{res.mse_raw!r},{res.mse_kf!r}")
    return lines
