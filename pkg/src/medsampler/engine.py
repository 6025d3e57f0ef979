"""Annealed, budget-limited construction of minimum energy designs.

The run anneals the target from flat to full strength over K stages with
exactly K*n density evaluations.  Each stage proposes n new points, one per
current design point, by scoring a local candidate pool against the already
evaluated points (pass 1: unwhitened metric, surrogate value for the
candidate, exact values for everything else), then re-selects an n-point
design greedily from every point evaluated so far (pass 2: whitened metric,
no new evaluations).

Both selection passes use the stage's target level gamma_{k+1}; the adaptive
distance exponent uses the current level gamma_k, so early stages favor the
projection-friendly product metric.  Both conventions are surfaced in the run
report's notes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from math import ceil, sqrt

import numpy as np

from .density import DensityModel, EvaluationLedger, eval_batch, eval_logf
from .errors import CandidatePoolError, ConfigError, MedError
from .geometry import (
    S_ZERO_THRESHOLD,
    DistanceSpec,
    identity_spec,
    log_dist_block,
    psi_log,
    spec_from_sigma,
)
from .qmc import (
    DELTA_SEPARATION,
    LatticeRule,
    _cbc_vector,
    cbc_lattice,
    halton_block,
    is_prime,
    largest_prime_below,
    local_candidates,
)
from .surrogate import (
    JITTER_START,
    TRAINING_CAP,
    default_theta,
    fit,
    predict,
    theta_sensitivity,
)

# Covariance estimates are shrunk toward their own diagonal past this condition.
SIGMA_CONDITION_LIMIT = 1e6


def default_n(p: int) -> int:
    """Design size rule: largest prime strictly below 100 + 5p."""
    if p < 1:
        raise ConfigError(f"dimension must be >= 1, got {p}")
    return largest_prime_below(100 + 5 * p)


def default_K(p: int) -> int:
    """Stage count rule: ceil(4 * sqrt(p))."""
    if p < 1:
        raise ConfigError(f"dimension must be >= 1, got {p}")
    return ceil(4.0 * sqrt(p))


@dataclass(frozen=True)
class AnnealSchedule:
    """Evenly spaced annealing levels gamma_k = (k-1)/(K-1), k = 1..K."""

    K: int
    gammas: np.ndarray

    @classmethod
    def of(cls, K: int) -> "AnnealSchedule":
        if K < 2:
            raise ConfigError(f"need at least 2 stages, got {K}")
        return cls(K=K, gammas=np.arange(K) / (K - 1))


@dataclass(frozen=True)
class Design:
    """An n-point design with its exact log-density values."""

    points: np.ndarray
    logf: np.ndarray
    stage: int
    gamma: float

    def __len__(self) -> int:
        return len(self.logf)


@dataclass
class RunConfig:
    """Run parameters; None means "use the dimension-dependent default"."""

    seed: int = 0
    n: int | None = None
    K: int | None = None
    m: int | None = None
    n_combos: int = 5
    delta: float = DELTA_SEPARATION
    theta: float | None = None
    jitter: float = JITTER_START
    s_mode: str = "adaptive"
    s_value: float = 2.0
    s_quantile: float | None = None
    whitening: bool = True


@dataclass(frozen=True)
class StageReport:
    stage: int
    gamma: float
    s: float
    sigma_cond: float
    psi_log: float
    psi_tilde_log: float
    seconds: float


@dataclass
class RunReport:
    model_name: str
    p: int
    n: int
    K: int
    seed: int
    budget: int
    config: dict
    gammas: list[float]
    stages: list[StageReport]
    theta_sensitivity: float | None
    notes: dict[str, str]
    ledger: EvaluationLedger
    total_seconds: float


@dataclass
class StageState:
    """Mutable context for one stage: every evaluated point plus the metrics.

    The evaluated-point buffers are preallocated for the whole run; ``count``
    is the committed prefix length.  ``white`` holds the same prefix under the
    stage's whitening transform, refreshed when sigma changes.
    """

    model: DensityModel
    config: RunConfig
    ledger: EvaluationLedger
    seed: int
    stage_next: int
    m: int
    sigma: np.ndarray
    s: float
    spec_plain: DistanceSpec
    spec_white: DistanceSpec
    pts: np.ndarray
    logf: np.ndarray
    white: np.ndarray
    count: int

    def all_points(self) -> np.ndarray:
        return self.pts[: self.count]

    def all_logf(self) -> np.ndarray:
        return self.logf[: self.count]

    def add_evaluated(self, x: np.ndarray, val: float) -> None:
        self.pts[self.count] = x
        self.logf[self.count] = val
        self.white[self.count] = self.spec_white.whiten(x)
        self.count += 1


def adaptive_s(fk_min_log: float, fk_max_log: float, gamma: float) -> float:
    """Distance exponent s = 2 * (1 - (f_min / f_max)^gamma), in log arguments.

    Zero when the annealed density is flat (equal extremes or gamma = 0),
    approaching 2 when the density range is huge: flat targets get the
    projection-friendly product metric, peaked ones the Euclidean-like one.
    """
    if fk_min_log > fk_max_log:
        raise ConfigError(
            f"fk_min_log {fk_min_log} exceeds fk_max_log {fk_max_log}"
        )
    return 2.0 * (1.0 - float(np.exp(gamma * (fk_min_log - fk_max_log))))


def update_sigma(
    points: np.ndarray, gamma_k: float, gamma_next: float, whitening: bool
) -> np.ndarray:
    """Covariance estimate for the next stage's whitening metric.

    Scales the sample covariance of the current design by gamma_k /
    gamma_next, shrinking toward its own diagonal until the condition number
    is acceptable.  Stage one (gamma_k = 0) and degenerate designs fall back
    to the uniform-distribution covariance I/12; whitening off gives I.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p = points.shape[1]
    if not whitening:
        return np.eye(p)
    if gamma_next <= 0:
        raise ConfigError(f"gamma_next must be positive, got {gamma_next}")
    base = np.eye(p) / 12.0
    if gamma_k <= 0 or len(points) < 2:
        return base
    var = np.cov(points, rowvar=False).reshape(p, p)
    sigma = (gamma_k / gamma_next) * var
    if not np.all(np.isfinite(sigma)):
        return base
    # collapsed designs leave rounding noise, not zeros, on the diagonal
    if float(np.max(np.diag(sigma))) <= 1e-12:
        return base
    diagonal = np.diag(np.diag(sigma))
    for lam in np.linspace(0.0, 1.0, 11):
        shrunk = (1.0 - lam) * sigma + lam * diagonal
        if np.all(np.diag(shrunk) > 0) and np.linalg.cond(shrunk) <= SIGMA_CONDITION_LIMIT:
            return shrunk
    return base


def _resolve_s(logf: np.ndarray, gamma_k: float, config: RunConfig) -> float:
    if config.s_mode == "fixed":
        return float(config.s_value)
    if config.s_mode != "adaptive":
        raise ConfigError(f"s_mode must be 'adaptive' or 'fixed', got {config.s_mode!r}")
    if config.s_quantile is not None:
        f_lo = float(np.quantile(logf, config.s_quantile))
        f_hi = float(np.quantile(logf, 1.0 - config.s_quantile))
    else:
        f_lo = float(np.min(logf))
        f_hi = float(np.max(logf))
    return adaptive_s(f_lo, f_hi, gamma_k)


def _power_mean_rows(a: np.ndarray, s: float) -> np.ndarray:
    """Power mean of each row; exact geometric mean below the s threshold."""
    if s < S_ZERO_THRESHOLD:
        out = np.zeros(len(a))
        pos = np.all(a > 0.0, axis=1)
        if pos.any():
            out[pos] = np.exp(np.log(a[pos]).mean(axis=1))
        return out
    return np.mean(a**s, axis=1) ** (1.0 / s)


def _prefilter_conditioning(
    cond: np.ndarray,
    cond_part: np.ndarray,
    box_lo: np.ndarray,
    box_hi: np.ndarray,
    center: np.ndarray,
    anchor_part: float,
    cand_part_min: float,
    cand_part_max: float,
    s: float,
    two_p: float,
) -> np.ndarray:
    """Indices of conditioning points that could attain the pairwise minimum.

    For candidates confined to [box_lo, box_hi], a conditioning point whose
    best-case term (candidate part at its minimum, distance at the point's
    gap to the box) still exceeds the worst-case term of the anchor (the
    region center, which is always in the conditioning set) can never be the
    argmin, so dropping it leaves every candidate's score unchanged.
    """
    gaps = np.maximum(np.maximum(box_lo[None, :] - cond, cond - box_hi[None, :]), 0.0)
    d_low = _power_mean_rows(gaps, s)
    reach = np.maximum(center - box_lo, box_hi - center)
    d_anchor = float(_power_mean_rows(reach[None, :], s)[0])
    if d_anchor <= 0.0:
        return np.arange(len(cond))
    upper = cand_part_max + anchor_part + two_p * np.log(d_anchor)
    with np.errstate(divide="ignore"):
        lower = cand_part_min + cond_part + two_p * np.log(d_low)
    return np.nonzero(~(lower > upper))[0]


def _argmax_min_term(
    cand: np.ndarray,
    cand_part: np.ndarray,
    cond: np.ndarray,
    cond_part: np.ndarray,
    s: float,
    center: np.ndarray,
) -> tuple[int, float]:
    """Exact argmax over candidates of the min pairwise term, with pruning.

    ``cand_part``/``cond_part`` are the per-point additive pieces (gamma times
    the log density or its surrogate).  Conditioning points are scanned
    nearest-to-center first; after the first chunk the current front-runner
    is completed to a true score, which safely prunes candidates whose upper
    bound already falls short.  First-occurrence tie-breaking is preserved
    because pruned candidates are strictly worse.
    """
    m, p = cand.shape
    two_p = 2.0 * p
    order = np.argsort(((cond - center[None, :]) ** 2).sum(axis=1), kind="stable")
    cond = cond[order]
    cond_part = cond_part[order]
    total = len(cond)

    ub = np.full(m, np.inf)
    alive = np.ones(m, dtype=bool)
    level = -np.inf
    pos = 0
    while pos < total:
        size = 32 if pos == 0 else 128
        stop = min(pos + size, total)
        idx = np.nonzero(alive)[0]
        terms = (
            cand_part[idx][:, None]
            + cond_part[None, pos:stop]
            + two_p * log_dist_block(cand[idx], cond[pos:stop], s)
        )
        ub[idx] = np.minimum(ub[idx], terms.min(axis=1))
        pos = stop
        if level == -np.inf and pos < total:
            star = idx[int(np.argmax(ub[idx]))]
            tail = (
                cand_part[star]
                + cond_part[pos:]
                + two_p * log_dist_block(cand[star : star + 1], cond[pos:], s)[0]
            )
            ub[star] = min(ub[star], float(tail.min()))
            level = ub[star]
        if level > -np.inf:
            alive &= ub >= level
    scores = np.where(alive, ub, -np.inf)
    best = int(np.argmax(scores))
    return best, float(scores[best])


def _inflated_region(region: np.ndarray) -> np.ndarray:
    lo = np.clip(region.min(axis=0) - 0.05, 0.0, 1.0)
    hi = np.clip(region.max(axis=0) + 0.05, 0.0, 1.0)
    return np.vstack([region, lo, hi])


def propose_new_points(
    design: Design, state: StageState, gamma_next: float
) -> tuple[np.ndarray, np.ndarray]:
    """Pass 1: one new evaluated point per design point, in index order.

    Each design point gets a local region (its n nearest evaluated points in
    the whitened metric), a surrogate fitted to the nearest of them, and a
    candidate pool; the candidate maximizing the minimum pairwise term against
    the conditioning set (current design plus this stage's earlier winners,
    unwhitened metric) is evaluated exactly.  Exactly n ledger records.
    """
    cfg = state.config
    n = len(design)
    p = design.points.shape[1]
    cond_pts = list(design.points)
    cond_logf = list(design.logf)
    new_pts: list[np.ndarray] = []
    new_logf: list[float] = []

    for j in range(n):
        center = design.points[j]
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=state.seed, spawn_key=(state.stage_next, j))
        )
        wc = state.spec_white.whiten(center)
        d2 = ((state.white[: state.count] - wc[None, :]) ** 2).sum(axis=1)
        nearest = np.argsort(d2, kind="stable")[: min(n, state.count)]
        region = state.pts[nearest]
        train = nearest[: min(len(nearest), TRAINING_CAP)]

        existing = state.all_points()
        try:
            pool = local_candidates(
                center, region, state.m, cfg.n_combos, existing, rng, delta=cfg.delta
            )
        except CandidatePoolError:
            pool = local_candidates(
                center,
                _inflated_region(region),
                state.m,
                cfg.n_combos,
                existing,
                rng,
                delta=cfg.delta,
            )

        theta = cfg.theta if cfg.theta is not None else default_theta(state.pts[train])
        surrogate = fit(
            state.pts[train], state.logf[train], theta, jitter_start=cfg.jitter
        )
        yhat = np.atleast_1d(predict(surrogate, pool.points))

        cond_arr = np.array(cond_pts)
        cond_part = gamma_next * np.array(cond_logf)
        cand_part = gamma_next * yhat
        keep = _prefilter_conditioning(
            cond_arr,
            cond_part,
            pool.points.min(axis=0),
            pool.points.max(axis=0),
            center,
            anchor_part=gamma_next * float(design.logf[j]),
            cand_part_min=float(cand_part.min()),
            cand_part_max=float(cand_part.max()),
            s=state.s,
            two_p=2.0 * p,
        )
        best, _ = _argmax_min_term(
            pool.points, cand_part, cond_arr[keep], cond_part[keep], state.s, center
        )

        x_new = pool.points[best]
        val = eval_logf(state.model, x_new, state.ledger)
        state.add_evaluated(x_new, val)
        cond_pts.append(x_new)
        cond_logf.append(val)
        new_pts.append(x_new)
        new_logf.append(val)

    return np.array(new_pts), np.array(new_logf)


def greedy_select(
    points: np.ndarray,
    logf: np.ndarray,
    n: int,
    gamma: float,
    spec: DistanceSpec,
    stage: int = 0,
) -> Design:
    """Pass 2: greedy n-point selection from evaluated candidates only.

    The first point is the log-density argmax (ties to the lowest index);
    each later point maximizes the minimum pairwise term against the points
    already chosen, under the whitened metric.  No density evaluations.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    logf = np.asarray(logf, dtype=float)
    total = len(points)
    if n < 1:
        raise ConfigError(f"need n >= 1, got {n}")
    if total < n:
        raise ConfigError(f"cannot select {n} points from {total} candidates")
    p = points.shape[1]
    two_p = 2.0 * p
    white = spec.whiten(points)
    part = gamma * logf

    first = int(np.argmax(logf))
    chosen = [first]
    current = np.full(total, np.inf)
    current[first] = -np.inf
    for _ in range(1, n):
        last = chosen[-1]
        logd = log_dist_block(white, white[last : last + 1], spec.s)[:, 0]
        current = np.minimum(current, part + part[last] + two_p * logd)
        nxt = int(np.argmax(current))
        current[nxt] = -np.inf
        chosen.append(nxt)
    idx = np.array(chosen)
    return Design(points=points[idx].copy(), logf=logf[idx].copy(), stage=stage, gamma=gamma)


def _initial_lattice(n: int, p: int, seed: int) -> LatticeRule:
    shift_seed = int(
        np.random.SeedSequence(entropy=seed, spawn_key=(1, 0)).generate_state(1)[0]
    )
    if is_prime(n):
        return cbc_lattice(n, p, seed=shift_seed)
    # Composite sizes keep the coprime component search; the public
    # constructor's primality contract stays strict.
    shift = np.random.default_rng(shift_seed).random(p)
    return LatticeRule(n=n, z=_cbc_vector(n, p), shift=shift)


def _stage_psis(
    design: Design, gamma: float, spec_plain: DistanceSpec, spec_white: DistanceSpec
) -> tuple[float, float]:
    if len(design) < 2:
        return float("nan"), float("nan")
    plain = psi_log(design.points, design.logf, gamma, spec_plain).value
    tilde = psi_log(design.points, design.logf, gamma, spec_white).value
    return plain, tilde


def _theta_sensitivity_metric(design: Design, config: RunConfig) -> float | None:
    try:
        cap = min(len(design), TRAINING_CAP)
        x = design.points[:cap]
        y = design.logf[:cap]
        lo = x.min(axis=0)
        hi = np.maximum(x.max(axis=0), lo + 1e-9)
        probes = lo[None, :] + halton_block(0, 50, x.shape[1]) * (hi - lo)[None, :]
        theta = config.theta if config.theta is not None else default_theta(x)
        return theta_sensitivity(x, y, theta, probes)
    except MedError:
        return None


def run(
    model: DensityModel,
    config: RunConfig | None = None,
    ledger: EvaluationLedger | None = None,
) -> tuple[Design, RunReport]:
    """Full annealed construction: exactly K*n evaluations, deterministic per seed.

    Passing a ledger keeps its records available for postmortem even when the
    run aborts partway.
    """
    config = config if config is not None else RunConfig()
    p = model.p
    n = config.n if config.n is not None else default_n(p)
    K = config.K if config.K is not None else default_K(p)
    if n < 2:
        raise ConfigError(f"need n >= 2, got {n}")
    m = config.m if config.m is not None else 50 * p
    if m < 1:
        raise ConfigError(f"need m >= 1, got {m}")
    _resolve_s(np.zeros(1), 0.0, config)  # validates s_mode early
    ledger = ledger if ledger is not None else EvaluationLedger()
    start_count = ledger.count
    schedule = AnnealSchedule.of(K)
    t_run = time.perf_counter()

    budget = K * n
    buf_pts = np.empty((start_count + budget, p))
    buf_logf = np.empty(start_count + budget)
    buf_white = np.empty((start_count + budget, p))

    t0 = time.perf_counter()
    ledger.begin_stage(1)
    pts1 = _initial_lattice(n, p, config.seed).points()
    logf1 = eval_batch(model, pts1, ledger)
    design = Design(points=pts1, logf=logf1, stage=1, gamma=0.0)
    count = len(pts1)
    buf_pts[:count] = pts1
    buf_logf[:count] = logf1

    s1 = _resolve_s(design.logf, 0.0, config)
    sigma1 = update_sigma(design.points, 0.0, schedule.gammas[1], config.whitening)
    spec1_plain = identity_spec(p, s1)
    spec1_white = spec_from_sigma(sigma1, s=s1) if config.whitening else spec1_plain
    psi1, psi1_t = _stage_psis(design, 0.0, spec1_plain, spec1_white)
    stages = [
        StageReport(
            stage=1,
            gamma=0.0,
            s=s1,
            sigma_cond=float(np.linalg.cond(sigma1)),
            psi_log=psi1,
            psi_tilde_log=psi1_t,
            seconds=time.perf_counter() - t0,
        )
    ]

    for k_next in range(2, K + 1):
        t0 = time.perf_counter()
        gamma_k = float(schedule.gammas[k_next - 2])
        gamma_next = float(schedule.gammas[k_next - 1])
        s = _resolve_s(design.logf, gamma_k, config)
        sigma = update_sigma(design.points, gamma_k, gamma_next, config.whitening)
        spec_plain = identity_spec(p, s)
        spec_white = spec_from_sigma(sigma, s=s) if config.whitening else spec_plain

        buf_white[:count] = spec_white.whiten(buf_pts[:count])
        state = StageState(
            model=model,
            config=config,
            ledger=ledger,
            seed=config.seed,
            stage_next=k_next,
            m=m,
            sigma=sigma,
            s=s,
            spec_plain=spec_plain,
            spec_white=spec_white,
            pts=buf_pts,
            logf=buf_logf,
            white=buf_white,
            count=count,
        )
        ledger.begin_stage(k_next)
        propose_new_points(design, state, gamma_next)
        count = state.count

        design = greedy_select(
            buf_pts[:count], buf_logf[:count], n, gamma_next, spec_white, stage=k_next
        )
        psi_plain, psi_tilde = _stage_psis(design, gamma_next, spec_plain, spec_white)
        stages.append(
            StageReport(
                stage=k_next,
                gamma=gamma_next,
                s=s,
                sigma_cond=float(np.linalg.cond(sigma)),
                psi_log=psi_plain,
                psi_tilde_log=psi_tilde,
                seconds=time.perf_counter() - t0,
            )
        )

    used = ledger.count - start_count
    if used != budget:
        raise MedError(f"budget violated: {used} evaluations, expected {budget}")

    report = RunReport(
        model_name=model.name,
        p=p,
        n=n,
        K=K,
        seed=config.seed,
        budget=used,
        config={
            "seed": config.seed,
            "n": n,
            "K": K,
            "m": m,
            "n_combos": config.n_combos,
            "delta": config.delta,
            "theta": config.theta,
            "jitter": config.jitter,
            "s_mode": config.s_mode,
            "s_value": config.s_value,
            "s_quantile": config.s_quantile,
            "whitening": config.whitening,
        },
        gammas=[float(g) for g in schedule.gammas],
        stages=stages,
        theta_sensitivity=_theta_sensitivity_metric(design, config),
        notes={
            "lattice": "rank-1 CBC, Bernoulli-2 kernel, product weights 1/l^2, naive search",
            "selection_gamma": "both selection passes use the stage target level",
            "adaptive_s_gamma": "adaptive exponent uses the current stage level",
        },
        ledger=ledger,
        total_seconds=time.perf_counter() - t_run,
    )
    return design, report
