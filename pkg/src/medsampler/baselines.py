"""Reference samplers: adaptive random-walk Metropolis and the follow-up MCMC.

The Metropolis sampler spends exact density evaluations through the ledger
and is the budget-matched comparison baseline.  The follow-up sampler runs
one chain per design point on the fitted surrogate, spending zero exact
evaluations, and pools the draws with density-proportional chain lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .density import DensityModel, EvaluationLedger, eval_logf
from .engine import Design
from .errors import ConfigError
from .surrogate import SurrogateModel, predict

TARGET_ACCEPT = 0.234


@dataclass
class ChainSpec:
    """Random-walk chain parameters; scale is the lower-triangular proposal factor."""

    start: np.ndarray
    length: int
    scale: np.ndarray | None = None
    target_accept: float = TARGET_ACCEPT
    seed: int = 0


@dataclass(frozen=True)
class MetropolisResult:
    chain: np.ndarray
    accept_rate: float
    evaluations: int


@dataclass(frozen=True)
class FollowupResult:
    samples: np.ndarray
    chain_ids: np.ndarray
    lengths: np.ndarray
    weights: np.ndarray


def _check_spec(spec: ChainSpec, p: int) -> np.ndarray:
    start = np.asarray(spec.start, dtype=float).ravel()
    if start.shape != (p,):
        raise ConfigError(f"start point has shape {start.shape}, expected ({p},)")
    if np.any(start < 0.0) or np.any(start > 1.0):
        raise ConfigError("start point must lie in the unit cube")
    if spec.length < 1:
        raise ConfigError(f"chain length must be >= 1, got {spec.length}")
    if spec.scale is None:
        return 0.1 * np.eye(p)
    scale = np.asarray(spec.scale, dtype=float)
    if scale.shape != (p, p) or np.any(np.diag(scale) == 0.0):
        raise ConfigError("proposal scale must be a nonsingular p x p triangular matrix")
    return np.tril(scale)


def _adapt(S: np.ndarray, u: np.ndarray, alpha: float, step: int, target: float) -> np.ndarray:
    """Rank-1 update of the proposal factor toward the target acceptance rate.

    The updated covariance S(I + eta(alpha-target)uu'/|u|^2)S' stays positive
    definite because eta <= 1 bounds the rank-1 eigenvalue above -1.
    """
    norm2 = float(u @ u)
    if norm2 <= 0.0:
        return S
    eta = step ** (-2.0 / 3.0)
    c = eta * (alpha - target) / norm2
    v = S @ u
    return np.linalg.cholesky(S @ S.T + c * np.outer(v, v))


def adaptive_metropolis(
    model: DensityModel,
    spec: ChainSpec,
    ledger: EvaluationLedger,
    eval_budget: int | None = None,
) -> MetropolisResult:
    """Adaptive random-walk Metropolis on the exact density.

    Proposals leaving the unit cube are rejected without an evaluation (the
    density is treated as zero outside).  With ``eval_budget`` set, the chain
    runs until exactly that many ledger evaluations are spent, ignoring
    ``spec.length``; otherwise it runs ``spec.length`` steps.
    """
    p = model.p
    S = _check_spec(spec, p)
    if eval_budget is not None and eval_budget < 1:
        raise ConfigError(f"evaluation budget must be >= 1, got {eval_budget}")
    rng = np.random.default_rng(spec.seed)

    x = np.asarray(spec.start, dtype=float).ravel().copy()
    current = eval_logf(model, x, ledger)
    evals = 1
    chain: list[np.ndarray] = []
    accepted = 0
    step = 0
    while True:
        if eval_budget is None:
            if step >= spec.length:
                break
        elif evals >= eval_budget:
            break
        step += 1
        u = rng.standard_normal(p)
        proposal = x + S @ u
        if np.all((proposal >= 0.0) & (proposal <= 1.0)):
            logf = eval_logf(model, proposal, ledger)
            evals += 1
            alpha = min(1.0, math.exp(min(logf - current, 0.0)))
        else:
            alpha = 0.0
        if alpha > 0.0 and rng.random() < alpha:
            x = proposal
            current = logf
            accepted += 1
        S = _adapt(S, u, alpha, step, spec.target_accept)
        chain.append(x.copy())
    return MetropolisResult(
        chain=np.array(chain).reshape(len(chain), p),
        accept_rate=accepted / step if step else 0.0,
        evaluations=evals,
    )


def chain_lengths(logf: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Density-proportional budget split: weights softmax(logf), lengths ceil(N w)."""
    logf = np.asarray(logf, dtype=float)
    if N < 1:
        raise ConfigError(f"total budget must be >= 1, got {N}")
    shifted = np.exp(logf - logf.max())
    weights = shifted / shifted.sum()
    lengths = np.ceil(N * weights).astype(int)
    return lengths, weights


def followup_mcmc(
    med: Design,
    surrogate: SurrogateModel,
    N: int,
    seed: int = 0,
    scale: np.ndarray | None = None,
) -> FollowupResult:
    """One surrogate-driven Metropolis chain per design point, pooled.

    Chain i starts at design point i with length ceil(N w_i); every density
    ratio comes from the surrogate, so no exact evaluations are spent and no
    ledger is involved.  No burn-in is dropped: the starts are already in
    high-probability regions.
    """
    points = np.atleast_2d(np.asarray(med.points, dtype=float))
    n, p = points.shape
    lengths, weights = chain_lengths(med.logf, N)
    S0 = 0.1 * np.eye(p) if scale is None else np.tril(np.asarray(scale, dtype=float))
    if np.any(np.diag(S0) == 0.0):
        raise ConfigError("proposal scale must be nonsingular")

    pooled: list[np.ndarray] = []
    ids: list[np.ndarray] = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        x = points[i].copy()
        current = float(predict(surrogate, x))
        S = S0.copy()
        rows = np.empty((lengths[i], p))
        for step in range(1, lengths[i] + 1):
            u = rng.standard_normal(p)
            proposal = x + S @ u
            if np.all((proposal >= 0.0) & (proposal <= 1.0)):
                value = float(predict(surrogate, proposal))
                alpha = min(1.0, math.exp(min(value - current, 0.0)))
            else:
                alpha = 0.0
            if alpha > 0.0 and rng.random() < alpha:
                x = proposal
                current = value
            S = _adapt(S, u, alpha, step, TARGET_ACCEPT)
            rows[step - 1] = x
        pooled.append(rows)
        ids.append(np.full(lengths[i], i, dtype=int))
    return FollowupResult(
        samples=np.vstack(pooled),
        chain_ids=np.concatenate(ids),
        lengths=lengths,
        weights=weights,
    )
