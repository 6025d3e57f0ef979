"""Quality measures for point sets.

Energy objectives in log scale, centered-L2 discrepancy, marginal and
correlation summaries, and the per-point probability-balance statistic.
All functions are pure; nothing here spends density evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ndtr

from .engine import Design
from .errors import ConfigError
from .geometry import DistanceSpec, charge_log, identity_spec, log_dist_block, psi_log


@dataclass(frozen=True)
class MarginalSummary:
    dim: int
    mean: float
    sd: float
    bin_edges: np.ndarray
    masses: np.ndarray


@dataclass(frozen=True)
class DiagnosticsReport:
    psi_log: float
    psi_tilde_log: float
    total_energy_log: float
    max_energy_log: float
    cl2: float
    marginals: list[MarginalSummary]
    correlation: np.ndarray
    correlation_degenerate: bool
    balance_log: np.ndarray
    balance_spread: float

    def to_dict(self) -> dict:
        return {
            "psi_log": self.psi_log,
            "psi_tilde_log": self.psi_tilde_log,
            "total_energy_log": self.total_energy_log,
            "max_energy_log": self.max_energy_log,
            "cl2": self.cl2,
            "marginals": [
                {
                    "dim": m.dim,
                    "mean": m.mean,
                    "sd": m.sd,
                    "bin_edges": list(m.bin_edges),
                    "masses": list(m.masses),
                }
                for m in self.marginals
            ],
            "correlation": [list(row) for row in self.correlation],
            "correlation_degenerate": self.correlation_degenerate,
            "balance_log": list(self.balance_log),
            "balance_spread": self.balance_spread,
            "balance_note": "P values use unnormalized f; only within-design comparisons are meaningful",
        }


def _pairwise_log_terms(design: Design, spec: DistanceSpec) -> np.ndarray:
    """Upper-triangle log energies log(q_i q_j / d_ij) for unordered pairs."""
    points = np.atleast_2d(np.asarray(design.points, dtype=float))
    n, p = points.shape
    if n < 2:
        raise ConfigError("energy needs at least 2 points")
    logq = charge_log(np.asarray(design.logf, dtype=float), p)
    white = spec.whiten(points)
    logd = log_dist_block(white, white, spec.s)
    iu = np.triu_indices(n, k=1)
    return logq[iu[0]] + logq[iu[1]] - logd[iu]


def total_energy_log(design: Design, spec: DistanceSpec | None = None) -> float:
    """Log of the summed pairwise charge energy, over ordered pairs.

    Coincident points make the sum infinite; the +inf sentinel is returned
    rather than raising since the value is an honest limit.
    """
    spec = spec or identity_spec(np.shape(design.points)[1])
    terms = _pairwise_log_terms(design, spec)
    if np.any(np.isposinf(terms)):
        return float("inf")
    # ordered pairs count both (i,j) and (j,i)
    peak = float(np.max(terms))
    return peak + float(np.log(2.0 * np.sum(np.exp(terms - peak))))


def max_energy_log(design: Design, spec: DistanceSpec | None = None) -> float:
    """Log of the largest single pairwise charge energy."""
    spec = spec or identity_spec(np.shape(design.points)[1])
    return float(np.max(_pairwise_log_terms(design, spec)))


def cl2_discrepancy(points: np.ndarray) -> float:
    """Centered L2 discrepancy of a point set in the unit cube.

    Standard closed form: CL2^2 = (13/12)^p
      - (2/n) sum_i prod_l (1 + |c_il|/2 - c_il^2/2)
      + (1/n^2) sum_ij prod_l (1 + |c_il|/2 + |c_jl|/2 - |x_il - x_jl|/2)
    with c = x - 1/2.  Returns the square root.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, p = points.shape
    if n < 1:
        raise ConfigError("discrepancy of an empty point set")
    if np.any(points < 0.0) or np.any(points > 1.0):
        raise ConfigError("points must lie in the unit cube")
    c = np.abs(points - 0.5)
    term2 = np.prod(1.0 + 0.5 * c - 0.5 * c**2, axis=1).sum() * (2.0 / n)
    cross = (
        1.0
        + 0.5 * c[:, None, :]
        + 0.5 * c[None, :, :]
        - 0.5 * np.abs(points[:, None, :] - points[None, :, :])
    )
    term3 = np.prod(cross, axis=2).sum() / (n * n)
    sq = (13.0 / 12.0) ** p - term2 + term3
    return math.sqrt(max(sq, 0.0))


def normal_cdf_transform(
    points: np.ndarray,
    mean: np.ndarray | float | None = None,
    sd: np.ndarray | float | None = None,
) -> np.ndarray:
    """Map points to the unit cube through per-dimension normal CDFs.

    With mean/sd omitted, the sample statistics of the point set are used;
    pass the true parameters when the target distribution is known.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mu = np.mean(points, axis=0) if mean is None else np.broadcast_to(mean, (points.shape[1],))
    s = np.std(points, axis=0, ddof=1) if sd is None else np.broadcast_to(sd, (points.shape[1],))
    s = np.maximum(np.asarray(s, dtype=float), 1e-12)
    return ndtr((points - mu) / s)


def probability_balance(design: Design) -> tuple[np.ndarray, float]:
    """Per-point log of the smallest adjacent probability mass, plus spread.

    For each pair, P_ij = sqrt(f_i f_j) * V(d_ij) with V the Euclidean-ball
    volume of radius d_ij/2; the statistic is log P_{ii*} with i* the
    minimizing partner.  f is unnormalized, so only the within-design spread
    (max - min) is meaningful.
    """
    points = np.atleast_2d(np.asarray(design.points, dtype=float))
    logf = np.asarray(design.logf, dtype=float)
    n, p = points.shape
    if n < 2:
        raise ConfigError("probability balance needs at least 2 points")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    log_volume_const = (p / 2.0) * math.log(math.pi) - gammaln(p / 2.0 + 1.0)
    with np.errstate(divide="ignore"):
        log_p = (
            0.5 * (logf[:, None] + logf[None, :])
            + log_volume_const
            + p * np.log(dist / 2.0)
        )
    np.fill_diagonal(log_p, np.inf)
    balance = log_p.min(axis=1)
    return balance, float(balance.max() - balance.min())


def marginals_and_correlations(
    points: np.ndarray, bins: int | None = None
) -> tuple[list[MarginalSummary], np.ndarray, bool]:
    """Per-dimension histogram/mean/sd plus the sample correlation matrix.

    Dimensions with zero variance make the correlation undefined; those
    entries are reported as 0 and the degeneracy flag is set.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, p = points.shape
    if n < 2:
        raise ConfigError("summaries need at least 2 points")
    if bins is None:
        bins = math.ceil(math.sqrt(n))
    if bins < 1:
        raise ConfigError(f"need at least 1 bin, got {bins}")

    marginals = []
    for l in range(p):
        counts, edges = np.histogram(points[:, l], bins=bins, range=(0.0, 1.0))
        sd = float(points[:, l].std(ddof=1))
        marginals.append(
            MarginalSummary(
                dim=l,
                mean=float(points[:, l].mean()),
                sd=sd if sd > 1e-12 else 0.0,
                bin_edges=edges,
                masses=counts / n,
            )
        )

    sds = points.std(axis=0, ddof=1)
    # constant columns leave ~1e-17 rounding residue, not exact zeros
    degenerate = bool(np.any(sds <= 1e-12))
    if p == 1:
        corr = np.ones((1, 1))
    elif degenerate:
        corr = np.zeros((p, p))
        ok = sds > 1e-12
        if ok.sum() >= 2:
            sub = np.corrcoef(points[:, ok], rowvar=False)
            corr[np.ix_(ok, ok)] = sub
        np.fill_diagonal(corr, 1.0)
    else:
        corr = np.corrcoef(points, rowvar=False)
        np.fill_diagonal(corr, 1.0)
    corr = np.clip(corr, -1.0, 1.0)
    return marginals, corr, degenerate


def diagnostics_report(
    design: Design,
    spec: DistanceSpec | None = None,
    spec_whitened: DistanceSpec | None = None,
    bins: int | None = None,
    gamma: float = 1.0,
) -> DiagnosticsReport:
    """Assemble the full report for a design; pure, no density evaluations."""
    points = np.atleast_2d(np.asarray(design.points, dtype=float))
    p = points.shape[1]
    spec = spec or identity_spec(p)
    spec_whitened = spec_whitened or spec
    marginals, corr, degenerate = marginals_and_correlations(points, bins)
    balance, spread = probability_balance(design)
    return DiagnosticsReport(
        psi_log=psi_log(points, design.logf, gamma, spec).value,
        psi_tilde_log=psi_log(points, design.logf, gamma, spec_whitened).value,
        total_energy_log=total_energy_log(design, spec),
        max_energy_log=max_energy_log(design, spec),
        cl2=cl2_discrepancy(points) if np.all((points >= 0) & (points <= 1)) else float("nan"),
        marginals=marginals,
        correlation=corr,
        correlation_degenerate=degenerate,
        balance_log=balance,
        balance_spread=spread,
    )
