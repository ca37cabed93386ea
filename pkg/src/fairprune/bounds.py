"""Oracle and PAC-style bounds on the discriminative risk of a weighted vote.

The oracle bounds relate the vote's DR to the ρ-weighted member DRs
(first order), to the ρ²-weighted tandem DRs (second order) and to both
(Chebyshev-Cantelli form). The PAC bounds add a Hoeffding or McAllester
slack to an empirical DR.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .ensemble import EnsembleProfile, WeightedEnsemble
from .errors import (
    AsymmetricMatrix,
    DivergentSupport,
    InvalidDelta,
    InvalidInput,
    LengthMismatch,
    NegativeKL,
    NotADistribution,
    ShapeMismatch,
)
from .metrics import tandem_matrix


@dataclass(frozen=True)
class OracleBoundReport:
    ensemble_dr: float
    expected_member_dr: float
    expected_tandem: float
    first_order: float
    second_order: float
    c_tandem: float | None
    first_order_holds: bool
    second_order_holds: bool
    c_tandem_holds: bool | None
    n: int
    m: int
    proxy: str = "empirical sample"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PacBoundReport:
    empirical: float
    slack: float
    bound: float
    n: int
    delta: float
    kind: str
    class_size: int | None = None
    kl: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _weights_and(weights, other, what):
    w = np.asarray(weights, dtype=np.float64)
    v = np.asarray(other, dtype=np.float64)
    if w.ndim != 1 or v.shape[0] != w.shape[0]:
        raise LengthMismatch(f"{what} does not match the weight vector")
    return w, v


def first_order_bound(weights, member_drs) -> float:
    w, dr = _weights_and(weights, member_drs, "member DR vector")
    if dr.ndim != 1:
        raise LengthMismatch("member DRs must be a vector")
    return 2.0 * float(w @ dr)


def _check_tandem(w, tandem):
    T = np.asarray(tandem, dtype=np.float64)
    if T.shape != (w.shape[0], w.shape[0]):
        raise LengthMismatch(f"tandem matrix shape {T.shape} does not match {w.shape[0]} weights")
    if not np.array_equal(T, T.T):
        raise AsymmetricMatrix("tandem matrix must be symmetric")
    return T


def second_order_bound(weights, tandem) -> float:
    w = np.asarray(weights, dtype=np.float64)
    T = _check_tandem(w, tandem)
    return 4.0 * float(w @ T @ w)


def c_tandem_bound(weights, member_drs, tandem) -> float | None:
    """Chebyshev-Cantelli bound; ``None`` (inapplicable) unless the mean member DR is below 1/2."""
    w, dr = _weights_and(weights, member_drs, "member DR vector")
    T = _check_tandem(w, tandem)
    mu = float(w @ dr)
    if mu >= 0.5:
        return None
    t = float(w @ T @ w)
    return (t - mu * mu) / (t - mu + 0.25)


def second_moment_identity(weights, per_instance_losses) -> dict:
    """Both sides of E_rows[(Σ_j w_j ℓ_ij)²] = Σ_jj' w_j w_j' E_rows[ℓ_ij ℓ_ij'].

    Row means use ``math.fsum`` so the two sides agree to rounding.
    """
    L = np.asarray(per_instance_losses, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if L.ndim != 2 or w.ndim != 1 or L.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"loss matrix {L.shape} does not match {w.shape[0]} weights")
    if not np.all((L == 0) | (L == 1)):
        raise InvalidInput("per-instance losses must be 0 or 1")
    n, m = L.shape
    lhs = math.fsum(float(v) ** 2 for v in L @ w) / n
    co = L.T @ L  # integer-valued co-occurrence counts, exact in float64
    rhs = math.fsum(float(w[i] * w[j] * co[i, j]) for i in range(m) for j in range(m)) / n
    return {"lhs": lhs, "rhs": rhs}


def _check_delta(delta):
    if not 0.0 < delta <= 1.0:
        raise InvalidDelta(f"delta must lie in (0, 1], got {delta}")


def hoeffding_single(n: int, delta: float) -> float:
    _check_delta(delta)
    if n < 1:
        raise InvalidInput("n must be >= 1")
    return math.sqrt(math.log(1.0 / delta) / (2 * n))


def hoeffding_class(n: int, delta: float, class_size: int) -> float:
    _check_delta(delta)
    if n < 1 or class_size < 1:
        raise InvalidInput("n and class_size must be >= 1")
    return math.sqrt(math.log(class_size / delta) / (2 * n))


def mcallester_bound(n: int, delta: float, kl: float) -> float:
    _check_delta(delta)
    if n < 1:
        raise InvalidInput("n must be >= 1")
    if not math.isfinite(kl):
        raise InvalidInput("kl must be finite")
    if kl < 0:
        raise NegativeKL(f"KL divergence cannot be negative, got {kl}")
    return math.sqrt((kl + math.log(2.0 * math.sqrt(n) / delta)) / (2 * n))


def kl_discrete(rho, pi) -> float:
    rho = np.asarray(rho, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    if rho.shape != pi.shape or rho.ndim != 1:
        raise LengthMismatch("distributions must have the same support size")
    for p in (rho, pi):
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise NotADistribution("expected a non-negative vector summing to 1")
    support = rho > 0
    if np.any(pi[support] == 0):
        raise DivergentSupport("rho puts mass where pi has none")
    return math.fsum(float(r * math.log(r / q)) for r, q in zip(rho[support], pi[support]))


def pac_bound(empirical: float, n: int, delta: float, class_size: int | None = None, kl: float | None = None) -> PacBoundReport:
    """Empirical DR plus the matching slack (single, finite-class or KL form)."""
    if kl is not None:
        slack, kind = mcallester_bound(n, delta, kl), "mcallester"
    elif class_size is not None:
        slack, kind = hoeffding_class(n, delta, class_size), "hoeffding-class"
    else:
        slack, kind = hoeffding_single(n, delta), "hoeffding-single"
    return PacBoundReport(float(empirical), slack, float(empirical) + slack, n, delta, kind, class_size, kl)


def hoeffding_monte_carlo(p: float, n: int, delta: float, trials: int, seed: int) -> float:
    """Fraction of size-``n`` Bernoulli(``p``) samples whose Hoeffding bound misses ``p``."""
    rng = np.random.default_rng(seed)
    emp = rng.binomial(n, p, size=trials) / n
    return float(np.mean(p > emp + hoeffding_single(n, delta)))


def audit_bounds(e: WeightedEnsemble | None, profile: EnsembleProfile) -> OracleBoundReport:
    """Evaluate all oracle bounds on the profile's own sample.

    ``e`` is only used to confirm that the profile's weights are the
    ensemble's; pass ``None`` for profiles of pruned sub-ensembles.
    """
    w = profile.weights
    if e is not None and not np.array_equal(e.weights, w):
        raise InvalidInput("profile was not built from this ensemble")
    F = profile.flips
    drs = F.mean(axis=1)
    T = tandem_matrix(F)
    ens_dr = float(np.mean(profile.vote_orig != profile.vote_pert))
    fo = first_order_bound(w, drs)
    so = second_order_bound(w, T)
    ct = c_tandem_bound(w, drs, T)
    return OracleBoundReport(
        ensemble_dr=ens_dr,
        expected_member_dr=float(w @ drs),
        expected_tandem=float(w @ T @ w),
        first_order=fo,
        second_order=so,
        c_tandem=ct,
        first_order_holds=ens_dr <= fo,
        second_order_holds=ens_dr <= so,
        c_tandem_holds=None if ct is None else ens_dr <= ct,
        n=profile.n,
        m=profile.m,
    )
