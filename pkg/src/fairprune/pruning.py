"""Ensemble pruning that trades off error against discriminative risk.

Three pruners share one objective pair, ``(error, DR)`` of the uniform vote
over the selected members:

* :func:`poaf` keeps a Pareto archive of selector vectors and improves it by
  bit-flip mutation plus one-member-more / one-member-less neighbours;
* :func:`epaf_c` greedily grows a sub-ensemble under the pairwise loss
  ``λ/2 (err_f + err_g) + (1-λ) tandem_fg``;
* :func:`epaf_d` runs the greedy step on random member groups and then once
  more on the union of the group winners.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .ensemble import EnsembleProfile, vote_matrix
from .errors import EmptySelector, InvalidInput, InvalidLambda, LengthMismatch
from .metrics import PredictionProfile, tandem_matrix


class Dominance(enum.Enum):
    STRICT = "strict"
    WEAK_ONLY = "weak"
    NONE = "none"


@dataclass(frozen=True)
class BiObjective:
    err: float
    dr: float


def dominates(a: BiObjective, b: BiObjective) -> Dominance:
    if a.err <= b.err and a.dr <= b.dr:
        if a.err < b.err or a.dr < b.dr:
            return Dominance.STRICT
        return Dominance.WEAK_ONLY
    return Dominance.NONE


def weakly_dominates(a: BiObjective, b: BiObjective) -> bool:
    return a.err <= b.err and a.dr <= b.dr


@dataclass(frozen=True)
class ArchiveEntry:
    bits: tuple
    objective: BiObjective


class ParetoArchive:
    """Mutually non-dominated selector vectors, kept in insertion order."""

    def __init__(self, entries=()):
        self.entries: list[ArchiveEntry] = []
        for e in entries:
            self.insert(e.bits, e.objective)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def insert(self, bits, objective: BiObjective) -> bool:
        """Add a candidate unless an entry strictly dominates it.

        On acceptance every entry the candidate weakly dominates (including
        an entry with the same bits) is dropped.
        """
        bits = tuple(int(b) for b in bits)
        for z in self.entries:
            if dominates(z.objective, objective) is Dominance.STRICT:
                return False
        self.entries = [
            z for z in self.entries if not weakly_dominates(objective, z.objective) and z.bits != bits
        ]
        self.entries.append(ArchiveEntry(bits, objective))
        return True

    def copy(self) -> "ParetoArchive":
        out = ParetoArchive()
        out.entries = list(self.entries)
        return out


def archive_insert(archive: ParetoArchive, bits, objective: BiObjective) -> tuple[ParetoArchive, bool]:
    """Functional form of :meth:`ParetoArchive.insert`; the input archive is untouched."""
    out = archive.copy()
    accepted = out.insert(bits, objective)
    return out, accepted


@dataclass(frozen=True)
class PruneConfig:
    k: int
    lam: float = 0.5
    n_m: int = 1
    seed: int = 0
    iterations_multiplier: int = 1

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise InvalidLambda(f"lambda must lie in (0, 1), got {self.lam}")
        if self.k < 1:
            raise InvalidInput("k must be >= 1")
        if self.n_m < 1:
            raise InvalidInput("n_m must be >= 1")
        if self.iterations_multiplier < 1:
            raise InvalidInput("iterations_multiplier must be >= 1")

    def check(self, m: int):
        if self.k > m:
            raise InvalidInput(f"k={self.k} exceeds ensemble size {m}")
        if self.n_m > m:
            raise InvalidInput(f"n_m={self.n_m} exceeds ensemble size {m}")


@dataclass(frozen=True)
class PruneResult:
    algorithm: str
    selected: tuple
    objective: BiObjective
    loss: float
    config: PruneConfig
    order: tuple = ()
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "selected": list(self.selected),
            "order": list(self.order),
            "size": len(self.selected),
            "objective": {"err": self.objective.err, "dr": self.objective.dr},
            "loss": self.loss,
            "prune_config": asdict(self.config),
            "seed": self.config.seed,
            **({"extra": self.extra} if self.extra else {}),
        }


def pair_loss(err_f: float, err_g: float, tandem_fg: float, lam: float) -> float:
    if not 0.0 < lam < 1.0:
        raise InvalidLambda(f"lambda must lie in (0, 1), got {lam}")
    return lam / 2 * (err_f + err_g) + (1 - lam) * tandem_fg


class MemberPool:
    """Cached member predictions on a labelled sample, shared by all pruners."""

    def __init__(self, members, labels, n_classes: int | None = None):
        if isinstance(members, EnsembleProfile):
            orig, pert = members.orig, members.pert
            n_classes = n_classes or members.n_classes
        else:
            members = list(members)
            if not members:
                raise InvalidInput("no members")
            if isinstance(members[0], PredictionProfile):
                orig = np.vstack([p.preds_orig for p in members])
                pert = np.vstack([p.preds_pert for p in members])
            else:
                orig, pert = (np.asarray(a) for a in zip(*members))
        self.orig = np.asarray(orig, dtype=np.int64)
        self.pert = np.asarray(pert, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.orig.shape != self.pert.shape or self.orig.shape[1] != self.labels.shape[0]:
            raise LengthMismatch("member predictions and labels disagree in length")
        if n_classes is None:
            n_classes = max(2, int(max(self.orig.max(), self.pert.max(), self.labels.max())) + 1)
        self.n_classes = int(n_classes)
        self.m, self.n = self.orig.shape
        self.member_err = (self.orig != self.labels).mean(axis=1)
        self.tandem = tandem_matrix(self.orig != self.pert)
        self._cache: dict[tuple, BiObjective] = {}

    def objective(self, indices) -> BiObjective:
        key = tuple(sorted(int(i) for i in indices))
        if not key:
            raise EmptySelector("selector picks no member")
        hit = self._cache.get(key)
        if hit is None:
            idx = list(key)
            w = np.full(len(idx), 1.0 / len(idx))
            vo = vote_matrix(self.orig[idx], w, self.n_classes)
            vp = vote_matrix(self.pert[idx], w, self.n_classes)
            hit = BiObjective(float(np.mean(vo != self.labels)), float(np.mean(vo != vp)))
            self._cache[key] = hit
        return hit

    def loss(self, indices, lam: float) -> float:
        g = self.objective(indices)
        return lam * g.err + (1 - lam) * g.dr

    def pair_matrix(self, lam: float) -> np.ndarray:
        if not 0.0 < lam < 1.0:
            raise InvalidLambda(f"lambda must lie in (0, 1), got {lam}")
        e = self.member_err
        return lam / 2 * (e[:, None] + e[None, :]) + (1 - lam) * self.tandem


def _indices(sel) -> list[int]:
    if isinstance(sel, np.ndarray):
        return np.flatnonzero(sel).tolist()
    return sorted(int(i) for i in sel)


def subensemble_loss(sel, members, labels, lam: float) -> float:
    """λ·error + (1-λ)·DR of the uniform vote over the selected members.

    ``sel`` is a boolean/0-1 numpy mask or a collection of member indices.
    """
    if not 0.0 < lam < 1.0:
        raise InvalidLambda(f"lambda must lie in (0, 1), got {lam}")
    pool = members if isinstance(members, MemberPool) else MemberPool(members, labels)
    return pool.loss(_indices(sel), lam)


def _feasible(bits, k) -> bool:
    c = int(bits.sum())
    return 1 <= c <= k


def _neighbours(bits):
    """One member fewer (by index), then one member more (by index)."""
    on = np.flatnonzero(bits)
    off = np.flatnonzero(bits == 0)
    out = []
    for i in on:
        b = bits.copy()
        b[i] = 0
        out.append(b)
    for i in off:
        b = bits.copy()
        b[i] = 1
        out.append(b)
    return out


def poaf(pool: MemberPool, cfg: PruneConfig) -> PruneResult:
    """Pareto-archive pruning.

    Runs ``k * iterations_multiplier`` rounds; selectors that are empty or
    larger than ``k`` are skipped wherever they arise.
    """
    m, k, lam = pool.m, cfg.k, cfg.lam
    cfg.check(m)
    rng = np.random.default_rng(cfg.seed)

    def G(bits):
        return pool.objective(np.flatnonzero(bits))

    def L(bits):
        return pool.loss(np.flatnonzero(bits), lam)

    start = np.zeros(m, dtype=np.int8)
    start[rng.choice(m, size=k, replace=False)] = 1
    archive = ParetoArchive()
    archive.insert(start, G(start))
    accepted = 0
    for _ in range(k * cfg.iterations_multiplier):
        r = np.array(archive.entries[int(rng.integers(len(archive)))].bits, dtype=np.int8)
        mutated = r ^ (rng.random(m) < 1.0 / m).astype(np.int8)
        if not _feasible(mutated, k):
            continue
        if not archive.insert(mutated, G(mutated)):
            continue
        accepted += 1
        near = [v for v in _neighbours(mutated) if _feasible(v, k)]
        near.sort(key=L)
        for v in near:
            archive.insert(v, G(v))

    losses = [L(np.array(z.bits)) for z in archive]
    best = archive.entries[int(np.argmin(losses))]
    chosen = tuple(np.flatnonzero(best.bits).tolist())
    return PruneResult(
        "poaf",
        chosen,
        best.objective,
        float(min(losses)),
        cfg,
        order=chosen,
        extra={"archive_size": len(archive), "accepted_mutations": accepted},
    )


def greedy_order(pool: MemberPool, candidates, k: int, lam: float) -> list[int]:
    """Greedy selection order over ``candidates`` (lowest index wins ties)."""
    cand = sorted(int(c) for c in candidates)
    if not cand:
        raise InvalidInput("no candidate members")
    P = pool.pair_matrix(lam)
    diag = P[cand, cand]
    first = cand[int(np.argmin(diag))]
    chosen = [first]
    remaining = [c for c in cand if c != first]
    score = {c: P[c, first] for c in remaining}
    while len(chosen) < k and remaining:
        nxt = min(remaining, key=lambda c: (score[c], c))
        chosen.append(nxt)
        remaining.remove(nxt)
        for c in remaining:
            score[c] = score[c] + P[c, nxt]
    return chosen


def epaf_c(pool: MemberPool, k: int, lam: float = 0.5, candidates=None) -> PruneResult:
    if candidates is None:
        candidates = range(pool.m)
    if k < 1:
        raise InvalidInput("k must be >= 1")
    order = greedy_order(pool, candidates, k, lam)
    chosen = tuple(sorted(order))
    return PruneResult("epaf-c", chosen, pool.objective(chosen), pool.loss(chosen, lam), PruneConfig(k, lam), order=tuple(order))


def partition_members(m: int, n_m: int, seed: int) -> list[list[int]]:
    """Random split of ``range(m)`` into ``n_m`` groups whose sizes differ by at most one."""
    perm = np.random.default_rng(seed).permutation(m)
    return [sorted(g.tolist()) for g in np.array_split(perm, n_m)]


def epaf_d(pool: MemberPool, cfg: PruneConfig, n_jobs: int = 1) -> PruneResult:
    cfg.check(pool.m)
    k, lam = cfg.k, cfg.lam
    groups = partition_members(pool.m, cfg.n_m, cfg.seed)

    def run(g):
        return greedy_order(pool, g, k, lam)

    if n_jobs > 1 and len(groups) > 1:
        # warm the shared caches before fanning out
        pool.pair_matrix(lam)
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            local = list(ex.map(run, groups))
    else:
        local = [run(g) for g in groups]
    union = sorted({i for h in local for i in h})
    merged = greedy_order(pool, union, k, lam)
    options = [tuple(sorted(h)) for h in local] + [tuple(sorted(merged))]
    losses = [pool.loss(h, lam) for h in options]
    best = int(np.argmin(losses))
    chosen = options[best]
    return PruneResult(
        "epaf-d",
        chosen,
        pool.objective(chosen),
        float(losses[best]),
        cfg,
        order=tuple(local[best] if best < len(local) else merged),
        extra={"groups": groups, "winner": "merged" if best == len(local) else f"group-{best}"},
    )


ALGORITHMS = ("poaf", "epaf-c", "epaf-d")


def prune(pool: MemberPool, algorithm: str, cfg: PruneConfig, n_jobs: int = 1) -> PruneResult:
    cfg.check(pool.m)
    if algorithm == "poaf":
        return poaf(pool, cfg)
    if algorithm == "epaf-c":
        res = epaf_c(pool, cfg.k, cfg.lam)
        return PruneResult(res.algorithm, res.selected, res.objective, res.loss, cfg, res.order)
    if algorithm == "epaf-d":
        return epaf_d(pool, cfg, n_jobs)
    raise InvalidInput(f"unknown pruning algorithm {algorithm!r}; expected one of {ALGORITHMS}")


__all__: Sequence[str] = [
    "ArchiveEntry",
    "BiObjective",
    "Dominance",
    "MemberPool",
    "ParetoArchive",
    "PruneConfig",
    "PruneResult",
    "archive_insert",
    "dominates",
    "epaf_c",
    "epaf_d",
    "pair_loss",
    "partition_members",
    "poaf",
    "prune",
    "subensemble_loss",
]
