"""Elitist genetic algorithm and the command encodings of the three sub-problems.

Genomes are rows of a float array. Each encoding knows how to sample,
recombine, mutate, repair and decode its rows, so the engine in
:func:`evolve` stays generic. Every row handed to an objective decodes to
a command that satisfies enable/deadline/completion by construction.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class EncodingError(ValueError):
    pass


class InfeasibleRequestError(ValueError):
    """No command in the feasible window can complete the request."""


@dataclass(frozen=True)
class GaConfig:
    population_size: int
    elite_count: int
    crossover_fraction: float
    objective_tolerance: float
    max_generations: int = 500
    max_stalled: int = 50
    time_limit: float = 30.0

    def __post_init__(self):
        if not 0 <= self.elite_count < self.population_size:
            raise ValueError("elite_count must be in [0, population_size)")
        if not 0.0 <= self.crossover_fraction <= 1.0:
            raise ValueError("crossover_fraction must lie in [0, 1]")


# Settings per sub-problem, HVAC split by season.
GA_SETTINGS = {
    "hvac_summer": GaConfig(100, 10, 0.4, 1e-2),
    "hvac_winter": GaConfig(50, 10, 0.2, 1e-3),
    "xev": GaConfig(250, 15, 0.4, 1e-4),
    "ld": GaConfig(250, 20, 0.2, 1e-3),
}


# ---------------------------------------------------------------------------
# Decoders
# ---------------------------------------------------------------------------


def decode_xev(v: Sequence[int], n_h: int) -> np.ndarray:
    """Binary charging command with ones exactly at the listed steps."""
    v = np.asarray(v, dtype=int)
    if v.size and (v.min() < 0 or v.max() >= n_h):
        raise EncodingError(f"activation steps {v.tolist()} outside [0, {n_h})")
    if np.unique(v).size != v.size:
        raise EncodingError(f"duplicate activation steps in {v.tolist()}")
    u = np.zeros(n_h, dtype=int)
    u[v] = 1
    return u


def decode_block(k_start: int, c: int, n_h: int) -> np.ndarray:
    """Single contiguous block of ``c`` ones starting at ``k_start``."""
    if k_start < 0 or c < 0 or k_start + c > n_h:
        raise EncodingError(f"block [{k_start}, {k_start + c}) exceeds horizon of {n_h} steps")
    u = np.zeros(n_h, dtype=int)
    u[k_start:k_start + c] = 1
    return u


def block_starts(enable: int, deadline: int, c: int, n_h: int, forbidden=()) -> np.ndarray:
    """Feasible starts of a non-interruptible block inside [enable, deadline) and the horizon.

    ``deadline`` is exclusive: the last active step is ``deadline - 1``.
    """
    lo = max(enable, 0)
    hi = min(deadline, n_h) - c
    starts = np.arange(lo, hi + 1)
    if len(forbidden) and starts.size:
        bad = np.zeros(n_h + c + 1, dtype=bool)
        bad[np.asarray(sorted(forbidden), dtype=int)] = True
        csum = np.concatenate([[0], np.cumsum(bad)])
        starts = starts[(csum[starts + c] - csum[starts]) == 0]
    return starts


def activation_window(enable: int, deadline: int, n_h: int, forbidden=()) -> np.ndarray:
    steps = np.arange(max(enable, 0), min(deadline, n_h))
    if len(forbidden):
        steps = steps[~np.isin(steps, list(forbidden))]
    return steps


# ---------------------------------------------------------------------------
# Encodings
# ---------------------------------------------------------------------------


class _EsGenes:
    """Storage current genes: real amperes in [lo, hi], or snapped to ``levels``."""

    def __init__(self, n: int, lo: float, hi: float, levels=None):
        self.n = n
        self.lo = float(lo)
        self.hi = float(hi)
        self.levels = None if levels is None else np.asarray(levels, dtype=float)

    def sample(self, rng, shape):
        if self.levels is not None:
            return rng.choice(self.levels, size=shape)
        return rng.uniform(self.lo, self.hi, size=shape)

    def repair(self, g):
        if self.levels is not None:
            idx = np.abs(g[..., None] - self.levels).argmin(-1)
            return self.levels[idx]
        return np.clip(g, self.lo, self.hi)


def _single_point(a, b, rng):
    n, L = a.shape
    if L < 2:
        return a.copy()
    cut = rng.integers(1, L, size=n)
    mask = np.arange(L)[None, :] < cut[:, None]
    return np.where(mask, a, b)


def _mutation_mask(rng, n, L):
    """Per-gene reset at rate 1/L, at least one gene per child."""
    mask = rng.random((n, L)) < 1.0 / max(L, 1)
    forced = rng.integers(0, L, size=n)
    mask[np.arange(n), forced] = True
    return mask


class HvacEsEncoding:
    """Direct encoding: HVAC level indices followed by storage currents (length 2N)."""

    kind = "direct"

    def __init__(self, n: int, levels: Sequence[float], es_lo: float, es_hi: float, es_levels=None):
        self.n = n
        self.levels = np.asarray(levels, dtype=float)
        self.es = _EsGenes(n, es_lo, es_hi, es_levels)
        self.length = 2 * n

    def sample(self, rng, size):
        pop = np.empty((size, self.length))
        pop[:, :self.n] = rng.integers(0, self.levels.size, size=(size, self.n))
        pop[:, self.n:] = self.es.sample(rng, (size, self.n))
        return pop

    def repair(self, pop, rng=None):
        pop[:, :self.n] = np.clip(np.rint(pop[:, :self.n]), 0, self.levels.size - 1)
        pop[:, self.n:] = self.es.repair(pop[:, self.n:])
        return pop

    def crossover(self, a, b, rng):
        return _single_point(a, b, rng)

    def mutate(self, parents, rng):
        child = parents.copy()
        mask = _mutation_mask(rng, *child.shape)
        fresh = self.sample(rng, child.shape[0])
        child[mask] = fresh[mask]
        return child

    def decode(self, pop):
        idx = pop[:, :self.n].astype(int)
        return {"hvac": self.levels[idx], "hvac_idx": idx, "es": pop[:, self.n:]}


class ActivationEncoding:
    """Vehicle charging as a set of C activation steps, followed by N storage currents."""

    kind = "activation_times"

    def __init__(self, n: int, allowed: Sequence[int], c: int, es_lo: float, es_hi: float, es_levels=None):
        self.n = n
        self.allowed = np.asarray(sorted(allowed), dtype=int)
        self.c = int(c)
        if self.c > self.allowed.size:
            raise InfeasibleRequestError(
                f"{self.c} charging steps requested but only {self.allowed.size} feasible steps remain"
            )
        self.es = _EsGenes(n, es_lo, es_hi, es_levels)
        self.length = self.c + n

    def sample(self, rng, size):
        pop = np.empty((size, self.length))
        if self.c:
            keys = rng.random((size, self.allowed.size))
            pick = np.argsort(keys, axis=1)[:, :self.c]
            pop[:, :self.c] = np.sort(self.allowed[pick], axis=1)
        pop[:, self.c:] = self.es.sample(rng, (size, self.n))
        return pop

    def repair(self, pop, rng):
        c = self.c
        if c:
            acts = pop[:, :c]
            # snap each gene to the nearest feasible step
            pos = np.clip(np.searchsorted(self.allowed, acts), 0, self.allowed.size - 1)
            left = np.clip(pos - 1, 0, self.allowed.size - 1)
            choose_left = np.abs(self.allowed[left] - acts) <= np.abs(self.allowed[pos] - acts)
            acts = np.where(choose_left, self.allowed[left], self.allowed[pos])
            acts = np.sort(acts, axis=1)
            dup = np.zeros_like(acts, dtype=bool)
            dup[:, 1:] = acts[:, 1:] == acts[:, :-1]
            for i in np.flatnonzero(dup.any(axis=1)):
                keep = np.unique(acts[i])
                free = np.setdiff1d(self.allowed, keep, assume_unique=True)
                extra = rng.choice(free, size=c - keep.size, replace=False)
                acts[i] = np.sort(np.concatenate([keep, extra]))
            pop[:, :c] = acts
        pop[:, c:] = self.es.repair(pop[:, c:])
        return pop

    def crossover(self, a, b, rng):
        c = self.c
        child = np.empty_like(a)
        if c:
            swap = rng.random((a.shape[0], c)) < 0.5
            child[:, :c] = np.where(swap, b[:, :c], a[:, :c])
        child[:, c:] = _single_point(a[:, c:], b[:, c:], rng)
        return child

    def mutate(self, parents, rng):
        child = parents.copy()
        mask = _mutation_mask(rng, *child.shape)
        fresh = np.empty_like(child)
        if self.c:
            fresh[:, :self.c] = rng.choice(self.allowed, size=(child.shape[0], self.c))
        fresh[:, self.c:] = self.es.sample(rng, (child.shape[0], self.n))
        child[mask] = fresh[mask]
        return child

    def decode(self, pop):
        acts = np.sort(pop[:, :self.c].astype(int), axis=1)
        u = np.zeros((pop.shape[0], self.n), dtype=int)
        if self.c:
            np.put_along_axis(u, acts, 1, axis=1)
        return {"xev": u, "activations": acts, "es": pop[:, self.c:]}


class StartTimeEncoding:
    """One start step per pending non-interruptible appliance, then N storage currents."""

    kind = "start_times"

    def __init__(self, n: int, starts: dict, es_lo: float, es_hi: float, es_levels=None):
        self.n = n
        self.names = list(starts)
        self.starts = {k: np.asarray(v, dtype=int) for k, v in starts.items()}
        for k, v in self.starts.items():
            if v.size == 0:
                raise InfeasibleRequestError(f"no feasible start for {k}")
        self.m = len(self.names)
        self.es = _EsGenes(n, es_lo, es_hi, es_levels)
        self.length = self.m + n

    def sample(self, rng, size):
        pop = np.empty((size, self.length))
        for j, k in enumerate(self.names):
            pop[:, j] = rng.choice(self.starts[k], size=size)
        pop[:, self.m:] = self.es.sample(rng, (size, self.n))
        return pop

    def repair(self, pop, rng=None):
        for j, k in enumerate(self.names):
            s = self.starts[k]
            idx = np.abs(pop[:, j, None] - s[None, :]).argmin(axis=1)
            pop[:, j] = s[idx]
        pop[:, self.m:] = self.es.repair(pop[:, self.m:])
        return pop

    def crossover(self, a, b, rng):
        child = np.empty_like(a)
        m = self.m
        if m:
            swap = rng.random((a.shape[0], m)) < 0.5
            child[:, :m] = np.where(swap, b[:, :m], a[:, :m])
        child[:, m:] = _single_point(a[:, m:], b[:, m:], rng)
        return child

    def mutate(self, parents, rng):
        child = parents.copy()
        mask = _mutation_mask(rng, *child.shape)
        fresh = self.sample(rng, child.shape[0])
        child[mask] = fresh[mask]
        return child

    def decode(self, pop):
        return {"starts": {k: pop[:, j].astype(int) for j, k in enumerate(self.names)},
                "es": pop[:, self.m:]}


def repair_or_reject(child: np.ndarray, encoding, rng=None) -> np.ndarray:
    """Restore feasibility of a single genome (or a stack of genomes)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    one = child.ndim == 1
    pop = np.array(child, dtype=float, ndmin=2, copy=True)
    pop = encoding.repair(pop, rng)
    return pop[0] if one else pop


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


@dataclass
class GaResult:
    best: np.ndarray
    objective: float
    generations: int
    stalled: int
    timed_out: bool
    history: list = field(default_factory=list)
    elapsed: float = 0.0
    evaluations: int = 0


def init_population(cfg: GaConfig, encoding, seed, seeds: Optional[np.ndarray] = None) -> np.ndarray:
    """Uniform feasible sampling; optional seed genomes replace the first rows."""
    rng = np.random.default_rng(seed)
    pop = encoding.sample(rng, cfg.population_size)
    if seeds is not None and len(seeds):
        extra = encoding.repair(np.array(seeds, dtype=float, ndmin=2), rng)
        k = min(len(extra), cfg.population_size)
        pop[:k] = extra[:k]
    return pop


def evolve(pop: np.ndarray, cfg: GaConfig, objective: Callable[[np.ndarray], np.ndarray], seed,
           encoding) -> GaResult:
    """Run the elitist GA from an initial population and return the best-ever genome.

    Each generation keeps ``elite_count`` lowest-cost individuals, which are
    also the parents; ``crossover_fraction`` of the remaining slots are
    filled by crossover of two elites and the rest by mutating one elite.
    A generation counts as stalled when the best objective improves by no
    more than ``objective_tolerance * max(1, |best|)``.
    """
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    pop = np.array(pop, dtype=float, copy=True)
    fit = np.asarray(objective(pop), dtype=float)
    n_eval = len(pop)
    P, E = cfg.population_size, max(cfg.elite_count, 1)
    n_child = P - E
    n_cx = int(round(cfg.crossover_fraction * n_child))
    n_mut = n_child - n_cx
    order = np.argsort(fit, kind="stable")
    best = float(fit[order[0]])
    history = [best]
    gen = stalled = 0
    timed_out = False
    while True:
        if gen >= cfg.max_generations or stalled >= cfg.max_stalled:
            break
        if time.perf_counter() - t0 > cfg.time_limit:
            timed_out = True
            break
        elites = pop[order[:E]]
        elite_fit = fit[order[:E]]
        kids = []
        if n_cx:
            i1 = rng.integers(0, E, n_cx)
            i2 = rng.integers(0, E, n_cx)
            kids.append(encoding.crossover(elites[i1], elites[i2], rng))
        if n_mut:
            kids.append(encoding.mutate(elites[rng.integers(0, E, n_mut)], rng))
        if kids:
            children = encoding.repair(np.vstack(kids), rng)
            pop = np.vstack([elites, children])
            fit = np.concatenate([elite_fit, objective(children)])
            n_eval += len(children)
        else:
            pop, fit = elites, elite_fit
        order = np.argsort(fit, kind="stable")
        new_best = float(fit[order[0]])
        if best - new_best > cfg.objective_tolerance * max(1.0, abs(new_best)):
            stalled = 0
        else:
            stalled += 1
        best = min(best, new_best)
        history.append(best)
        gen += 1
    return GaResult(pop[order[0]].copy(), float(fit[order[0]]), gen, stalled, timed_out, history,
                    time.perf_counter() - t0, n_eval)
