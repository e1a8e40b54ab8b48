"""Exact event-driven simulation of the absorbed chain and of its Fleming-Viot
N-particle system with rebirths."""
from __future__ import annotations

import copy
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence, Union

from .errors import ConfigError
from .measures import EmpiricalMeasure, tv_distance
from .model import BirthDeathModel
from .rng import RandomStream, replica_streams
from .validate import require_valid

logger = logging.getLogger(__name__)

BIRTH, DEATH, ABSORPTION, REBIRTH = "birth", "death", "absorption", "rebirth"
_RESYNC_EVERY = 8192


class PathEvent(NamedTuple):
    time: float
    kind: str
    particle: int
    origin: int
    target: int
    source: Optional[int] = None


class _RateCache(dict):
    """state -> (b, d, b + d), filled on first use."""

    def __init__(self, model: BirthDeathModel):
        super().__init__()
        self.model = model

    def __missing__(self, state: int):
        b, d = self.model.rate_pair(state)
        entry = (b, d, b + d)
        self[state] = entry
        return entry


# ---------------------------------------------------------------- single chain

@dataclass
class BdPath:
    events: list[PathEvent]
    absorbed: bool
    T0: Optional[float]
    position: int


def simulate_bd(model: BirthDeathModel, x0: int, t_max: float, rng: RandomStream,
                max_events: Optional[int] = None) -> BdPath:
    """Hold Exp(b_i + d_i) in state i, then step up w.p. b_i/(b_i + d_i), else down."""
    require_valid(model)
    if x0 < 1:
        raise ValueError("x0 must be a state >= 1")
    rates = _RateCache(model)
    t, x = 0.0, int(x0)
    events: list[PathEvent] = []
    while max_events is None or len(events) < max_events:
        b, _, total = rates[x]
        t_next = t + rng.exponential(total)
        if t_next > t_max:
            break
        t = t_next
        if rng.random() * total < b:
            new, kind = x + 1, BIRTH
        else:
            new = x - 1
            kind = ABSORPTION if new == 0 else DEATH
        events.append(PathEvent(t, kind, 0, x, new))
        x = new
        if x == 0:
            return BdPath(events, True, t, 0)
    return BdPath(events, False, None, x)


# ---------------------------------------------------------------- particle system

@dataclass(frozen=True)
class ParticleSystemState:
    positions: tuple[int, ...]
    time: float
    rebirth_count: int
    rng: RandomStream = field(compare=False)

    @property
    def N(self) -> int:
        return len(self.positions)


class FlemingViotSystem:
    """N particles evolving as the chain; a particle that hits 0 jumps at once
    onto the position of a uniformly chosen other particle.

    Particles are bucketed by state so that picking the next particle with
    probability proportional to b_x + d_x costs one pass over occupied states,
    and the total rate R is kept up to date incrementally.
    """

    def __init__(self, model: BirthDeathModel, positions: Sequence[int], rng: RandomStream,
                 time: float = 0.0, rebirth_count: int = 0):
        if len(positions) < 2:
            raise ValueError("a Fleming-Viot system needs N >= 2 particles")
        if min(positions) < 1:
            raise ValueError("initial positions must lie in N* (>= 1)")
        self.model = model
        self.rng = rng
        self.time = float(time)
        self.rebirth_count = int(rebirth_count)
        self.positions = [int(x) for x in positions]
        self.N = len(self.positions)
        self.event_count = 0
        self.on_count_change: Optional[Callable[[int, int, float], None]] = None
        self._rates = _RateCache(model)
        self._buckets: dict[int, list[int]] = {}
        self._slot = [0] * self.N
        for p, s in enumerate(self.positions):
            self._insert(p, s)
        self.total_rate = self._recompute_rate()

    def state(self) -> ParticleSystemState:
        return ParticleSystemState(tuple(self.positions), self.time, self.rebirth_count, self.rng)

    def counts(self) -> dict[int, int]:
        return {s: len(bucket) for s, bucket in self._buckets.items()}

    def measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.counts())

    def _recompute_rate(self) -> float:
        return sum(len(bucket) * self._rates[s][2] for s, bucket in self._buckets.items())

    def _insert(self, p: int, s: int):
        bucket = self._buckets.get(s)
        if bucket is None:
            bucket = self._buckets[s] = []
        self._slot[p] = len(bucket)
        bucket.append(p)

    def _remove(self, p: int, s: int):
        bucket = self._buckets[s]
        i = self._slot[p]
        last = bucket.pop()
        if last != p:
            bucket[i] = last
            self._slot[last] = i
        if not bucket:
            del self._buckets[s]

    def _relocate(self, p: int, old: int, new: int):
        hook = self.on_count_change
        if hook is not None:
            hook(old, len(self._buckets[old]), self.time)
            hook(new, len(self._buckets.get(new, ())), self.time)
        self._remove(p, old)
        self._insert(p, new)
        self.positions[p] = new
        self.total_rate += self._rates[new][2] - self._rates[old][2]

    def _pick_particle(self) -> int:
        u = self.rng.random() * self.total_rate
        bucket = None
        for s, bucket in self._buckets.items():
            r = self._rates[s][2]
            w = len(bucket) * r
            if u < w:
                return bucket[min(int(u / r), len(bucket) - 1)]
            u -= w
        # rounding left u past the last bucket
        return bucket[-1]

    def apply_move(self, p: int, up: bool) -> PathEvent:
        """Move particle p one step at the current time, rebirthing it if it reaches 0."""
        old = self.positions[p]
        if up:
            self._relocate(p, old, old + 1)
            return PathEvent(self.time, BIRTH, p, old, old + 1)
        if old > 1:
            self._relocate(p, old, old - 1)
            return PathEvent(self.time, DEATH, p, old, old - 1)
        j = self.rng.index(self.N - 1)
        if j >= p:
            j += 1
        target = self.positions[j]
        self.rebirth_count += 1
        if target != old:
            self._relocate(p, old, target)
        return PathEvent(self.time, REBIRTH, p, old, target, j)

    def step(self, horizon: float = float("inf")) -> Optional[PathEvent]:
        """Advance to the next event, or to ``horizon`` if the next event falls after it."""
        t_next = self.time + self.rng.exponential(self.total_rate)
        if t_next > horizon:
            self.time = horizon
            return None
        self.time = t_next
        p = self._pick_particle()
        b, _, total = self._rates[self.positions[p]]
        event = self.apply_move(p, self.rng.random() * total < b)
        self.event_count += 1
        if self.event_count % _RESYNC_EVERY == 0:
            self.total_rate = self._recompute_rate()
        return event


def fv_step(state: ParticleSystemState, model: BirthDeathModel):
    """One event of the particle system; the input state (and its stream) is left untouched."""
    if state.N < 2:
        raise ValueError("N must be at least 2")
    system = FlemingViotSystem(model, state.positions, copy.deepcopy(state.rng),
                               state.time, state.rebirth_count)
    event = system.step()
    return system.state(), event


# ---------------------------------------------------------------- runs

class _Occupation:
    """Time integral of the per-state counts over [start, end]."""

    __slots__ = ("start", "end", "acc", "last")

    def __init__(self, start: float, end: float):
        self.start, self.end = start, end
        self.acc: dict[int, float] = {}
        self.last: dict[int, float] = {}

    def touch(self, state: int, count: int, t: float):
        last = self.last.get(state, 0.0)
        lo = last if last > self.start else self.start
        hi = t if t < self.end else self.end
        if hi > lo and count:
            self.acc[state] = self.acc.get(state, 0.0) + count * (hi - lo)
        self.last[state] = t

    def close(self, counts: dict[int, int], t: float):
        for s, c in counts.items():
            self.touch(s, c, t)

    def measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.acc)


@dataclass
class FvRunResult:
    N: int
    t_max: float
    t_burn: float
    occupation: EmpiricalMeasure
    rebirth_count: int
    event_count: int
    stationarity_tv: float
    stationary: bool
    snapshots: list[tuple[float, EmpiricalMeasure]] = field(default_factory=list)
    events: Optional[list[PathEvent]] = None

    @property
    def rebirth_rate(self) -> float:
        return self.rebirth_count / self.t_max


def initial_positions(N: int, state: int = 1) -> list[int]:
    return [int(state)] * int(N)


def fv_run(model: BirthDeathModel, initial: Sequence[int], t_max: float,
           observe: Iterable[float] = (), rng: Optional[RandomStream] = None,
           t_burn: Optional[float] = None, stationarity_tv: float = 0.1,
           record_events: bool = False) -> FvRunResult:
    """Run the particle system on [0, t_max].

    The occupation measure is the time average of mu^N_s over [t_burn, t_max];
    its two halves are compared in total variation as a stationarity check.
    """
    require_valid(model)
    if t_max <= 0:
        raise ConfigError("t_max must be positive")
    if t_burn is None:
        t_burn = t_max / 5.0
    if not 0 <= t_burn < t_max:
        raise ConfigError(f"t_burn must lie in [0, t_max); got t_burn={t_burn}, t_max={t_max}")
    rng = rng if rng is not None else RandomStream()
    system = FlemingViotSystem(model, initial, rng)
    t_mid = 0.5 * (t_burn + t_max)
    first, second = _Occupation(t_burn, t_mid), _Occupation(t_mid, t_max)

    def on_change(state, count, t):
        first.touch(state, count, t)
        second.touch(state, count, t)
    system.on_count_change = on_change

    schedule = sorted(float(t) for t in observe if 0 <= t <= t_max)
    snapshots: list[tuple[float, EmpiricalMeasure]] = []
    log: Optional[list[PathEvent]] = [] if record_events else None
    k = 0
    while True:
        # stopping the clock at an observation time and redrawing is exact (memoryless holds)
        horizon = schedule[k] if k < len(schedule) else t_max
        event = system.step(horizon=horizon)
        if event is not None:
            if log is not None:
                log.append(event)
            continue
        if k < len(schedule):
            snapshots.append((horizon, system.measure()))
            k += 1
            continue
        break
    final = system.counts()
    first.close(final, t_max)
    second.close(final, t_max)

    occupation = EmpiricalMeasure(
        {s: first.acc.get(s, 0.0) + second.acc.get(s, 0.0) for s in set(first.acc) | set(second.acc)})
    halves_tv = tv_distance(first.measure(), second.measure())
    stationary = halves_tv <= stationarity_tv
    if not stationary:
        logger.warning(f"{model.name} N={system.N}: occupation halves differ by TV={halves_tv:.4f} "
                       f"(> {stationarity_tv}); lengthen t_max or t_burn")
    return FvRunResult(N=system.N, t_max=t_max, t_burn=t_burn, occupation=occupation,
                       rebirth_count=system.rebirth_count, event_count=system.event_count,
                       stationarity_tv=halves_tv, stationary=stationary,
                       snapshots=snapshots, events=log)


def _replica_worker(args) -> FvRunResult:
    model, initial, t_max, observe, stream, t_burn, stationarity_tv = args
    return fv_run(model, initial, t_max, observe=observe, rng=stream, t_burn=t_burn,
                  stationarity_tv=stationarity_tv)


def default_jobs() -> int:
    return os.cpu_count() or 1


def run_replicas(model: BirthDeathModel, initial: Sequence[int], t_max: float, replicas: int,
                 seed: Union[int, Sequence[int]], t_burn: Optional[float] = None, observe: Iterable[float] = (),
                 jobs: Optional[int] = None, stationarity_tv: float = 0.1) -> list[FvRunResult]:
    """Independent runs on spawned streams, returned in replica order."""
    if replicas < 1:
        raise ConfigError("replicas must be at least 1")
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    observe = tuple(observe)
    tasks = [(model, list(initial), t_max, observe, stream, t_burn, stationarity_tv)
             for stream in replica_streams(seed, replicas)]
    if jobs == 1 or replicas == 1:
        return [_replica_worker(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, replicas)) as pool:
        return list(pool.map(_replica_worker, tasks))
