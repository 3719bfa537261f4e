"""Collaborative constrained sampler: one live-point table serving many runs.

The sampler owns the global append-only table of evaluated points, the
per-dataset live memberships and the per-dataset queues of accepted
candidates. Joint (superset) draws sample from the region spanned by the
union of live points of a cluster and compare the single model prediction
against every member, so one evaluation can feed many queues; focused
draws fall back to the datasets whose queues are still empty.

The `problem` object passed in provides the model: attributes `ndim` and
`n_datasets`, a `transform(u)` mapping unit-cube coordinates to physical
parameters, and `loglikes(theta, indices)` returning the log-likelihood
of one prediction for the indexed datasets. One `loglikes` call is one
model evaluation, whatever the number of indices.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import region as regions

logger = logging.getLogger(__name__)

REJECTION_WARNING_INTERVAL = 10_000


@dataclass
class LivePoint:
    """An evaluated parameter-space point, shared by reference across datasets.

    `loglikes` holds log-likelihoods only for datasets the point was
    evaluated and accepted for (plus all datasets for the initial points);
    entries are never rewritten.
    """

    id: int
    unit: np.ndarray
    physical: np.ndarray
    loglikes: dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class QueueEntry:
    point_id: int
    loglike: float


@dataclass
class DrawResult:
    """Diagnostics of a single constrained draw."""

    point_id: int | None
    dataset_ids: np.ndarray
    loglikes: np.ndarray
    accepted: tuple[int, ...]


class _DatasetState:
    __slots__ = ("id_set", "queue", "rejects")

    def __init__(self, id_set):
        self.id_set: set[int] = id_set
        self.queue: deque[QueueEntry] = deque()
        self.rejects = 0


class CollaborativeSampler:
    """Shared live-point table, per-dataset queues, superset and focused draws."""

    def __init__(
        self,
        problem,
        n_live: int,
        rng,
        superset_attempts: int = 10,
        bootstrap_rounds: int = 10,
        region_update_interval: int | None = None,
    ):
        if n_live < 2:
            raise ValueError("n_live must be >= 2")
        if problem.n_datasets < 1:
            raise ValueError("need at least one dataset")
        self.problem = problem
        self.n_live = n_live
        self.n_datasets = problem.n_datasets
        self.superset_attempts = superset_attempts
        self.bootstrap_rounds = bootstrap_rounds
        self.region_update_interval = region_update_interval or max(1, n_live // 10)
        self.rng = rng

        self.points: list[LivePoint] = []
        self._units = np.empty((max(1024, 2 * n_live), problem.ndim))
        self.n_evaluations = 0
        self.attributed = np.zeros(self.n_datasets)
        self.active_ids: set[int] = set(range(self.n_datasets))

        self._live_ll = np.empty((self.n_datasets, n_live))
        self._live_ids = np.empty((self.n_datasets, n_live), dtype=np.int64)
        self._queue_len = np.zeros(self.n_datasets, dtype=np.int64)
        self._th_cache = np.empty(self.n_datasets)
        self._th_valid = np.zeros(self.n_datasets, dtype=bool)

        self._live_count: dict[int, int] = {}
        self._unique_live = 0
        self._region_cache: dict[tuple, list] = {}
        self._focused_cache: dict[tuple, tuple] = {}

        self._initialize()

    # ------------------------------------------------------------------
    # initialization

    def _initialize(self):
        all_idx = np.arange(self.n_datasets)
        ll_matrix = np.empty((self.n_datasets, self.n_live))
        for i in range(self.n_live):
            u = self.rng.random(self.problem.ndim)
            theta = self.problem.transform(u)
            ll = self.problem.loglikes(theta, all_idx)
            self.n_evaluations += 1
            pid = self._new_point(u, theta)
            self.points[pid].loglikes = dict(zip(range(self.n_datasets), ll.tolist()))
            ll_matrix[:, i] = ll
        self.attributed += self.n_live / self.n_datasets

        order = np.argsort(ll_matrix, axis=1, kind="stable")
        self._live_ll = np.take_along_axis(ll_matrix, order, axis=1)
        self._live_ids = order.astype(np.int64)
        self._states = [
            _DatasetState(set(range(self.n_live))) for _ in range(self.n_datasets)
        ]
        self._live_count = {pid: self.n_datasets for pid in range(self.n_live)}
        self._unique_live = self.n_live

    def _new_point(self, u, theta) -> int:
        pid = len(self.points)
        if pid >= len(self._units):
            grown = np.empty((2 * len(self._units), self._units.shape[1]))
            grown[:pid] = self._units[:pid]
            self._units = grown
        self._units[pid] = u
        self.points.append(LivePoint(pid, np.array(u), np.asarray(theta, dtype=float)))
        return pid

    # ------------------------------------------------------------------
    # views

    def membership(self, j: int) -> set[int]:
        """Current live-point ids of dataset j (read-only view)."""
        return self._states[j].id_set

    def memberships(self) -> dict[int, set[int]]:
        return {j: self._states[j].id_set for j in sorted(self.active_ids)}

    def live_counts(self) -> dict[int, int]:
        return self._live_count

    def unique_live_count(self) -> int:
        return self._unique_live

    def superpoint_exists(self) -> bool:
        """True if some point is currently live for every active dataset."""
        if not self.active_ids:
            return False
        target = len(self.active_ids)
        j0 = min(self.active_ids)
        counts = self._live_count
        return any(counts.get(pid, 0) == target for pid in self._states[j0].id_set)

    def min_live(self, j: int) -> float:
        return float(self._live_ll[j, 0])

    def max_live(self, j: int) -> float:
        return float(self._live_ll[j, -1])

    def live_snapshot(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """(ids, loglikes) of dataset j's live points, ascending in loglike."""
        return self._live_ids[j].copy(), self._live_ll[j].copy()

    def queue(self, j: int) -> tuple[QueueEntry, ...]:
        return tuple(self._states[j].queue)

    def unit_coords(self, point_ids) -> np.ndarray:
        return self._units[np.asarray(point_ids, dtype=np.intp)]

    # ------------------------------------------------------------------
    # queue rule

    def queue_accept(self, dataset: int, candidate_loglike: float) -> bool:
        """Entry rule: beat the (queue length + 1)-th smallest of live + queued values."""
        return candidate_loglike > self._queue_threshold(dataset)

    def _queue_threshold(self, j: int) -> float:
        q = self._states[j].queue
        jpos = len(q) + 1
        live = self._live_ll[j]
        if jpos == 1:
            return float(live[0])
        # the j smallest of the union are among the j smallest live values
        # and the queued values
        vals = live[:jpos].tolist() + [e.loglike for e in q]
        vals.sort()
        return vals[jpos - 1]

    def _thresholds(self, idx: np.ndarray) -> np.ndarray:
        stale = np.nonzero(~self._th_valid[idx])[0]
        if len(stale):
            stale_ids = idx[stale]
            empty = self._queue_len[stale_ids] == 0
            self._th_cache[stale_ids[empty]] = self._live_ll[stale_ids[empty], 0]
            for j in stale_ids[~empty].tolist():
                self._th_cache[j] = self._queue_threshold(j)
            self._th_valid[stale_ids] = True
        return self._th_cache[idx]

    def _accept(self, u, theta, idx, ll) -> DrawResult:
        mask = ll > self._thresholds(idx)
        if not mask.any():
            return DrawResult(None, idx, ll, ())
        pid = self._new_point(u, theta)
        point = self.points[pid]
        accepted = idx[mask]
        for j, l in zip(accepted.tolist(), ll[mask].tolist()):
            point.loglikes[j] = l
            self._states[j].queue.append(QueueEntry(pid, l))
        self._queue_len[accepted] += 1
        self._th_valid[accepted] = False
        return DrawResult(pid, idx, ll, tuple(accepted.tolist()))

    # ------------------------------------------------------------------
    # regions

    def _cluster_entry(self, members: tuple) -> list:
        entry = self._region_cache.get(members)
        if entry is not None and entry[1] < self.region_update_interval:
            return entry
        pids = sorted(set().union(*(self._states[j].id_set for j in members)))
        pts = self._units[np.fromiter(pids, dtype=np.intp, count=len(pids))]
        reg = regions.fit_region(pts, self.bootstrap_rounds, self.rng)
        if len(self._region_cache) >= 128:
            for key in [k for k, e in self._region_cache.items()
                        if e[1] >= self.region_update_interval]:
                del self._region_cache[key]
        entry = [reg, 0, np.fromiter(members, dtype=np.intp, count=len(members))]
        self._region_cache[members] = entry
        return entry

    def _focused_region(self, members: tuple):
        cached = self._focused_cache.get(members)
        if cached is not None:
            return cached
        pids = sorted(set().union(*(self._states[j].id_set for j in members)))
        pts = self._units[np.fromiter(pids, dtype=np.intp, count=len(pids))]
        reg = regions.fit_region(pts, self.bootstrap_rounds, self.rng)
        idx = np.fromiter(members, dtype=np.intp, count=len(members))
        self._focused_cache[members] = (reg, idx)
        return reg, idx

    # ------------------------------------------------------------------
    # draws

    def superset_draw(self, cluster) -> DrawResult:
        """One draw from the joint region of a cluster, offered to every member."""
        members = tuple(sorted(cluster))
        reg, _, idx = self._cluster_entry(members)
        u = regions.sample(reg, self.rng)
        theta = self.problem.transform(u)
        ll = self.problem.loglikes(theta, idx)
        self.n_evaluations += 1
        self.attributed[idx] += 1.0 / len(idx)
        return self._accept(u, theta, idx, ll)

    def focused_draw(self, needy) -> DrawResult:
        """One draw from the region of the empty-queue datasets only."""
        members = tuple(sorted(needy))
        if not members:
            raise ValueError("focused_draw needs at least one dataset")
        reg, idx = self._focused_region(members)
        u = regions.sample(reg, self.rng)
        theta = self.problem.transform(u)
        ll = self.problem.loglikes(theta, idx)
        self.n_evaluations += 1
        self.attributed[idx] += 1.0 / len(idx)
        result = self._accept(u, theta, idx, ll)
        accepted = set(result.accepted)
        for j in members:
            st = self._states[j]
            if j in accepted:
                st.rejects = 0
            else:
                st.rejects += 1
                if st.rejects % REJECTION_WARNING_INTERVAL == 0:
                    logger.warning(
                        "dataset %d: %d consecutive rejected focused draws",
                        j, st.rejects,
                    )
        return result

    def fill_queues(self, cluster, superset_attempts: int | None = None) -> None:
        """Ensure every cluster member has at least one queued candidate."""
        members = tuple(sorted(cluster))
        idx = np.fromiter(members, dtype=np.intp, count=len(members))
        attempts = self.superset_attempts if superset_attempts is None else superset_attempts
        if not (self._queue_len[idx] == 0).any():
            return
        for _ in range(attempts):
            self.superset_draw(members)
            if not (self._queue_len[idx] == 0).any():
                return
        while True:
            needy = idx[self._queue_len[idx] == 0]
            if len(needy) == 0:
                return
            self.focused_draw(needy.tolist())

    # ------------------------------------------------------------------
    # replacement and retirement

    def pop_and_replace(self, cluster) -> dict[int, tuple[int, float]]:
        """Remove each member's worst live point, promote its queue head.

        Returns the dead records as dataset id -> (point id, loglike).
        """
        members = tuple(sorted(cluster))
        if (self._queue_len[list(members)] == 0).any():
            raise RuntimeError("pop_and_replace called with an empty queue")
        dead: dict[int, tuple[int, float]] = {}
        for j in members:
            st = self._states[j]
            entry = st.queue.popleft()
            ll_row = self._live_ll[j]
            id_row = self._live_ids[j]
            dead_id = int(id_row[0])
            dead_ll = float(ll_row[0])
            if entry.loglike <= dead_ll:
                raise RuntimeError(
                    f"queue head {entry.loglike} does not beat the live minimum "
                    f"{dead_ll} of dataset {j}"
                )
            if entry.point_id in st.id_set:
                raise RuntimeError(
                    f"point {entry.point_id} is already live for dataset {j}"
                )
            pos = int(np.searchsorted(ll_row, entry.loglike))
            ll_row[0:pos - 1] = ll_row[1:pos]
            ll_row[pos - 1] = entry.loglike
            id_row[0:pos - 1] = id_row[1:pos]
            id_row[pos - 1] = entry.point_id
            st.id_set.remove(dead_id)
            st.id_set.add(entry.point_id)
            self._bump_count(entry.point_id, +1)
            self._bump_count(dead_id, -1)
            dead[j] = (dead_id, dead_ll)
        self._queue_len[list(members)] -= 1
        self._th_valid[list(members)] = False
        self._focused_cache.clear()
        entry = self._region_cache.get(members)
        if entry is not None:
            entry[1] += 1
        return dead

    def retire(self, j: int) -> None:
        """Drop dataset j from all further consideration."""
        if j not in self.active_ids:
            return
        st = self._states[j]
        for pid in st.id_set:
            self._bump_count(pid, -1)
        st.queue.clear()
        self._queue_len[j] = 0
        self._th_valid[j] = False
        self.active_ids.discard(j)

    def _bump_count(self, pid: int, delta: int) -> None:
        c = self._live_count.get(pid, 0) + delta
        if c <= 0:
            if self._live_count.pop(pid, None) is not None:
                self._unique_live -= 1
        else:
            if pid not in self._live_count:
                self._unique_live += 1
            self._live_count[pid] = c
