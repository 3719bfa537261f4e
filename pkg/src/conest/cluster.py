"""Partitioning of datasets into independent groups via shared live points.

Two datasets belong to the same group while any live point is live for
both (possibly through a chain of intermediaries); the groups are the
connected components of the bipartite dataset-livepoint graph. Building
that graph every iteration is wasteful, so cheap certificates (total
unique live count, superpoints) rule out splits first and the full
component search runs only on a replacement-count cadence. A stale
partition is always a coarsening of the true one, which costs only
efficiency, never correctness.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field


def quick_no_split(memberships, n_live: int) -> bool:
    """Cheaply certify that the membership table forms a single cluster.

    True is definite (fewer than 2*n_live unique points, or a point live
    in every dataset); False only means the graph has to be searched.
    """
    groups = list(memberships.values())
    if len(groups) < 2:
        return True
    unique = set()
    for m in groups:
        unique.update(m)
    if len(unique) < 2 * n_live:
        return True
    first, rest = groups[0], groups[1:]
    for pid in first:
        if all(pid in m for m in rest):
            return True
    return False


def partition(memberships) -> list[tuple[int, ...]]:
    """Connected components of the dataset-livepoint graph, as dataset groups.

    Breadth-first search over the bipartite adjacency; groups are returned
    sorted by their smallest dataset id, members sorted within each group.
    """
    datasets_of: dict[int, list[int]] = {}
    for j in memberships:
        for pid in memberships[j]:
            datasets_of.setdefault(pid, []).append(j)

    seen: set[int] = set()
    groups: list[tuple[int, ...]] = []
    for start in sorted(memberships):
        if start in seen:
            continue
        comp = []
        seen.add(start)
        frontier = deque([start])
        while frontier:
            j = frontier.popleft()
            comp.append(j)
            for pid in memberships[j]:
                for other in datasets_of[pid]:
                    if other not in seen:
                        seen.add(other)
                        frontier.append(other)
        groups.append(tuple(sorted(comp)))
    groups.sort(key=lambda g: g[0])
    return groups


@dataclass
class _Group:
    members: tuple[int, ...]
    replacements: int = 0
    force_rebuild: bool = False


@dataclass
class ClusterTracker:
    """Lazily maintained partition of the active datasets.

    Groups only ever split: live points are removed from memberships and
    new points enter only within a group, so a previously disconnected
    pair can never reconnect. Rebuilds run per group once enough
    replacements have accumulated (or a retirement removed a member,
    which can sever paths through it) and are skipped whenever a cheap
    certificate proves the group still connected.
    """

    n_live: int
    rebuild_after: int = 0
    _groups: list[_Group] = field(default_factory=list)
    _started: bool = False

    def __post_init__(self):
        if self.rebuild_after <= 0:
            self.rebuild_after = max(1, self.n_live // 10)

    def update(self, sampler) -> list[tuple[int, ...]]:
        """Return the current partition of the sampler's active datasets."""
        active = sampler.active_ids
        if not self._started:
            self._groups = [_Group(tuple(sorted(active)))]
            self._started = True

        new_groups: list[_Group] = []
        for grp in self._groups:
            members = tuple(j for j in grp.members if j in active)
            if not members:
                continue
            if len(members) == 1:
                new_groups.append(_Group(members))
                continue
            shrunk = len(members) < len(grp.members)
            due = grp.force_rebuild or shrunk or grp.replacements >= self.rebuild_after
            if not due or self._certainly_connected(sampler, members):
                reps = 0 if due else grp.replacements
                new_groups.append(_Group(members, reps))
                continue
            table = {j: sampler.membership(j) for j in members}
            for part in partition(table):
                new_groups.append(_Group(part))
        new_groups.sort(key=lambda g: g.members[0])
        self._groups = new_groups
        return [g.members for g in new_groups]

    def note_replacements(self, group_index: int, count: int) -> None:
        self._groups[group_index].replacements += count

    def _certainly_connected(self, sampler, members) -> bool:
        if len(members) == len(sampler.active_ids):
            if sampler.unique_live_count() < 2 * self.n_live:
                return True
        counts = sampler.live_counts()
        target = len(members)
        return any(counts.get(pid, 0) == target for pid in sampler.membership(members[0]))
