"""Synthetic workload generation: datasets, policies, updates, queries.

Everything is driven by ``random.Random`` seeded per stream, so identical
(config, seed) pairs reproduce byte-identical datasets, policy sets, and
query streams.  Positions live in a square space; uniform datasets move
objects in straight lines with reflective walls, network datasets move
them along a random connected route graph between destination hubs with
a trapezoidal speed profile.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Iterable

from .motion import MovingObject
from .policy import DAY, LocationPrivacyPolicy, RelationshipGraph, make_time_set
from .query import PknnRequest, PrqRequest


@dataclass(frozen=True)
class WorkloadConfig:
    """One benchmark point's data generation parameters."""

    n_users: int = 10_000
    max_speed: float = 3.0
    space_side: float = 1000.0
    distribution: str = "uniform"  # "uniform" | "network"
    destinations: int = 100
    policies_per_user: int = 50
    theta: float = 0.7
    group_size: int = 100
    seed: int = 0
    policy_side: tuple[float, float] = (50.0, 300.0)
    policy_duration: tuple[float, float] = (DAY / 6, DAY / 2)
    day: float = DAY
    query_window: float = 200.0
    k: int = 5
    queries_per_point: int = 200

    def stream(self, name: str) -> Random:
        return Random(f"{self.seed}/{name}")


NETWORK_SPEED_CLASSES = (0.75, 1.5, 3.0)


# -- uniform datasets -----------------------------------------------------------


def gen_uniform(cfg: WorkloadConfig) -> list[MovingObject]:
    """Uniform positions, uniform speed in [0, max_speed], uniform heading."""
    rng = cfg.stream("uniform")
    side = cfg.space_side
    objects = []
    for uid in range(cfg.n_users):
        x = rng.uniform(0.0, side)
        y = rng.uniform(0.0, side)
        speed = rng.uniform(0.0, cfg.max_speed)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        objects.append(MovingObject(uid, x, y, speed * math.cos(heading), speed * math.sin(heading), 0.0))
    return objects


class UniformWorld:
    """Ground-truth motion for uniform datasets: straight lines, reflective walls."""

    def __init__(self, objects: Iterable[MovingObject], side: float) -> None:
        self.side = side
        self.now = 0.0
        self._state = {o.uid: [o.x, o.y, o.vx, o.vy] for o in objects}

    def advance(self, to_time: float) -> None:
        dt = to_time - self.now
        if dt < 0:
            raise ValueError("time moves forward only")
        side = self.side
        for s in self._state.values():
            for axis in (0, 1):
                p = s[axis] + s[axis + 2] * dt
                # reflect off the walls as often as needed
                while p < 0 or p > side:
                    if p < 0:
                        p = -p
                    else:
                        p = 2 * side - p
                    s[axis + 2] = -s[axis + 2]
                s[axis] = p
        self.now = to_time

    def report(self, uid: int) -> MovingObject:
        x, y, vx, vy = self._state[uid]
        return MovingObject(uid, x, y, vx, vy, self.now)


# -- network datasets -------------------------------------------------------------


@dataclass
class RouteNetwork:
    """Two-way routes connecting destination hubs."""

    nodes: list[tuple[float, float]]
    adjacency: list[list[int]]

    def edge_length(self, a: int, b: int) -> float:
        return math.dist(self.nodes[a], self.nodes[b])

    def shortest_path(self, src: int, dst: int) -> list[int]:
        if src == dst:
            return [src]
        dist = {src: 0.0}
        prev: dict[int, int] = {}
        heap = [(0.0, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if u == dst:
                break
            if d > dist.get(u, math.inf):
                continue
            for v in self.adjacency[u]:
                nd = d + self.edge_length(u, v)
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    prev[v] = u
                    heapq.heappush(heap, (nd, v))
        path = [dst]
        while path[-1] != src:
            path.append(prev[path[-1]])
        path.reverse()
        return path


def build_network(cfg: WorkloadConfig, rng: Random) -> RouteNetwork:
    """Random connected route graph: a spanning tree plus extra edges."""
    if cfg.destinations < 2:
        raise ValueError("a route network needs at least 2 destinations")
    side = cfg.space_side
    nodes = [(rng.uniform(0.0, side), rng.uniform(0.0, side)) for _ in range(cfg.destinations)]
    adjacency: list[list[int]] = [[] for _ in nodes]
    edges: set[tuple[int, int]] = set()

    def connect(a: int, b: int) -> None:
        if a == b:
            return
        e = (a, b) if a < b else (b, a)
        if e in edges:
            return
        edges.add(e)
        adjacency[a].append(b)
        adjacency[b].append(a)

    # spanning tree over a shuffled order, attaching each node to the
    # nearest already-connected one
    order = list(range(len(nodes)))
    rng.shuffle(order)
    connected = [order[0]]
    for nid in order[1:]:
        nearest = min(connected, key=lambda c: math.dist(nodes[nid], nodes[c]))
        connect(nid, nearest)
        connected.append(nid)
    # extra edges up to an average degree of about 3
    target_edges = min(3 * len(nodes) // 2, len(nodes) * (len(nodes) - 1) // 2)
    guard = 0
    while len(edges) < target_edges and guard < 50 * len(nodes):
        connect(rng.randrange(len(nodes)), rng.randrange(len(nodes)))
        guard += 1
    return RouteNetwork(nodes, adjacency)


@dataclass
class _Traveler:
    vmax: float
    path: list[int]  # node ids still ahead, path[0] is the edge start
    leg: int  # index into path of the current edge start
    offset: float  # distance along the current edge
    trip_done: float  # distance covered since the last destination
    trip_total: float  # full trip length


class NetworkWorld:
    """Ground-truth motion on a route network.

    Objects accelerate after leaving a destination and decelerate when
    approaching one, capped by their speed class maximum.
    """

    RAMP = 60.0  # distance over which speed ramps between floor and vmax
    FLOOR = 0.1  # minimum speed so objects never stall

    def __init__(self, net: RouteNetwork, cfg: WorkloadConfig, rng: Random) -> None:
        self.net = net
        self.rng = rng
        self.now = 0.0
        self._travelers: dict[int, _Traveler] = {}
        for uid in range(cfg.n_users):
            vmax = NETWORK_SPEED_CLASSES[rng.randrange(3)]
            a = rng.randrange(len(net.nodes))
            b = rng.choice(net.adjacency[a])
            path = [a, b]
            length = net.edge_length(a, b)
            self._travelers[uid] = _Traveler(
                vmax=vmax,
                path=path,
                leg=0,
                offset=rng.uniform(0.0, length),
                trip_done=0.0,
                trip_total=length,
            )
            t = self._travelers[uid]
            t.trip_done = t.offset

    def _retarget(self, t: _Traveler, at_node: int) -> None:
        dst = self.rng.randrange(len(self.net.nodes))
        while dst == at_node:
            dst = self.rng.randrange(len(self.net.nodes))
        t.path = self.net.shortest_path(at_node, dst)
        t.leg = 0
        t.offset = 0.0
        t.trip_done = 0.0
        t.trip_total = sum(
            self.net.edge_length(t.path[i], t.path[i + 1]) for i in range(len(t.path) - 1)
        )

    def _speed(self, t: _Traveler) -> float:
        ramp_up = self.FLOOR + (t.vmax - self.FLOOR) * min(1.0, t.trip_done / self.RAMP)
        remaining = max(0.0, t.trip_total - t.trip_done)
        ramp_down = self.FLOOR + (t.vmax - self.FLOOR) * min(1.0, remaining / self.RAMP)
        return min(t.vmax, ramp_up, ramp_down)

    def advance(self, to_time: float, step: float = 5.0) -> None:
        while self.now < to_time - 1e-9:
            dt = min(step, to_time - self.now)
            for t in self._travelers.values():
                self._move(t, dt)
            self.now += dt

    def _move(self, t: _Traveler, dt: float) -> None:
        budget = self._speed(t) * dt
        while budget > 0:
            a, b = t.path[t.leg], t.path[t.leg + 1]
            length = self.net.edge_length(a, b)
            room = length - t.offset
            if budget < room:
                t.offset += budget
                t.trip_done += budget
                return
            budget -= room
            t.trip_done += room
            if t.leg + 2 < len(t.path):
                t.leg += 1
                t.offset = 0.0
            else:
                self._retarget(t, t.path[-1])

    def report(self, uid: int) -> MovingObject:
        t = self._travelers[uid]
        a, b = t.path[t.leg], t.path[t.leg + 1]
        ax, ay = self.net.nodes[a]
        bx, by = self.net.nodes[b]
        length = self.net.edge_length(a, b)
        frac = t.offset / length if length else 0.0
        x = ax + (bx - ax) * frac
        y = ay + (by - ay) * frac
        speed = self._speed(t)
        if length:
            vx = speed * (bx - ax) / length
            vy = speed * (by - ay) / length
        else:
            vx = vy = 0.0
        return MovingObject(uid, x, y, vx, vy, self.now)


def gen_network(cfg: WorkloadConfig) -> tuple[list[MovingObject], NetworkWorld]:
    """Network dataset plus the movement script that produced it."""
    rng = cfg.stream("network")
    net = build_network(cfg, rng)
    world = NetworkWorld(net, cfg, rng)
    return [world.report(uid) for uid in range(cfg.n_users)], world


def make_world(cfg: WorkloadConfig, objects: list[MovingObject] | None = None):
    if cfg.distribution == "uniform":
        objs = objects if objects is not None else gen_uniform(cfg)
        return objs, UniformWorld(objs, cfg.space_side)
    if cfg.distribution == "network":
        return gen_network(cfg)
    raise ValueError(f"unknown distribution {cfg.distribution!r}")


# -- policies -----------------------------------------------------------------


def assign_groups(users: Iterable[int], cfg: WorkloadConfig) -> tuple[list[list[int]], dict[int, int]]:
    """Partition users into groups of ``group_size`` (seeded shuffle)."""
    order = list(users)
    cfg.stream("groups").shuffle(order)
    groups: list[list[int]] = []
    group_of: dict[int, int] = {}
    for i, uid in enumerate(order):
        g = i // cfg.group_size
        if g == len(groups):
            groups.append([])
        groups[g].append(uid)
        group_of[uid] = g
    return groups, group_of


def gen_policies(
    users: Iterable[int], cfg: WorkloadConfig
) -> tuple[list[LocationPrivacyPolicy], RelationshipGraph]:
    """Random policies steered by the grouping factor.

    Users are partitioned into groups of ``group_size``.  With grouping
    factor theta, ``floor(theta * policies_per_user)`` of each user's
    policies target distinct same-group users and the rest target distinct
    out-of-group users; theta of exactly 0 means no grouping at all and
    targets are drawn from the whole population.  Each policy registers
    its single target in its own role, so at most one policy exists per
    ordered pair.
    """
    users = list(users)
    n = len(users)
    if n == 0:
        return [], RelationshipGraph()
    n_p = cfg.policies_per_user
    if n_p >= n:
        raise ValueError("policies per user must be below the user count")
    if not 0.0 <= cfg.theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    rng = cfg.stream("policies")
    groups, group_of = assign_groups(users, cfg)
    k_in = int(cfg.theta * n_p) if cfg.theta > 0 else 0
    for g in groups:
        if cfg.theta > 0 and k_in > len(g) - 1:
            raise ValueError(
                f"grouping factor {cfg.theta} with group size {len(g)} cannot host "
                f"{k_in} in-group policies"
            )
    if n_p - k_in > n - cfg.group_size and cfg.theta > 0:
        raise ValueError("not enough out-of-group users for the requested policies")

    graph = RelationshipGraph()
    policies: list[LocationPrivacyPolicy] = []
    side_lo, side_hi = cfg.policy_side
    dur_lo, dur_hi = cfg.policy_duration
    space = cfg.space_side
    for owner in users:
        g = groups[group_of[owner]]
        chosen: set[int] = set()
        if cfg.theta > 0:
            in_group = [u for u in g if u != owner]
            chosen.update(rng.sample(in_group, k_in))
            while len(chosen) < n_p:
                cand = users[rng.randrange(n)]
                if cand != owner and cand not in chosen and group_of[cand] != group_of[owner]:
                    chosen.add(cand)
        else:
            while len(chosen) < n_p:
                cand = users[rng.randrange(n)]
                if cand != owner and cand not in chosen:
                    chosen.add(cand)
        for target in sorted(chosen):
            w = rng.uniform(side_lo, side_hi)
            h = rng.uniform(side_lo, side_hi)
            cx = rng.uniform(w / 2, space - w / 2)
            cy = rng.uniform(h / 2, space - h / 2)
            start = rng.uniform(0.0, cfg.day)
            duration = rng.uniform(dur_lo, dur_hi)
            end = (start + duration) % cfg.day
            role = f"u{target}"
            graph.add(owner, role, target)
            policies.append(
                LocationPrivacyPolicy(
                    owner,
                    role,
                    (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
                    make_time_set(start, end, cfg.day),
                )
            )
    return policies, graph


def realized_grouping_factor(
    policies: Iterable[LocationPrivacyPolicy],
    graph: RelationshipGraph,
    group_of: dict[int, int],
) -> float:
    """Fraction of policies whose target shares the owner's group."""
    total = 0
    in_group = 0
    for p in policies:
        for target in graph.members(p.owner, p.role):
            total += 1
            if group_of[target] == group_of[p.owner]:
                in_group += 1
    return in_group / total if total else 0.0


# -- queries --------------------------------------------------------------------


def gen_queries(
    cfg: WorkloadConfig,
    kind: str,
    objects: list[MovingObject],
    now: float = 0.0,
    horizon: float = 120.0,
    count: int | None = None,
) -> list[PrqRequest] | list[PknnRequest]:
    """Query stream for one measurement point.

    Range windows are squares of the configured side, clamped fully inside
    the space; kNN issuers query from their own position.  Query times are
    drawn within the current update horizon.
    """
    if not objects:
        raise ValueError("cannot generate queries for an empty dataset")
    rng = cfg.stream(f"queries/{kind}/{now}")
    count = cfg.queries_per_point if count is None else count
    side = cfg.space_side
    w = min(cfg.query_window, side)
    by_uid = {o.uid: o for o in objects}
    uids = sorted(by_uid)
    out = []
    for _ in range(count):
        qid = uids[rng.randrange(len(uids))]
        t_q = rng.uniform(now, now + horizon)
        if kind == "range":
            cx = rng.uniform(w / 2, side - w / 2)
            cy = rng.uniform(w / 2, side - w / 2)
            out.append(PrqRequest(qid, (cx - w / 2, cy - w / 2, cx + w / 2, cy + w / 2), t_q))
        elif kind == "knn":
            obj = by_uid[qid]
            px = obj.x + obj.vx * (t_q - obj.t_u)
            py = obj.y + obj.vy * (t_q - obj.t_u)
            px = min(max(px, 0.0), side)
            py = min(max(py, 0.0), side)
            out.append(PknnRequest(qid, (px, py), cfg.k, t_q))
        else:
            raise ValueError(f"unknown query kind {kind!r}")
    return out


# -- file formats ------------------------------------------------------------------
#
# Dataset file: uid,x,y,vx,vy,t_u per line.
# Query file:   range,qid,t_q,x_lo,y_lo,x_hi,y_hi
#               knn,qid,t_q,qx,qy,k


def save_objects(objects: Iterable[MovingObject], path: str | Path) -> None:
    with open(path, "w") as fh:
        for o in objects:
            fh.write(f"{o.uid},{o.x!r},{o.y!r},{o.vx!r},{o.vy!r},{o.t_u!r}\n")


def load_objects(path: str | Path) -> list[MovingObject]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            uid, x, y, vx, vy, t_u = line.split(",")
            out.append(MovingObject(int(uid), float(x), float(y), float(vx), float(vy), float(t_u)))
    return out


def save_queries(queries: Iterable[PrqRequest | PknnRequest], path: str | Path) -> None:
    with open(path, "w") as fh:
        for q in queries:
            if isinstance(q, PrqRequest):
                x_lo, y_lo, x_hi, y_hi = q.rect
                fh.write(f"range,{q.qid},{q.t_q!r},{x_lo!r},{y_lo!r},{x_hi!r},{y_hi!r}\n")
            else:
                fh.write(f"knn,{q.qid},{q.t_q!r},{q.qloc[0]!r},{q.qloc[1]!r},{q.k}\n")


def load_queries(path: str | Path) -> list[PrqRequest | PknnRequest]:
    out: list[PrqRequest | PknnRequest] = []
    with open(path) as fh:
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            if parts[0] == "range":
                _, qid, t_q, x_lo, y_lo, x_hi, y_hi = parts
                out.append(PrqRequest(int(qid), (float(x_lo), float(y_lo), float(x_hi), float(y_hi)), float(t_q)))
            elif parts[0] == "knn":
                _, qid, t_q, qx, qy, k = parts
                out.append(PknnRequest(int(qid), (float(qx), float(qy)), int(k), float(t_q)))
            else:
                raise ValueError(f"unknown query tag {parts[0]!r}")
    return out
