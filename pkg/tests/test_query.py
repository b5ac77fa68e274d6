import math
import random

import pytest

from pebtree.keys import KeyLayout, assign_sequence_values
from pebtree.motion import MovingObject, TimePartitionConfig
from pebtree.policy import (
    CompatibilityIndex,
    LocationPrivacyPolicy,
    PolicyStore,
    RelationshipGraph,
    make_time_set,
)
from pebtree.query import (
    BaselineQueryEngine,
    FriendLists,
    PebQueryEngine,
    PknnRequest,
    PrqRequest,
    antidiagonal_order,
    build_prq_key_intervals,
    enlarge,
    estimate_dk,
    merge_intervals,
    oracle_knn,
    oracle_range,
    subtract_intervals,
)
from pebtree.store import DirectionalSpeeds, MovingObjectIndex
from pebtree.workload import WorkloadConfig, gen_policies, gen_queries, gen_uniform
from pebtree.zcurve import GridConfig

TIME_CFG = TimePartitionConfig(120.0, 2)
GRID = GridConfig(L=1000.0, levels=10)


# -- enlarge ---------------------------------------------------------------


def test_enlarge_zero_gap_is_identity():
    speeds = DirectionalSpeeds(3.0, 2.0, 1.0, 4.0)
    r = (100.0, 200.0, 300.0, 400.0)
    assert enlarge(r, 60.0, 60.0, speeds, 1000.0) == r


def test_enlarge_upper_border_moves_by_max_downward_speed():
    # label one time unit before the query; max downward speed 2 moves the
    # upper border up by 2
    speeds = DirectionalSpeeds(pos_x=1.0, neg_x=1.5, pos_y=0.5, neg_y=2.0)
    r = (100.0, 100.0, 200.0, 200.0)
    out = enlarge(r, 5.0, 6.0, speeds, 1000.0)
    assert out[3] == 202.0
    assert out == (99.0, 99.5, 201.5, 202.0)


def test_enlarge_future_label_mirrors_directions():
    speeds = DirectionalSpeeds(pos_x=1.0, neg_x=2.0, pos_y=3.0, neg_y=4.0)
    r = (500.0, 500.0, 600.0, 600.0)
    out = enlarge(r, 61.0, 60.0, speeds, 1000.0)
    assert out == (498.0, 496.0, 601.0, 603.0)


def test_enlarge_clamps_to_space():
    speeds = DirectionalSpeeds(3.0, 3.0, 3.0, 3.0)
    out = enlarge((0.0, 0.0, 1000.0, 1000.0), 60.0, 120.0, speeds, 1000.0)
    assert out == (0.0, 0.0, 1000.0, 1000.0)


def test_enlarge_covers_moving_objects():
    rng = random.Random(21)
    speeds = DirectionalSpeeds(3.0, 3.0, 3.0, 3.0)
    r = (400.0, 400.0, 600.0, 600.0)
    for _ in range(500):
        t_lab = rng.choice([60.0, 120.0, 180.0])
        t_q = rng.uniform(0.0, 180.0)
        out = enlarge(r, t_lab, t_q, speeds, 1000.0)
        # any object inside r at t_q must project inside the enlarged window
        # at t_lab (positions clamped like the index does)
        vx = rng.uniform(-3, 3)
        vy = rng.uniform(-3, 3)
        qx = rng.uniform(r[0], r[2])
        qy = rng.uniform(r[1], r[3])
        px = min(max(qx + vx * (t_lab - t_q), 0.0), 1000.0)
        py = min(max(qy + vy * (t_lab - t_q), 0.0), 1000.0)
        assert out[0] - 1e-9 <= px <= out[2] + 1e-9
        assert out[1] - 1e-9 <= py <= out[3] + 1e-9


# -- Dk estimate --------------------------------------------------------------


def test_estimate_dk_at_k_equals_n():
    assert estimate_dk(10, 10, 1.0) == pytest.approx(2.0 / math.sqrt(math.pi))


def test_estimate_dk_small_k_limit():
    assert estimate_dk(1, 10**8, 1000.0) < 1.0


def test_estimate_dk_reference_value():
    assert estimate_dk(5, 10_000, 1.0) == pytest.approx(0.012687, abs=1e-5)


def test_estimate_dk_validates_inputs():
    with pytest.raises(ValueError):
        estimate_dk(0, 10, 1.0)
    with pytest.raises(ValueError):
        estimate_dk(11, 10, 1.0)


# -- key interval construction ---------------------------------------------------


def test_single_row_single_interval():
    layout = KeyLayout(tid_bits=2, sv_bits=7, zv_bits=6, frac_bits=0)
    out = build_prq_key_intervals([(25, (30,))], [(13, 16)], 0, layout)
    assert len(out) == 1
    assert (out[0].lo, out[0].hi) == (1613, 1616)
    assert out[0].uids == {30}


def test_reference_search_range_list():
    # five friends x two curve intervals: ten ranges per partition, ordered
    # by sequence value then curve value
    layout = KeyLayout(tid_bits=2, sv_bits=7, zv_bits=6, frac_bits=0)
    rows = [(25, (30,)), (50, (12,)), (55, (100,)), (80, (130,)), (89, (59,))]
    out = build_prq_key_intervals(rows, [(13, 16), (25, 28)], 0, layout)
    assert len(out) == 10
    bounds = [(iv.lo, iv.hi) for iv in out]
    assert bounds == sorted(bounds)
    assert bounds[0] == (25 * 64 + 13, 25 * 64 + 16)
    assert bounds[1] == (25 * 64 + 25, 25 * 64 + 28)
    assert bounds[2] == (50 * 64 + 13, 50 * 64 + 16)
    assert bounds[3] == (50 * 64 + 25, 50 * 64 + 28)
    assert bounds[8] == (89 * 64 + 13, 89 * 64 + 16)
    assert bounds[9] == (89 * 64 + 25, 89 * 64 + 28)


def test_interval_refinement_preserves_key_set():
    layout = KeyLayout(tid_bits=2, sv_bits=8, zv_bits=4, frac_bits=0)
    rng = random.Random(17)
    for _ in range(50):
        rows = sorted(rng.sample(range(200), rng.randint(1, 6)))
        zivs = []
        cursor = 0
        while cursor < 14 and len(zivs) < 4:
            lo = rng.randint(cursor, 14)
            hi = rng.randint(lo, 15)
            zivs.append((lo, hi))
            cursor = hi + 2
        out = build_prq_key_intervals(rows, zivs, 1, layout)
        expected = set()
        for svq in rows:
            for lo, hi in zivs:
                expected.update(range(layout.peb_key_q(1, svq, lo), layout.peb_key_q(1, svq, hi) + 1))
        got = set()
        for iv in out:
            got.update(range(iv.lo, iv.hi + 1))
        assert got == expected
        for a, b in zip(out, out[1:]):
            assert a.hi + 1 < b.lo  # disjoint and non-adjacent


def test_interval_subtract_and_merge():
    covered = [(10, 20), (40, 50)]
    new = [(5, 12), (15, 45), (60, 70)]
    assert subtract_intervals(new, covered) == [(5, 9), (21, 39), (60, 70)]
    assert merge_intervals(covered, [(21, 39)]) == [(10, 50)]
    assert subtract_intervals([(10, 20)], [(0, 100)]) == []


def test_antidiagonal_order_covers_matrix():
    cells = list(antidiagonal_order(3, 4))
    assert len(cells) == 12
    assert set(cells) == {(r, c) for r in range(3) for c in range(4)}
    assert cells[0] == (0, 0)
    # diagonal index never decreases
    sums = [r + c for r, c in cells]
    assert sums == sorted(sums)


# -- reference scenario --------------------------------------------------------------


def reference_scenario():
    """The running example: an issuer, five friends, one of them visible.

    The nearest user spatially (uid 100) denies access at query time, so
    query answers must skip to uid 12.
    """
    t_q = 12.0  # noon
    issuer = MovingObject(1, 50.0, 50.0, 0.0, 0.0, 0.0)
    friends = {
        12: MovingObject(12, 60.0, 55.0, 0.0, 0.0, 0.0),
        30: MovingObject(30, 45.0, 40.0, 0.0, 0.0, 0.0),
        59: MovingObject(59, 70.0, 45.0, 0.0, 0.0, 0.0),
        100: MovingObject(100, 51.0, 50.0, 0.0, 0.0, 0.0),
        130: MovingObject(130, 55.0, 62.0, 0.0, 0.0, 0.0),
    }
    others = {uid: MovingObject(uid, 80.0 + uid, 900.0, 0.0, 0.0, 0.0) for uid in range(2, 8)}
    objects = {1: issuer, **friends, **others}
    graph = RelationshipGraph()
    specs = {
        # friend -> (region around their own position?, hours); only uid 12
        # is visible at noon from where they are
        12: ((50.0, 40.0, 80.0, 70.0), (8.0, 17.0)),
        30: ((40.0, 30.0, 60.0, 50.0), (20.0, 23.0)),  # wrong hours
        59: ((200.0, 200.0, 300.0, 300.0), (8.0, 17.0)),  # away from region
        100: ((300.0, 300.0, 400.0, 400.0), (8.0, 17.0)),  # denies here
        130: ((40.0, 50.0, 70.0, 80.0), (14.0, 18.0)),  # later hours
    }
    policies = []
    for uid, (rect, (lo, hi)) in specs.items():
        role = "u1"
        graph.add(uid, role, 1)
        policies.append(LocationPrivacyPolicy(uid, role, rect, make_time_set(lo, hi)))
    store = PolicyStore(policies, graph, objects, space_side=1000.0)
    return objects, store, t_q


def build_engines(objects, store):
    compat = CompatibilityIndex.from_store(store)
    sv_map = assign_sequence_values(sorted(objects), compat)
    layout = KeyLayout.for_index(TIME_CFG, GRID, max_sv=sv_map.max_value + 1.0)
    peb = MovingObjectIndex(TIME_CFG, GRID, layout, sv_map=sv_map)
    bx = MovingObjectIndex(TIME_CFG, GRID, layout)
    for obj in objects.values():
        peb.insert(obj)
        bx.insert(obj)
    friends = FriendLists(store, sv_map, layout)
    return PebQueryEngine(peb, store, friends), BaselineQueryEngine(bx, store)


def test_reference_scenario_range_query():
    objects, store, t_q = reference_scenario()
    peb, bx = build_engines(objects, store)
    req = PrqRequest(1, (30.0, 30.0, 110.0, 80.0), t_q)
    assert oracle_range(objects.values(), store, req) == {12}
    assert peb.prq(req) == {12}
    assert bx.range_query(req) == {12}


def test_reference_scenario_nearest_friend():
    objects, store, t_q = reference_scenario()
    peb, bx = build_engines(objects, store)
    req = PknnRequest(1, (50.0, 50.0), 1, t_q)
    expected_dist = math.dist((50.0, 50.0), (60.0, 55.0))
    for result in (oracle_knn(objects.values(), store, req), peb.pknn(req), bx.knn_query(req)):
        assert not result.short
        assert result.neighbors == ((12, pytest.approx(expected_dist)),)


def test_empty_friend_list_returns_empty():
    objects, store, t_q = reference_scenario()
    peb, _ = build_engines(objects, store)
    peb.index.reset_io(cold=False)
    # uid 2 has no one naming it in any policy: no key intervals scanned
    assert peb.prq(PrqRequest(2, (0.0, 0.0, 1000.0, 1000.0), t_q)) == set()
    assert peb.index.buffer.counters().reads == 0
    result = peb.pknn(PknnRequest(2, (500.0, 500.0), 3, t_q))
    assert result.neighbors == () and result.short
    assert peb.index.buffer.counters().reads == 0


def test_unknown_issuer_rejected():
    objects, store, t_q = reference_scenario()
    peb, bx = build_engines(objects, store)
    with pytest.raises(KeyError):
        peb.prq(PrqRequest(999, (0.0, 0.0, 10.0, 10.0), t_q))
    with pytest.raises(KeyError):
        bx.knn_query(PknnRequest(999, (0.0, 0.0), 1, t_q))
    with pytest.raises(KeyError):
        oracle_range(objects.values(), store, PrqRequest(999, (0.0, 0.0, 10.0, 10.0), t_q))


# -- randomized equivalence ------------------------------------------------------------


@pytest.fixture(scope="module")
def random_instance():
    cfg = WorkloadConfig(n_users=400, policies_per_user=25, theta=0.5, seed=42, group_size=50)
    objects = gen_uniform(cfg)
    policies, graph = gen_policies([o.uid for o in objects], cfg)
    store = PolicyStore(policies, graph, [o.uid for o in objects], space_side=cfg.space_side)
    by_uid = {o.uid: o for o in objects}
    peb, bx = build_engines(by_uid, store)
    return cfg, by_uid, store, peb, bx


def test_random_range_queries_match_oracle(random_instance):
    cfg, objects, store, peb, bx = random_instance
    queries = gen_queries(cfg, "range", list(objects.values()), count=60)
    for req in queries:
        expected = oracle_range(objects.values(), store, req)
        assert peb.prq(req) == expected
        assert bx.range_query(req) == expected


def test_random_knn_queries_match_oracle(random_instance):
    cfg, objects, store, peb, bx = random_instance
    for k in (1, 5, 10):
        queries = [
            PknnRequest(q.qid, q.qloc, k, q.t_q)
            for q in gen_queries(cfg, "knn", list(objects.values()), count=25)
        ]
        for req in queries:
            want = oracle_knn(objects.values(), store, req)
            for got in (peb.pknn(req), bx.knn_query(req)):
                assert got.short == want.short
                got_d = [d for _, d in got.neighbors]
                want_d = [d for _, d in want.neighbors]
                assert got_d == pytest.approx(want_d, abs=1e-9)
                if want.neighbors:
                    kth = want_d[-1]
                    assert {u for u, d in got.neighbors if d < kth - 1e-9} == {
                        u for u, d in want.neighbors if d < kth - 1e-9
                    }


def test_skip_rule_never_changes_results(random_instance):
    cfg, objects, store, peb, bx = random_instance
    queries = gen_queries(cfg, "range", list(objects.values()), count=40)
    for req in queries:
        assert peb.prq(req, skip_rule=True) == peb.prq(req, skip_rule=False)


def test_oracle_full_space_returns_visible_set(random_instance):
    cfg, objects, store, peb, bx = random_instance
    from pebtree.query import _visible
    from pebtree.motion import position_at

    req = PrqRequest(3, (0.0, 0.0, cfg.space_side, cfg.space_side), 40.0)
    expected = set()
    for obj in objects.values():
        px, py = position_at(obj, req.t_q)
        if _visible(store, obj.uid, 3, px, py, req.t_q):
            expected.add(obj.uid)
    assert oracle_range(objects.values(), store, req) == expected
    # a kNN query asking for everyone visible returns exactly that set
    want = oracle_knn(objects.values(), store, PknnRequest(3, (500.0, 500.0), max(len(expected), 1), 40.0))
    assert {u for u, _ in want.neighbors} == expected


def test_oracle_input_order_invariance(random_instance):
    cfg, objects, store, peb, bx = random_instance
    req = PrqRequest(5, (200.0, 200.0, 600.0, 700.0), 30.0)
    shuffled = list(objects.values())
    random.Random(0).shuffle(shuffled)
    assert oracle_range(shuffled, store, req) == oracle_range(objects.values(), store, req)
    knn_req = PknnRequest(5, (250.0, 250.0), 4, 30.0)
    assert oracle_knn(shuffled, store, knn_req) == oracle_knn(objects.values(), store, knn_req)


def test_pknn_monotone_expansion_and_final_window():
    # the expansion squares strictly grow; verified indirectly by checking
    # the traversal helper plus the engine's public behavior on a crafted
    # instance where the first column already yields k candidates
    objects, store, t_q = reference_scenario()
    peb, _ = build_engines(objects, store)
    req = PknnRequest(1, (60.0, 55.0), 1, t_q)  # sits on the visible friend
    result = peb.pknn(req)
    assert result.neighbors[0][0] == 12
    assert result.neighbors[0][1] == pytest.approx(0.0)


def test_updates_reflected_in_queries(random_instance):
    cfg, objects, store, peb, bx = random_instance
    # move a quarter of the objects and re-report them at time 30
    moved = {}
    rng = random.Random(9)
    uids = sorted(objects)[: len(objects) // 4]
    new_objects = dict(objects)
    for uid in uids:
        obj = objects[uid]
        moved_obj = MovingObject(uid, rng.uniform(0, 1000), rng.uniform(0, 1000), obj.vx, obj.vy, 30.0)
        peb.index.update(moved_obj)
        bx.index.update(moved_obj)
        new_objects[uid] = moved_obj
    queries = gen_queries(cfg, "range", list(new_objects.values()), now=30.0, count=30)
    for req in queries:
        expected = oracle_range(new_objects.values(), store, req)
        assert peb.prq(req) == expected
        assert bx.range_query(req) == expected
    # restore the original states so other tests see the shared fixture
    for uid in uids:
        peb.index.update(objects[uid])
        bx.index.update(objects[uid])
