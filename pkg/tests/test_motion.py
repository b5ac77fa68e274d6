import pytest
from hypothesis import given, strategies as st

from pebtree.motion import MovingObject, TimePartitionConfig, index_partition, label_timestamp, position_at

CFG = TimePartitionConfig(delta_t_mu=120.0, n=2)


def label_grid_oracle(t_u: float, cfg: TimePartitionConfig, horizon: float = 10_000.0) -> float:
    """Scan the label grid for the first label >= t_u + step."""
    g = cfg.grid_step
    label = 0.0
    while label < t_u + g - 1e-12:
        label += g
    assert label <= horizon
    return label


def test_position_zero_velocity():
    obj = MovingObject(1, 4.5, 9.25, 0.0, 0.0, 10.0)
    assert position_at(obj, 123.0) == (4.5, 9.25)
    assert position_at(obj, -5.0) == (4.5, 9.25)


def test_position_direct_arithmetic():
    obj = MovingObject(1, 0.0, 0.0, 1.0, 2.0, 0.0)
    assert position_at(obj, 3.0) == (3.0, 6.0)


def test_position_objects_reach_range_next_tick():
    # two objects seen at time 5 whose velocity vectors put them inside
    # R = [3,6]x[2,5] at time 6; a third moves away
    r = (3.0, 6.0, 2.0, 5.0)
    a = MovingObject(1, 2.0, 3.0, 1.5, 0.0, 5.0)
    b = MovingObject(2, 5.0, 6.0, 0.0, -2.0, 5.0)
    c = MovingObject(3, 7.0, 1.0, 1.0, -1.0, 5.0)
    for obj, expect in ((a, True), (b, True), (c, False)):
        x, y = position_at(obj, 6.0)
        assert (r[0] <= x <= r[1] and r[2] <= y <= r[3]) is expect


def test_position_at_update_time_is_exact():
    obj = MovingObject(7, 12.25, 700.5, -2.5, 0.75, 31.0)
    assert position_at(obj, obj.t_u) == (obj.x, obj.y)


@pytest.mark.parametrize(
    "t_u,expected",
    [(30.0, 120.0), (0.0, 60.0), (61.0, 180.0), (60.0, 120.0), (119.9, 180.0), (120.0, 180.0)],
)
def test_label_timestamp_examples(t_u, expected):
    assert label_timestamp(t_u, CFG) == expected
    assert label_timestamp(t_u, CFG) == label_grid_oracle(t_u, CFG)


def test_label_timestamp_rejects_negative():
    with pytest.raises(ValueError):
        label_timestamp(-1.0, CFG)


@pytest.mark.parametrize("t_lab,expected", [(120.0, 1), (60.0, 0), (180.0, 2), (240.0, 0)])
def test_index_partition_examples(t_lab, expected):
    assert index_partition(t_lab, CFG) == expected


def test_index_partition_rejects_off_grid():
    with pytest.raises(ValueError):
        index_partition(61.0, CFG)


# The label is the first grid point at least one step in the future, so the
# gap is exactly one step on the grid and approaches two steps just past it
# (an update at 30 with step 60 is indexed as of 120).


@given(st.floats(min_value=0.0, max_value=1e6, allow_nan=False))
def test_label_gap_bounds(t_u):
    label = label_timestamp(t_u, CFG)
    gap = label - t_u
    g = CFG.grid_step
    assert g - 1e-6 <= gap < 2 * g + 1e-6
    if (t_u / g) == int(t_u / g):
        assert gap == pytest.approx(g)


@given(st.floats(min_value=0.0, max_value=1e6), st.integers(min_value=1, max_value=6))
def test_label_gap_bounds_other_configs(t_u, n):
    cfg = TimePartitionConfig(delta_t_mu=60.0 * n, n=n)
    gap = label_timestamp(t_u, cfg) - t_u
    assert cfg.grid_step - 1e-6 <= gap < 2 * cfg.grid_step + 1e-6


def test_partition_cycles_with_period():
    # the partition number repeats every (n+1) grid steps along the label grid
    period = CFG.num_partitions * CFG.grid_step
    for k in range(1, 40):
        label = k * CFG.grid_step
        assert index_partition(label, CFG) == index_partition(label + period, CFG)
    seen = {index_partition(k * CFG.grid_step, CFG) for k in range(1, 1 + CFG.num_partitions)}
    assert seen == set(range(CFG.num_partitions))


def test_config_validation():
    with pytest.raises(ValueError):
        TimePartitionConfig(delta_t_mu=0.0, n=2)
    with pytest.raises(ValueError):
        TimePartitionConfig(delta_t_mu=10.0, n=0)
