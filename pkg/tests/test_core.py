import math

import numpy as np
import pytest

from hwylaw.core import (
    Interval,
    Lane,
    LawThresholds,
    RoadModel,
    VehicleState,
    kmh,
    lane_of,
    longitudinal_gap,
    overlaps_lane_line,
    ttcx,
    uniform_road,
)


def veh(vid=0, x=0.0, y=1.875, vx=25.0, vy=0.0, length=4.0, width=1.8):
    return VehicleState(id=vid, x=x, y=y, vx=vx, vy=vy, length=length, width=width)


def test_gap_basic():
    assert longitudinal_gap(veh(x=0), veh(1, x=50)) == pytest.approx(46.0)


def test_gap_overlap_negative():
    assert longitudinal_gap(veh(x=0), veh(1, x=0)) == pytest.approx(-4.0)


def test_gap_at_follow_threshold_flips_predicate():
    th = LawThresholds()
    ego = veh(x=0, vx=kmh(110))
    lead = veh(1, x=104.0, vx=kmh(110))
    gap = longitudinal_gap(ego, lead)
    assert gap == pytest.approx(100.0)
    # exactly at the bound is compliant; a hair closer is not
    assert not gap < th.follow_entry_distance(ego.vx)
    closer = longitudinal_gap(ego, veh(1, x=103.999, vx=lead.vx))
    assert closer < th.follow_entry_distance(ego.vx)


def test_gap_antisymmetry():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a = veh(0, x=float(rng.uniform(-100, 100)), length=float(rng.uniform(3, 15)))
        b = veh(1, x=float(rng.uniform(-100, 100)), length=float(rng.uniform(3, 15)))
        total = 0.5 * (a.length + b.length)
        assert longitudinal_gap(a, b) == pytest.approx((b.x - a.x) - total)
        assert longitudinal_gap(b, a) == pytest.approx((a.x - b.x) - total)


def test_ttcx_closing():
    assert ttcx(veh(x=0, vx=30), veh(1, x=50, vx=10)) == pytest.approx(2.3)


def test_ttcx_non_closing_cases():
    assert ttcx(veh(x=0, vx=20), veh(1, x=50, vx=20)) is None
    assert ttcx(veh(x=0, vx=10), veh(1, x=50, vx=20)) is None


def test_ttcx_forward_integration_closes_gap():
    rng = np.random.default_rng(11)
    for _ in range(200):
        rear = veh(0, x=0.0, vx=float(rng.uniform(10, 40)))
        front = veh(1, x=float(rng.uniform(10, 120)), vx=float(rng.uniform(0, 35)))
        t = ttcx(rear, front)
        if t is None:
            continue
        assert abs(longitudinal_gap(rear.propagated(t), front.propagated(t))) < 1e-9


def test_lane_of_partition_and_tiebreak():
    road = uniform_road(3, lane_width=3.75)
    assert lane_of(1.875, road) == 0
    assert lane_of(3.75, road) == 1           # on a shared line -> left lane
    assert lane_of(11.25, road) == 2          # left road edge stays in-lane
    assert lane_of(-0.01, road) is None
    assert lane_of(11.26, road) is None
    # total partition over the road
    for y in np.linspace(0.0, 11.25, 401):
        idx = lane_of(float(y), road)
        assert idx is not None
        lane = road.lanes[idx]
        assert lane.y_right <= y <= lane.y_left


def test_overlaps_lane_line():
    e = veh(y=3.75, width=1.8)
    assert overlaps_lane_line(e, 3.75)
    assert not overlaps_lane_line(veh(y=3.75 + 0.9, width=1.8), 3.75)  # touching
    assert not overlaps_lane_line(veh(y=7.5, width=1.8), 3.75)


def test_vehicle_state_validation():
    with pytest.raises(ValueError):
        veh(length=0.0)
    with pytest.raises(ValueError):
        VehicleState(id=0, x=0, y=0, vx=-1.0)


def test_road_model_validation():
    with pytest.raises(ValueError):
        Lane(y_right=1.0, y_left=0.0, v_min=10, v_max=20)
    with pytest.raises(ValueError):
        Lane(y_right=0.0, y_left=3.75, v_min=20, v_max=10)
    with pytest.raises(ValueError):
        RoadModel((Lane(0, 3.75, 10, 20), Lane(4.0, 7.75, 10, 20)))


def test_thresholds_defaults_and_validation():
    th = LawThresholds()
    assert th.ttcx_min == 2.3
    assert th.d_clmin == 14.0
    assert th.t_max_cl == 6.0
    assert th.dv_ot == 15.0
    assert th.follow_speed_break == pytest.approx(100.0 / 3.6)
    assert th.follow_recovery_distance(100.0) == pytest.approx(105.0)
    assert th.follow_recovery_distance(50.0) == pytest.approx(55.0)
    with pytest.raises(ValueError):
        LawThresholds(follow_dist_fast=40.0)


def test_interval():
    iv = Interval(1.0, 2.0)
    assert iv.contains(1.0) and iv.contains(2.0)
    assert iv.clamp(5.0) == 2.0
    assert iv.intersect(Interval(1.5, 3.0)) == Interval(1.5, 2.0)
    assert iv.intersect(Interval(2.5, 3.0)) is None
    with pytest.raises(ValueError):
        Interval(2.0, 1.0)


def test_kmh():
    assert kmh(100.0) == pytest.approx(27.7778, abs=1e-4)
