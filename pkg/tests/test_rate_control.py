from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from olc.codec import ModelSet, decode
from olc.errors import RateRangeError
from olc.rate_control import (
    Anchor,
    RateAnchorTable,
    bpp_qs_linearity_check,
    calibrate,
    calibrate_per_cloud,
    linearity_deviation,
    occupancy_similarity,
    pooled_occupancy_histogram,
    qs_for_depth,
    qs_for_fractional_depth,
    qs_for_target,
    rc_encode,
    total_variation,
)
from olc.synthetic import lidar_sequence

A = Anchor(10, 2 / 1023, 1.5)
B = Anchor(11, 2 / 2047, 3.5)


def test_qs_for_depth():
    assert qs_for_depth(10) == 2 / 1023
    assert qs_for_fractional_depth(10) == qs_for_depth(10)
    assert qs_for_depth(11) < qs_for_fractional_depth(10.2) < qs_for_depth(10)


def test_interpolation_endpoints_exact():
    assert abs(qs_for_target(A.bpp, A, B) - A.qs) <= 1e-12
    assert abs(qs_for_target(B.bpp, A, B) - B.qs) <= 1e-12
    assert qs_for_target(2.5, A, B) == pytest.approx((A.qs + B.qs) / 2, abs=1e-15)


@given(st.floats(0.0, 1.0), st.floats(0.1, 5), st.floats(0.1, 5), st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
def test_interpolation_matches_exact_rational(u, lo, span, qa, qb):
    a, b = Anchor(1, qa, lo), Anchor(2, qb, lo + span)
    t = lo + u * span
    if not lo <= t <= lo + span:
        return
    F = Fraction
    want = (F(t) - F(lo)) / (F(lo + span) - F(lo)) * (F(qb) - F(qa)) + F(qa)
    assert abs(qs_for_target(t, a, b) - float(want)) <= 1e-12


def test_interpolation_errors():
    with pytest.raises(RateRangeError):
        qs_for_target(4.0, A, B)
    with pytest.raises(ValueError):
        qs_for_target(1.5, A, Anchor(11, B.qs, 1.5))


def test_table_bracket_and_validation():
    t = RateAnchorTable([B, A, Anchor(12, 2 / 4095, 6.0)])
    assert [a.depth for a in t.anchors] == [10, 11, 12]
    assert t.bracket(2.0) == (A, B)
    assert t.bracket(4.0)[0].depth == 11
    a, b = t.bracket(3.5)
    assert a is b and a.depth == 11
    for bad in (1.0, 6.5):
        with pytest.raises(RateRangeError):
            t.bracket(bad)
    with pytest.raises(ValueError):
        RateAnchorTable([A, Anchor(11, B.qs, 1.0)])


def test_csv_roundtrip(tmp_path):
    t = RateAnchorTable([A, B], {"model_checksum": "0x0000000000000000", "dataset": "unit"})
    text = t.to_csv(tmp_path / "a.csv")
    assert text.splitlines()[:3] == ["# dataset=unit", "# model_checksum=0x0000000000000000", "depth,qs,bpp"]
    back = RateAnchorTable.from_csv(tmp_path / "a.csv")
    assert back.anchors == t.anchors and back.provenance == t.provenance
    with pytest.raises(ValueError):
        RateAnchorTable.from_csv("depth,qs\n10,0.1\n")


def test_linearity_deviation_examples():
    assert linearity_deviation([0.1, 0.2, 0.3], [3.0, 2.0, 1.0]) == pytest.approx(0.0, abs=1e-12)
    # residuals of the LS line through (0,0),(1,1),(2,0) are -1/3, 2/3, -1/3
    assert linearity_deviation([0, 1, 2], [0, 1, 0]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        linearity_deviation([0, 1], [2, 2])


def test_tv_examples():
    p = np.array([0.5, 0.5, 0.0])
    assert total_variation(p, p) == 0.0
    assert total_variation(p, np.array([0.0, 0.0, 1.0])) == 1.0
    assert total_variation(p, np.array([0.25, 0.75, 0.0])) == 0.25


@pytest.fixture(scope="module")
def small_lidar():
    return lidar_sequence(np.random.default_rng(3), 4, beams=8, azimuth_steps=180)


def test_calibrate_and_rc_encode(small_lidar):
    table = calibrate(small_lidar[:2], depths=(7, 8), dataset_name="unit")
    assert [a.depth for a in table.anchors] == [7, 8]
    assert table.anchors[0].qs == qs_for_depth(7)
    assert table.provenance["dataset"] == "unit"
    assert table.provenance["model_checksum"] == f"{0:#018x}"
    lo, hi = table.bpp_range
    res = rc_encode(small_lidar[2], (lo + hi) / 2, table)
    assert table.anchors[1].qs < res.qs < table.anchors[0].qs
    assert res.achieved_bpp == res.bitstream.bpp
    assert res.bit_error == pytest.approx(abs(res.achieved_bpp - res.target_bpp) / res.target_bpp)
    assert len(decode(res.bitstream.to_bytes())) > 0
    with pytest.raises(RateRangeError):
        rc_encode(small_lidar[2], hi * 2, table)


def test_calibrate_errors(small_lidar):
    with pytest.raises(ValueError):
        calibrate([])
    with pytest.raises(ValueError):
        calibrate(small_lidar[:1], depths=(7, 9))


def test_calibrate_per_cloud(small_lidar):
    tables = calibrate_per_cloud(small_lidar[:2], depths=(6, 7))
    assert len(tables) == 2
    pooled = calibrate(small_lidar[:2], depths=(6, 7))
    np.testing.assert_allclose(
        [np.mean([t.anchors[i].bpp for t in tables]) for i in range(2)], [a.bpp for a in pooled.anchors]
    )


def test_rc_encode_leaves_model_unchanged(small_lidar, tiny_model):
    before = tiny_model.checksum()
    models = ModelSet.single(tiny_model)
    table = calibrate(small_lidar[:1], models, depths=(6, 7))
    rc_encode(small_lidar[1], sum(table.bpp_range) / 2, table, models)
    assert tiny_model.checksum() == before


def test_linearity_check_runs(small_lidar):
    table = calibrate(small_lidar[:2], depths=(7, 8))
    dev = bpp_qs_linearity_check(small_lidar[:2], None, *table.anchors, n_samples=3)
    assert 0.0 <= dev < 0.5
    with pytest.raises(ValueError):
        bpp_qs_linearity_check(small_lidar[:2], None, *table.anchors, n_samples=2)


def test_occupancy_similarity_shapes(small_lidar):
    sim = occupancy_similarity(small_lidar[0], qs_for_fractional_depth(8.2), 9)
    assert len(sim.per_level) == 9 and 0.0 <= sim.pooled_tv <= 1.0
    assert 0.0 <= sim.weighted_tv <= 1.0
    with pytest.raises(ValueError):
        occupancy_similarity(small_lidar[0], qs_for_fractional_depth(8.2), 10)


def test_pooled_histogram_counts(rng):
    from olc.octree import build_octree

    from conftest import random_qc

    t = build_octree(random_qc(rng, 4, 40))
    h = pooled_occupancy_histogram(t)
    assert h.sum() == pytest.approx(1.0) and h[0] == 0
    n = sum(t.level_size(l) for l in range(t.depth))
    assert np.allclose(h * n, np.round(h * n))
