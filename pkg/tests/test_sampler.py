from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import qmc

from qmcritz.errors import ConfigurationError, UsageError
from qmcritz.sampler import (
    BoundaryStream,
    DomainBox,
    PointSet,
    PrngState,
    SobolState,
    boundary_points,
    direction_numbers,
    face_normals,
    l2_star_discrepancy,
    load_direction_table,
    map_to_box,
    mc_points,
    sobol_block,
    sobol_points,
    splitmix64,
)


def radical_inverse_gray(i: int) -> Fraction:
    """First Sobol coordinate, from scratch: van der Corput of the Gray code of i."""
    g = i ^ (i >> 1)
    out, scale = Fraction(0), Fraction(1, 2)
    while g:
        if g & 1:
            out += scale
        g >>= 1
        scale /= 2
    return out


def test_first_points_1d_match_radical_inverse():
    ps, _ = sobol_points(SobolState(1), 4)
    expected = [float(radical_inverse_gray(i)) for i in range(1, 5)]
    assert expected == [0.5, 0.75, 0.25, 0.375]
    assert list(ps.points[:, 0]) == expected


def test_first_coordinate_matches_oracle_over_long_run():
    ps, _ = sobol_points(SobolState(3), 300)
    assert all(ps.points[i, 0] == float(radical_inverse_gray(i + 1)) for i in range(300))


@pytest.mark.parametrize("dim", [1, 2, 5, 16, 64])
def test_matches_scipy_unscrambled(dim):
    ref = qmc.Sobol(dim, scramble=False).random_base2(10)[1:]
    ps, _ = sobol_points(SobolState(dim), 1023)
    np.testing.assert_array_equal(ps.points, ref)


def test_gray_step_matches_batch():
    st_a = SobolState(4)
    seq = np.array([st_a.next_point() for _ in range(100)])
    ps, st_b = sobol_points(SobolState(4), 100)
    np.testing.assert_array_equal(seq, ps.points)
    assert st_a.index == st_b.index == 100
    np.testing.assert_array_equal(st_a.current, st_b.current)


def test_resuming_from_state_continues_sequence():
    whole, _ = sobol_points(SobolState(3), 250)
    first, state = sobol_points(SobolState(3), 100)
    second, _ = sobol_points(state, 150)
    np.testing.assert_array_equal(np.vstack([first.points, second.points]), whole.points)


def test_zero_points_leaves_state_alone():
    state = SobolState(2, 17)
    ps, new = sobol_points(state, 0)
    assert len(ps) == 0 and new.index == 17


def test_sobol_is_deterministic():
    a, _ = sobol_points(SobolState(8, 1000), 64)
    b, _ = sobol_points(SobolState(8, 1000), 64)
    assert a.points.tobytes() == b.points.tobytes()


def test_origin_is_skipped_by_stream_but_present_in_raw_blocks():
    np.testing.assert_array_equal(sobol_block(3, 0, 1), np.zeros((1, 3)))
    ps, _ = sobol_points(SobolState(3), 5)
    np.testing.assert_array_equal(ps.points, sobol_block(3, 1, 5))


def _stratified(points, m):
    for k in range(points.shape[1]):
        bins = np.floor(points[:, k] * 2**m).astype(int)
        if not np.array_equal(np.sort(bins), np.arange(2**m)):
            return False
    return True


@pytest.mark.parametrize("dim", range(1, 9))
def test_stratification_of_leading_blocks(dim):
    for m in range(0, 11):
        assert _stratified(sobol_block(dim, 0, 2**m), m), (dim, m)


@pytest.mark.parametrize("dim", [2, 8])
def test_stratification_of_aligned_blocks_from_the_stream(dim):
    # The training stream skips the origin, so a stream cursor at 2^m - 1
    # starts exactly at an aligned block of 2^m points.
    for m in (3, 6, 9):
        for block in (1, 2, 5):
            ps, _ = sobol_points(SobolState(dim, block * 2**m - 1), 2**m)
            assert _stratified(ps.points, m), (dim, m, block)


def test_skipping_the_origin_breaks_the_first_block():
    # Points 1..2^m are one off an aligned block; documents why sobol_block exists.
    ps, _ = sobol_points(SobolState(1), 16)
    assert not _stratified(ps.points, 4)


def test_direction_table_properties(tmp_path):
    table = load_direction_table()
    assert set(table) == set(range(2, 65))
    v = direction_numbers(64)
    assert v.shape == (64, 32)
    # v_j = m_j / 2^j with m_j odd: bit j is set and nothing below it (unit diagonal)
    for d in range(64):
        for j in range(32):
            word = int(v[d, j])
            assert (word >> (31 - j)) & 1 == 1
            assert word & ((1 << (31 - j)) - 1) == 0
    bad = tmp_path / "bad.txt"
    bad.write_text("d s a m\n2 1 0 2\n")
    with pytest.raises(ConfigurationError):
        load_direction_table(bad)


def test_dimension_limits():
    with pytest.raises(ConfigurationError):
        SobolState(65)
    with pytest.raises(ConfigurationError):
        SobolState(0)
    with pytest.raises(ConfigurationError):
        sobol_points(SobolState(1, 2**32 - 10), 20)


def test_splitmix64_reference_vector():
    # published outputs for seed 1234567
    assert [int(v) for v in splitmix64(1234567, 0, 5)] == [
        6457827717110365317,
        3203168211198807973,
        9817491932198370423,
        4593380528125082431,
        16408922859458223821,
    ]


def test_splitmix64_windows_agree():
    whole = splitmix64(42, 0, 50)
    np.testing.assert_array_equal(splitmix64(42, 20, 30), whole[20:])


def test_mc_points_deterministic_and_resumable():
    a, sa = mc_points(PrngState(7), 100, 3)
    b, _ = mc_points(PrngState(7), 100, 3)
    assert a.points.tobytes() == b.points.tobytes()
    c, _ = mc_points(sa, 10, 3)
    whole, _ = mc_points(PrngState(7), 110, 3)
    np.testing.assert_array_equal(whole.points[100:], c.points)
    assert sa.position == 300


def test_mc_points_range_and_single_point():
    ps, _ = mc_points(PrngState(0), 1, 4)
    assert ps.points.shape == (1, 4)
    big, _ = mc_points(PrngState(1), 20000, 2)
    assert big.points.min() >= 0.0 and big.points.max() < 1.0


def test_mc_mean_clt_bound():
    inside = 0
    for seed in range(100):
        ps, _ = mc_points(PrngState(seed), 1024, 1)
        inside += abs(ps.points.mean() - 0.5) <= 3.0 * np.sqrt(1 / 12 / 1024)
    assert inside >= 99


def test_map_to_box():
    box = DomainBox.cube(2, -1.0, 1.0)
    ps = map_to_box(PointSet(np.array([[0.5, 0.5], [0.0, 0.25]])), box)
    np.testing.assert_array_equal(ps.points, [[0.0, 0.0], [-1.0, -0.5]])
    assert ps.frame == "domain" and ps.measure == 4.0
    assert DomainBox.cube(4, -1.0, 1.0).volume == 16.0
    with pytest.raises(UsageError):
        map_to_box(ps, box)
    with pytest.raises(UsageError):
        map_to_box(PointSet(np.zeros((1, 3))), box)


def test_box_validation():
    with pytest.raises(ConfigurationError):
        DomainBox((0.0, 1.0), (1.0, 1.0))


def test_boundary_1d_alternates_ends():
    box = DomainBox.cube(1, 0.0, 1.0)
    ps, _ = boundary_points(BoundaryStream("qmc", 1), 4, box)
    np.testing.assert_array_equal(ps.points[:, 0], [0.0, 1.0, 0.0, 1.0])


def test_boundary_qmc_balances_faces():
    box = DomainBox.cube(2, -1.0, 1.0)
    ps, stream = boundary_points(BoundaryStream("qmc", 2), 8, box)
    assert np.bincount(ps.face_ids, minlength=4).tolist() == [2, 2, 2, 2]
    assert ps.measure == 8.0
    # the cursor carries over between calls
    ps2, _ = boundary_points(stream, 3, box)
    assert ps2.face_ids.tolist() == [0, 1, 2]


@pytest.mark.parametrize("strategy", ["qmc", "mc"])
def test_boundary_points_lie_on_exactly_one_face(strategy):
    box = DomainBox((0.0, -2.0, 1.0), (1.0, 3.0, 1.5))
    ps, _ = boundary_points(BoundaryStream(strategy, 3, seed=3), 300, box)
    lo, hi = np.array(box.lower), np.array(box.upper)
    on_face = np.isclose(ps.points, lo) | np.isclose(ps.points, hi)
    assert (on_face.sum(axis=1) >= 1).all()
    assert box.contains(ps.points).all()
    axes = ps.face_ids // 2
    bound = np.where(ps.face_ids % 2 == 1, hi[axes], lo[axes])
    np.testing.assert_array_equal(ps.points[np.arange(300), axes], bound)


def test_boundary_mc_face_frequencies_follow_area():
    box = DomainBox((0.0, 0.0), (4.0, 1.0))  # faces x=const have length 1, y=const length 4
    ps, _ = boundary_points(BoundaryStream("mc", 2, seed=11), 20000, box)
    freq = np.bincount(ps.face_ids, minlength=4) / 20000
    np.testing.assert_allclose(freq, [0.1, 0.1, 0.4, 0.4], atol=0.015)


def test_face_normals():
    n = face_normals(np.array([0, 1, 2, 3]), 2)
    np.testing.assert_array_equal(n, [[-1, 0], [1, 0], [0, -1], [0, 1]])


# --- discrepancy ---------------------------------------------------------------


def _exact_1d_l2star(x):
    """Integral of (#{x_i <= t}/N - t)^2 over [0,1], piece by piece in exact arithmetic."""
    xs = sorted(Fraction(v) for v in x)
    n = len(xs)
    knots = [Fraction(0)] + xs + [Fraction(1)]
    total = Fraction(0)
    for j in range(len(knots) - 1):
        a, b, c = knots[j], knots[j + 1], Fraction(j, n)
        # integral of (c - t)^2 from a to b
        total += ((c - a) ** 3 - (c - b) ** 3) / 3
    return float(total) ** 0.5


def test_discrepancy_single_midpoint():
    assert l2_star_discrepancy(PointSet(np.array([[0.5]]))) == pytest.approx(0.288675134594813, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 1.0, exclude_max=True), min_size=1, max_size=12))
def test_discrepancy_1d_matches_exact_integral(xs):
    ps = PointSet(np.array(xs)[:, None])
    assert l2_star_discrepancy(ps) == pytest.approx(_exact_1d_l2star(xs), abs=1e-12)


def test_discrepancy_matches_scipy():
    ps, _ = mc_points(PrngState(5), 200, 3)
    ref = qmc.discrepancy(ps.points, method="L2-star")
    assert l2_star_discrepancy(ps) == pytest.approx(ref, rel=1e-10)


def test_discrepancy_duplication_invariant():
    ps, _ = mc_points(PrngState(2), 50, 2)
    doubled = PointSet(np.vstack([ps.points, ps.points]))
    assert l2_star_discrepancy(doubled) == pytest.approx(l2_star_discrepancy(ps), rel=1e-12)


def test_discrepancy_chunking_does_not_matter():
    ps, _ = mc_points(PrngState(9), 300, 2)
    assert l2_star_discrepancy(ps, chunk=7) == pytest.approx(l2_star_discrepancy(ps, chunk=1000), rel=1e-13)


def test_sobol_beats_mc_at_1024():
    sob, _ = sobol_points(SobolState(2), 1024)
    t_sobol = l2_star_discrepancy(sob)
    t_mc = np.mean([l2_star_discrepancy(mc_points(PrngState(s), 1024, 2)[0]) for s in range(50)])
    assert t_sobol < t_mc


def test_discrepancy_rejects_domain_frame():
    with pytest.raises(UsageError):
        l2_star_discrepancy(PointSet(np.zeros((1, 1)), frame="domain"))
