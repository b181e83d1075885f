"""Tests for 4D format generation, shaping, normalization and file I/O."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fiber4d import constellation as cst


def test_pm_qpsk_geometry():
    c = cst.make_pm_qam(2)
    assert c.size == 16
    assert c.m == 4
    # unit average 4D energy forces 4*a^2 = 1, so every coordinate is +/- 0.5
    assert np.allclose(np.sort(np.unique(c.points)), [-0.5, 0.5])
    assert np.allclose(c.probs, 1 / 16)
    assert abs(c.mean_energy() - 1.0) < 1e-12


def test_pm32qam_basics():
    c = cst.make_pm_qam(5)
    assert c.size == 1024
    assert all(len(lab) == 10 for lab in c.labels)
    assert abs(c.mean_energy() - 1.0) < 1e-9
    assert len(set(c.labels)) == 1024


def test_pm64qam_is_12_bits():
    c = cst.make_pm_qam(6)
    assert c.size == 4096
    assert c.m == 12


def test_unsupported_order_rejected():
    with pytest.raises(cst.ConstellationError, match="unsupported"):
        cst.make_pm_qam(7)
    with pytest.raises(cst.ConstellationError, match="unsupported"):
        cst.make_pm_qam(1)


def test_cross_32_shape():
    """The 2D component of PM-32QAM is the 6x6 square minus its corners."""
    c = cst.make_pm_qam(5)
    pol_x = {(round(p[0], 9), round(p[1], 9)) for p in c.points}
    assert len(pol_x) == 32
    scale = min(abs(v) for v, _ in pol_x)
    grid = {(round(x / scale), round(y / scale)) for x, y in pol_x}
    levels = {1, 3, 5}
    assert all(abs(x) in levels and abs(y) in levels for x, y in grid)
    assert not any(abs(x) == 5 and abs(y) == 5 for x, y in grid)


def test_square_qam_gray_neighbors():
    """Minimum-distance neighbors of PM-16QAM differ in exactly one bit."""
    c = cst.make_pm_qam(4)
    d2 = np.sum((c.points[:, None, :] - c.points[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    dmin = d2.min()
    bits = c.label_bits()
    ii, jj = np.nonzero(np.abs(d2 - dmin) < 1e-12)
    hamming = np.abs(bits[ii] - bits[jj]).sum(axis=1)
    assert np.all(hamming == 1)


def test_cross_32_quasi_gray():
    """Most minimum-distance neighbor pairs of the 32-cross differ in one bit."""
    c = cst.make_pm_qam(5)
    d2 = np.sum((c.points[:, None, :] - c.points[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    dmin = d2.min()
    bits = c.label_bits()
    ii, jj = np.nonzero(np.abs(d2 - dmin) < 1e-12)
    hamming = np.abs(bits[ii] - bits[jj]).sum(axis=1)
    assert np.mean(hamming == 1) > 0.7
    assert np.mean(hamming) < 1.5


def test_mb_lambda_zero_is_uniform():
    c = cst.make_mb_shaped_pm64qam(0.0)
    assert np.allclose(c.probs, 1 / 4096)


def test_mb_large_lambda_concentrates():
    c = cst.make_mb_shaped_pm64qam(50.0)
    energies = c.energies()
    inner = energies <= energies.min() + 1e-9
    assert inner.sum() == 16  # (+-1, +-1) x (+-1, +-1) on the integer grid
    assert c.probs[inner].sum() > 1 - 1e-12
    assert np.allclose(c.probs[inner], 1 / 16)


def test_mb_probs_match_direct_summation():
    """Oracle: evaluate exp(-lambda*E)/Z by direct summation on the raw grid."""
    lam = 0.05
    levels = np.array([-7, -5, -3, -1, 1, 3, 5, 7], dtype=float)
    grid_2d = [(x, y) for x in levels for y in levels]
    energies_4d = np.array([x * x + y * y + u * u + v * v for (x, y) in grid_2d for (u, v) in grid_2d])
    weights = np.exp(-lam * energies_4d)
    expected_sorted = np.sort(weights / weights.sum())
    c = cst.make_mb_shaped_pm64qam(lam)
    assert np.allclose(np.sort(c.probs), expected_sorted, atol=1e-12)


def test_mb_entropy_monotone_in_lambda():
    lambdas = [0.0, 0.01, 0.02, 0.05, 0.1, 0.3, 1.0]
    ents = [cst.entropy(cst.make_mb_shaped_pm64qam(lam)) for lam in lambdas]
    assert all(e1 >= e2 - 1e-12 for e1, e2 in zip(ents, ents[1:]))


def test_mb_negative_lambda_rejected():
    with pytest.raises(cst.ConstellationError):
        cst.make_mb_shaped_pm64qam(-0.1)


def test_normalize_scale_invariance_and_idempotence():
    c = cst.make_pm_qam(3)
    doubled = cst.Constellation4D(c.points * 2.0, c.labels, c.probs)
    renorm = cst.normalize(doubled)
    assert np.allclose(renorm.points, c.points, atol=1e-12)
    again = cst.normalize(c)
    assert np.max(np.abs(again.points - c.points)) < 1e-12


def test_normalize_two_point_hand_example():
    # E = 0.5*4 + 0.5*0 = 2, so the first point scales to sqrt(2)*... = (sqrt(2),0,0,0)
    pts = np.array([[2.0, 0, 0, 0], [0, 0, 0, 0]])
    c = cst.Constellation4D(pts, ("0", "1"), np.array([0.5, 0.5]))
    n = cst.normalize(c)
    assert abs(n.points[0, 0] - math.sqrt(2.0)) < 1e-12


def test_normalize_rejects_zero_energy():
    pts = np.zeros((2, 4))
    c = cst.Constellation4D(pts, ("0", "1"), np.array([0.5, 0.5]))
    with pytest.raises(cst.ConstellationError, match="zero"):
        cst.normalize(c)


def test_entropy_values():
    assert abs(cst.entropy(cst.make_pm_qam(5)) - 10.0) < 1e-12
    pts = np.zeros((4, 4))
    pts[:, 0] = [1, 2, 3, 4]
    one_hot = cst.Constellation4D(pts, ("00", "01", "10", "11"), np.array([1.0, 0, 0, 0]))
    assert cst.entropy(one_hot) == 0.0
    mixed = cst.Constellation4D(pts, ("00", "01", "10", "11"), np.array([0.5, 0.25, 0.25, 0.0]))
    assert abs(cst.entropy(mixed) - 1.5) < 1e-12


@pytest.mark.parametrize("m_per_2d", [2, 3, 4, 5, 6])
def test_generator_invariants(m_per_2d):
    c = cst.make_pm_qam(m_per_2d)
    assert c.size == 1 << (2 * m_per_2d)
    assert abs(float(np.sum(c.probs)) - 1.0) < 1e-9
    assert abs(c.mean_energy() - 1.0) < 1e-9
    assert len(set(c.labels)) == c.size
    assert abs(cst.entropy(c) - c.m) < 1e-9  # uniform entropy equals m


def test_save_load_roundtrip(tmp_path):
    c = cst.make_pm_qam(5)
    path = tmp_path / "pm32.const"
    cst.save(c, path)
    back = cst.load(path)
    assert np.array_equal(back.points, c.points)
    assert back.labels == c.labels
    assert np.array_equal(back.probs, c.probs)


def test_load_rejects_bad_prob_sum(tmp_path):
    c = cst.make_pm_qam(2)
    path = tmp_path / "c.const"
    cst.save(c, path)
    text = path.read_text().splitlines()
    for i in range(3, len(text)):
        parts = text[i].split()
        parts[5] = repr(float(parts[5]) * 0.9)
        text[i] = " ".join(parts)
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(cst.ConstellationError, match="sum"):
        cst.load(path)


def test_load_rejects_duplicate_labels(tmp_path):
    c = cst.make_pm_qam(2)
    path = tmp_path / "c.const"
    cst.save(c, path)
    text = path.read_text().splitlines()
    parts = text[4].split()
    parts[4] = text[3].split()[4]
    text[4] = " ".join(parts)
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(cst.ConstellationError, match="duplicate"):
        cst.load(path)


def test_load_rejects_bad_header(tmp_path):
    path = tmp_path / "c.const"
    path.write_text("not a constellation\n")
    with pytest.raises(cst.ConstellationError, match="header"):
        cst.load(path)


@settings(max_examples=30, deadline=None)
@given(
    m=st.integers(min_value=1, max_value=4),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_random_constellation_normalization_property(m, seed):
    rng = np.random.default_rng(seed)
    M = 1 << m
    pts = rng.normal(size=(M, 4))
    probs = rng.dirichlet(np.ones(M))
    probs = probs / probs.sum()
    labels = tuple(format(i, f"0{m}b") for i in range(M))
    c = cst.Constellation4D(pts, labels, probs)
    if c.mean_energy() > 0:
        n = cst.normalize(c)
        assert abs(n.mean_energy() - 1.0) < 1e-9
        assert 0.0 <= cst.entropy(n) <= m + 1e-12
