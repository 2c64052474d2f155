import numpy as np
import pytest
from hypothesis import given, strategies as st

from stealthy_lab.errors import EstimatorError, PreconditionError
from stealthy_lab.lattice import TorusGeometry
from stealthy_lab.points import (PointConfiguration, ball_gap, collective_coordinates, energy,
                                 energy_and_gradient, generate_stealthy, lattice_configuration,
                                 perturbed_lattice, read_points_csv, structure_factor,
                                 write_points_csv)
from stealthy_lab.structure import gap_radius


def test_lattice_structure_factor():
    cfg = PointConfiguration(1, 8.0, lattice_configuration(1, 8, 8.0))
    k = 2 * np.pi / 8.0 * np.arange(1, 8)
    S = structure_factor(cfg, k[:, None])
    assert np.max(S[:-1]) < 1e-25          # modes 1..6
    assert S[-1] < 1e-25
    assert structure_factor(cfg, [[2 * np.pi]])[0] == pytest.approx(8.0)


def test_single_point():
    cfg = PointConfiguration(2, 3.0, [[0.4, 1.1]])
    k = np.random.default_rng(0).normal(size=(10, 2))
    assert np.allclose(structure_factor(cfg, k), 1.0)


def test_empty_and_zero_mode():
    with pytest.raises(EstimatorError):
        structure_factor(PointConfiguration(1, 1.0, np.zeros((0, 1))), [[1.0]])
    with pytest.raises(ValueError):
        structure_factor(PointConfiguration(1, 1.0, [[0.1]]), [[0.0]])


def test_poisson_average():
    rng = np.random.default_rng(1)
    L, N = 20.0, 200
    k = np.array([[2 * np.pi * 3 / L]])
    vals = [structure_factor(PointConfiguration(1, L, rng.uniform(0, L, (N, 1))), k)[0]
            for _ in range(2000)]
    assert abs(np.mean(vals) - 1) < 0.1


def test_generate_stealthy_example():
    gap = ball_gap(1, 32.0, 0.5)
    cfg = generate_stealthy(32, 1, 32.0, gap, seed=4)
    assert cfg.certified
    assert cfg.energy <= 1e-12 * 32 ** 2
    k = gap.geometry.wavevectors[gap.nonzero_mask]
    assert np.max(structure_factor(cfg, k)) <= 1e-12
    assert gap_radius(gap) >= 0.5


def test_overconstrained_rejected():
    gap = ball_gap(1, 32.0, 3.0)
    with pytest.raises(PreconditionError):
        generate_stealthy(4, 1, 32.0, gap, seed=0)


def test_generate_is_deterministic():
    gap = ball_gap(2, 10.0, 1.5)
    a = generate_stealthy(20, 2, 10.0, gap, seed=8)
    b = generate_stealthy(20, 2, 10.0, gap, seed=8)
    assert np.array_equal(a.points, b.points)


def test_perturbed_lattice():
    z = perturbed_lattice(1, 16, 16.0, 0.0)
    assert np.allclose(np.sort(z.points[:, 0]), np.arange(16))
    p = perturbed_lattice(2, 5, 5.0, 0.2, seed=3)
    assert p.N == 25
    d = (p.points - lattice_configuration(2, 5, 5.0) + 2.5) % 5.0 - 2.5
    assert np.max(np.abs(d)) <= 0.2
    with pytest.raises(ValueError):
        perturbed_lattice(1, 4, 4.0, -1.0)


@given(seed=st.integers(0, 10 ** 6), d=st.integers(1, 3))
def test_gradient_matches_finite_differences(seed, d):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 5, (6, d)).ravel()
    k = rng.normal(size=(5, d))
    E, g = energy_and_gradient(x, k, d)
    h = 1e-6
    fd = np.array([(energy_and_gradient(x + h * e, k, d)[0] - energy_and_gradient(x - h * e, k, d)[0])
                   / (2 * h) for e in np.eye(x.size)])
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-6 * max(1.0, np.max(np.abs(fd))))


@given(seed=st.integers(0, 10 ** 6), d=st.integers(1, 3))
def test_energy_invariances(seed, d):
    rng = np.random.default_rng(seed)
    L = 7.0
    geometry = TorusGeometry(d, 6, L)
    k = geometry.wavevectors.reshape(-1, d)[1:8]
    x = rng.uniform(0, L, (9, d))
    E = energy(x, k)
    assert energy(x[rng.permutation(9)], k) == pytest.approx(E, rel=1e-10, abs=1e-10)
    shift = rng.uniform(-L, L, d)
    assert energy((x + shift) % L, k) == pytest.approx(E, rel=1e-9, abs=1e-9)


@given(seed=st.integers(0, 10 ** 6))
def test_structure_factor_translation_invariant(seed):
    rng = np.random.default_rng(seed)
    cfg = PointConfiguration(2, 6.0, rng.uniform(0, 6, (12, 2)))
    k = TorusGeometry(2, 6, 6.0).wavevectors.reshape(-1, 2)[1:]
    s = structure_factor(cfg, k)
    s2 = structure_factor(cfg.translated(rng.uniform(-10, 10, 2)), k)
    assert np.allclose(s, s2, rtol=1e-9, atol=1e-9)


def test_collective_coordinates_conjugate_pairs(rng):
    x = rng.uniform(0, 4, (7, 2))
    k = rng.normal(size=(3, 2))
    assert np.allclose(collective_coordinates(x, -k), np.conj(collective_coordinates(x, k)))


def test_csv_roundtrip(tmp_path):
    gap = ball_gap(1, 16.0, 0.8)
    cfg = generate_stealthy(16, 1, 16.0, gap, seed=1)
    write_points_csv(tmp_path / "p.csv", cfg)
    back = read_points_csv(tmp_path / "p.csv")
    assert np.array_equal(back.points, cfg.points)
    assert np.array_equal(back.gap.mask, cfg.gap.mask)
    assert back.energy == cfg.energy
