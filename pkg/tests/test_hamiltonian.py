import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mpal.errors import ConfigError, SizeCapError, UsageError
from mpal.geometry import SymmetricSet, cube_set, project_sites
from mpal.hamiltonian import (
    DisorderRealization,
    InteractionPotential,
    PiecewiseLinear,
    Uniform,
    assemble,
    boundary_operator,
    check_geometric_decomposition,
    fixed_disorder,
    parse_distribution,
    sample_disorder,
    zero_disorder,
)
from mpal.spectral import eigensystem

NN = InteractionPotential.nearest_neighbor(0.7, 0.3)


def random_symmetric_subset(theta, rs, keep=0.5):
    reps = [r for r in theta.reps if rs.random() < keep]
    return SymmetricSet(reps, theta.n_particles)


def test_uniform_values_in_support_and_mean():
    r = sample_disorder(3, range(100_000), Uniform(1.0))
    v = r.values(range(100_000))
    assert v.min() >= 0 and v.max() <= 1
    assert abs(v.mean() - 0.5) < 0.01


def test_site_values_independent_of_site_set():
    a = sample_disorder(11, [0, 5, 9], Uniform(2.0))
    b = sample_disorder(11, range(-3, 20), Uniform(2.0))
    assert a.value(5) == b.value(5)
    # sites not materialised are still derived from the seed
    assert a.value(17) == b.value(17)


def test_piecewise_linear_inverse_cdf():
    d = PiecewiseLinear((0, 0.5, 1.0), (1, 3, 1))
    u = np.linspace(0, 1, 2001)
    x = d.ppf(u)
    assert np.all(np.diff(x) >= 0) and x[0] == 0 and x[-1] == pytest.approx(1.0)
    # density 1..3..1 normalised by 2: CDF at 0.5 is one half
    assert d.ppf([0.5])[0] == pytest.approx(0.5)
    assert d.density_sup == pytest.approx(1.5)
    assert not d.smooth and PiecewiseLinear((0, 1), (2, 2)).smooth
    samples = sample_disorder(1, range(50_000), d).values(range(50_000))
    assert abs(samples.mean() - 0.5) < 0.01
    # CDF(1/4) = integral of (1+4x)/2 over [0, 1/4] = 0.1875
    assert abs((samples < 0.25).mean() - 0.1875) < 0.01


def test_distribution_errors():
    with pytest.raises(ConfigError):
        parse_distribution({"kind": "bernoulli"})
    with pytest.raises(ConfigError):
        parse_distribution({"kind": "uniform", "vmax": 1})
    with pytest.raises(ConfigError):
        PiecewiseLinear((0, 1), (1, 0))


def test_realization_json_round_trip():
    r = sample_disorder(77, [0, 1, 2], Uniform(1.0))
    again = DisorderRealization.from_dict(json.loads(json.dumps(r.to_dict())))
    assert again.values([0, 1, 2, 50]).tolist() == r.values([0, 1, 2, 50]).tolist()
    with pytest.raises(UsageError):
        fixed_disorder({0: 0.5}).value(1)


def test_interaction_must_be_even():
    with pytest.raises(UsageError):
        InteractionPotential({1: 1.0})
    assert InteractionPotential.zero().range_constant == 1
    assert NN.range_constant == 2
    assert NN(-1) == NN(1) == 0.3


def test_single_site_matrix():
    h = assemble(SymmetricSet([(0,)], 1), fixed_disorder({0: 0.25}), 4.0)
    assert h.matrix.tolist() == [[1.0]]


def test_two_particle_hand_assembly():
    theta = SymmetricSet([(0, 0), (0, 1), (1, 1)], 2)
    h = assemble(theta, zero_disorder([0, 1]), 5.0, InteractionPotential.on_site(2.0))
    assert h.index == ((0, 0), (0, 1), (1, 0), (1, 1))
    expected = np.array([[2, -1, -1, 0], [-1, 0, 0, -1], [-1, 0, 0, -1], [0, -1, -1, 2]], dtype=float)
    assert np.array_equal(h.matrix, expected)


def test_assembled_structure(rs):
    theta = cube_set((0, 2), 2)
    r = sample_disorder(4, project_sites(theta), Uniform(1.0))
    h = assemble(theta, r, 3.0, NN)
    m = h.matrix
    assert np.array_equal(m, m.T)
    for i, x in enumerate(h.index):
        expected = 3.0 * sum(r.value(c) for c in x) + NN(x[0] - x[1])
        assert m[i, i] == pytest.approx(expected, abs=1e-14)
        # bitwise equal on the permuted configuration
        assert m[i, i] == m[h.position[x[::-1]], h.position[x[::-1]]]
        for j, y in enumerate(h.index):
            if i != j:
                l1 = sum(abs(a - b) for a, b in zip(x, y))
                assert m[i, j] == (-1.0 if l1 == 1 else 0.0)
    # permutation conjugation leaves the matrix unchanged
    perm = [h.position[x[::-1]] for x in h.index]
    assert np.array_equal(m[np.ix_(perm, perm)], m)


def test_assembly_is_deterministic():
    theta = cube_set((0, 0, 1), 1)
    r1 = sample_disorder(5, project_sites(theta), Uniform(1.0))
    r2 = sample_disorder(5, project_sites(theta), Uniform(1.0))
    assert assemble(theta, r1, 2.0, NN).matrix.tobytes() == assemble(theta, r2, 2.0, NN).matrix.tobytes()


def test_size_cap():
    with pytest.raises(SizeCapError):
        assemble(cube_set((0, 0), 5), zero_disorder(range(-5, 6)), 1.0, cap=50)
    with pytest.raises(UsageError):
        assemble(SymmetricSet((), 1), zero_disorder([]), 1.0)


def test_boundary_operator_examples():
    theta = cube_set((0,), 1)
    g = boundary_operator(SymmetricSet([(0,)], 1), theta)
    expected = np.zeros((3, 3))
    expected[1, 0] = expected[0, 1] = expected[1, 2] = expected[2, 1] = 1
    assert np.array_equal(g.matrix, expected)
    assert not boundary_operator(theta, theta).matrix.any()


def test_geometric_decomposition_random(rs):
    for trial in range(50):
        n = 1 + trial % 2
        theta = cube_set(tuple(rs.integers(-3, 4, n).tolist()), 3 if n == 1 else 2)
        phi = random_symmetric_subset(theta, rs)
        r = sample_disorder(trial, project_sites(theta), Uniform(1.0))
        assert check_geometric_decomposition(theta, phi, r, 2.5, NN) == 0.0
        g = boundary_operator(phi, theta).matrix
        assert np.array_equal(g, g.T) and g.sum(axis=1).max() <= 2 * n


def test_gershgorin_containment(rs):
    for trial in range(20):
        theta = cube_set((0, 1), 2)
        r = sample_disorder(trial, project_sites(theta), Uniform(1.0))
        h = assemble(theta, r, float(rs.uniform(0, 10)), NN)
        ev = eigensystem(h).eigenvalues
        d = np.diag(h.matrix)
        assert np.all(np.abs(ev[:, None] - d[None, :]).min(axis=1) <= 4 + 1e-8)


@given(st.integers(0, 2**32), st.floats(0, 50))
def test_diagonal_permutation_invariance(seed, lam):
    theta = cube_set((0, 1, 3), 1)
    r = sample_disorder(seed, project_sites(theta), Uniform(1.0))
    h = assemble(theta, r, lam, NN)
    for i, x in enumerate(h.index):
        j = h.position[(x[2], x[0], x[1])]
        assert h.matrix[i, i] == h.matrix[j, j]
