import itertools
import math

import numpy as np
import pytest

from mpal.emsa import (
    ScaleAnalysis,
    build_buffered,
    big_m,
    choose_bad_center,
    classify_cube,
    check_interactivity,
    crude_bound_check,
    cube_projection,
    decay_parameter_schedule,
    disjoint_projection_check,
    evaluate_events,
    initial_eta,
    initial_lambda,
    initial_scale,
    length_scales,
    m_prime,
    min_initial_scale,
    run_iteration,
    scale_schedule,
    tensor_decomposition_residual,
    verify_buffered_decay,
    verify_local_decay,
    weak_separability,
)
from mpal.errors import ConfigError, DiagnosticError, UsageError
from mpal.geometry import Cube, MsaParameters, cube_set, project_sites, rearrange, sym_distance
from mpal.hamiltonian import InteractionPotential, Uniform, assemble, sample_disorder, zero_disorder
from mpal.spectral import eigensystem, family_separation, family_separated, spectral_distance

NN = InteractionPotential.nearest_neighbor(1.0, 0.5)
SMALL = MsaParameters(ell_min=2)


# interactivity


def test_classify_examples():
    v = classify_cube((5, 1), 1, NN)
    assert v.partial and v.s1 == frozenset({0, 1, 2}) and v.s2 == frozenset({4, 5, 6})
    assert (v.n1, v.n2) == (1, 1)
    assert not classify_cube((5, 5), 1, NN).partial
    for c in [(0,), (7,), (-3,)]:
        assert not classify_cube(c, 3, NN).partial


def test_partial_verdicts_hold_exhaustively(rs):
    for _ in range(100):
        c = tuple(rs.integers(0, 25, 3).tolist())
        L = int(rs.integers(1, 3))
        v = classify_cube(c, L, NN)
        assert check_interactivity(v, Cube(c, L))
        if v.partial:
            assert min(abs(a - b) for a in v.s1 for b in v.s2) >= NN.range_constant


def test_weak_separability_example():
    w = weak_separability(cube_set((4, 1), 1), cube_set((4, 4), 1))
    assert w.s == frozenset({3, 4, 5}) and (w.n1, w.n2) == (1, 2)


def test_weak_separability_identical_sets():
    t = cube_set((0, 3), 1)
    assert weak_separability(t, t) is None


def test_weak_separability_lemma_randomised(rs):
    for _ in range(200):
        L1, L2 = (int(v) for v in rs.integers(0, 3, 2))
        a = tuple(rs.integers(-40, 40, 2).tolist())
        t1 = cube_set(a, L1)
        need = 16 * max(2 * L1, 2 * L2)
        shift = need + int(rs.integers(0, 10))
        b = tuple(int(c) + shift * int(s) for c, s in zip(a, rs.choice([-1, 1], 2)))
        t2 = cube_set(b, L2)
        d = t1.distance_to(t2)
        if d == 0 or d < 16 * max(t1.diameter, t2.diameter):
            continue
        w = weak_separability(t1, t2)
        assert w is not None
        for x in t1.reps:
            assert sum(c in w.s for c in x) == w.n1
        for y in t2.reps:
            assert sum(c in w.s for c in y) == w.n2


# projections and tensor structure


def test_disjoint_projection_examples():
    c1, c2 = Cube((0, 0), 1), Cube((20, 20), 1)
    assert disjoint_projection_check(c1, c2, require_scale=False)
    assert not disjoint_projection_check(c1, c1, require_scale=False)
    with pytest.raises(UsageError):
        disjoint_projection_check(c1, c2)  # L = 1 is not above C_U = 1
    with pytest.raises(UsageError):
        disjoint_projection_check(Cube((0, 9), 1), c2, require_scale=False)


def test_disjoint_projection_exhaustive_window():
    centers = [c for c in itertools.combinations_with_replacement(range(30), 2)
               if not classify_cube(c, 1).partial]
    for a, b in itertools.combinations(centers, 2):
        if sym_distance(a, b) >= 16:
            assert not (cube_projection(a, 1) & cube_projection(b, 1))


def test_tensor_decomposition():
    real = sample_disorder(8, range(-10, 40), Uniform(1.0))
    for center in [(0, 10), (3, 20), (5, 9)]:
        assert tensor_decomposition_residual(center, 1, real, 4.0, NN) < 1e-8
    with pytest.raises(UsageError):
        tensor_decomposition_residual((0, 1), 1, real, 4.0, NN)


# rates and schedules


def test_mass_arithmetic():
    assert m_prime(1, 16, 0.8) == pytest.approx(1 - 3 * 16 ** -0.1)
    assert m_prime(1, 16, 0.8) < 0
    assert big_m(0.5, 10, 0.8, 1.5, 1) == pytest.approx(
        0.5 * (1 - 3 * 10 ** -0.1) * (1 - 250 * 10 ** (1 - 1.2)))
    # buffered gain at m' = 0.8, l = 10
    assert math.exp(-0.8 / 2 * 10) == pytest.approx(math.exp(-4))


def test_length_scales():
    L = length_scales(100, 1.5, 2)
    assert L[2] == pytest.approx(10**4.5)
    assert length_scales(1e10, 1.5, 20)[-1] == math.inf


def test_decay_parameter_recursion():
    assert decay_parameter_schedule(1, 1, 1.5).p == (18.0,)
    d = decay_parameter_schedule(1, 2, 1.5)
    # the stated recursion with 4Nd + 2 = 10 gives p(2) = 3 * 10
    assert d.p == (55.0, 30.0) and d.p_star == 55.0
    assert d.hypothesis_ok and d.chain_ok
    assert decay_parameter_schedule(100, 1, 1.5).p == (100.0,)
    with pytest.raises(ConfigError):
        decay_parameter_schedule(1, 1, 2.0)


def test_scale_schedule_fails_at_small_L0():
    with pytest.raises(ConfigError, match="L_0"):
        scale_schedule(100)


def test_scale_schedule_above_threshold():
    for n in (1, 2):
        L0 = min_initial_scale(n)
        s = scale_schedule(L0 * 1.0001, N=n, k_max=4)
        ms = [r.m for r in s.rows]
        assert all(a >= b for a, b in zip(ms, ms[1:]))
        assert min(ms) >= 0.5 and s.m_inf >= 0.5
        with pytest.raises(ConfigError):
            scale_schedule(L0 / 1e3, N=n)


def test_initial_scale_constants():
    assert initial_eta(2, 0.5) == pytest.approx(4 * (1 + math.exp(0.5)))
    lam = initial_lambda(2, 2, 0.5, 0.1)
    assert lam == pytest.approx(4 * (1 + math.exp(0.5)) * 4 * 5**4 / 0.1)


def test_initial_scale_gershgorin():
    theta = cube_set((0, 0), 2)
    eta = initial_eta(2, 0.5)
    lam = initial_lambda(2, 2, 0.5, 0.1)
    ok = 0
    for seed in range(30):
        real = sample_disorder(seed, project_sites(theta), Uniform(1.0))
        rep = initial_scale(theta, real, lam, None, eta)
        if rep.separated:
            ok += 1
            assert rep.decay_ok
    assert ok >= 25
    with pytest.raises(UsageError):
        initial_scale(theta, real, lam, None, 8.0)


# scale analysis


def analysis(n, l, L, seed, lam=100.0, params=SMALL, center=None):
    center = (0,) * n if center is None else center
    theta = cube_set(center, L)
    real = sample_disorder(seed, project_sites(theta), Uniform(1.0))
    return ScaleAnalysis(center, l, real, lam, NN, params, params.m, L)


def test_events_vacuous_cases():
    an = analysis(1, 4, 8, 0)
    ev = evaluate_events(an)
    assert ev.e_pi and ev.n_partial == 0
    assert ev.n_nr_pairs == 0 and ev.e_nr


def test_events_large_disorder_two_particles():
    an = analysis(2, 3, 3**1.5, 1, lam=1e4, params=MsaParameters(ell_min=3), center=(0, 9))
    ev = evaluate_events(an)
    assert ev.n_partial > 0 and ev.good


def test_local_decay_on_eigenvectors():
    for seed in range(5):
        an = analysis(1, 4, 8, seed, params=MsaParameters())
        applicable = 0
        for k in range(an.es.size):
            psi = an.es.eigenvectors[:, k]
            mu = an.es.eigenvalues[k]
            for a in an.cover.centers:
                chk = verify_local_decay(psi, mu, an.cube(a), an.theta, an.cube_es(a), an.params, an.m, an.L,
                                         an.residuals[k], an.localizing(a))
                applicable += chk.applicable
                assert chk.passed
        assert applicable > 0


def test_local_decay_not_applicable_cases():
    an = analysis(1, 4, 4, 0, params=MsaParameters())
    a = an.cover.centers[0]
    psi = an.es.eigenvectors[:, 0]
    chk = verify_local_decay(psi, an.es.eigenvalues[0], an.cube(a), an.theta, an.cube_es(a), an.params, 0.5, 4)
    assert not chk.applicable and chk.passed
    small = verify_local_decay(psi, 0.0, Cube((0,), 2), an.theta, an.cube_es(a), an.params, 0.5, 4)
    assert small.reason == "l below ell_min"


def test_crude_bound():
    an = analysis(2, 2, 4, 3, lam=10.0)
    for k in range(0, an.es.size, 7):
        psi, mu = an.es.eigenvectors[:, k], an.es.eigenvalues[k]
        for a in an.cover.centers:
            ces = an.cube_es(a)
            eta = spectral_distance(np.array([mu]), ces)
            chk = crude_bound_check(psi, mu, an.cube(a).members, an.theta, eta, ces, an.residuals[k])
            assert chk.passed
    zero = np.zeros(an.es.size)
    a = an.cover.centers[0]
    chk = crude_bound_check(zero, 100.0, an.cube(a).members, an.theta, 1.0, an.cube_es(a))
    assert chk.applicable and chk.passed
    full = crude_bound_check(zero, 100.0, an.theta, an.theta, 1.0, an.es)
    assert not full.applicable


def test_buffered_vacuous_when_upsilon_is_everything():
    an = analysis(1, 4, 8, 0, params=MsaParameters())
    bf = build_buffered(an, choose_bad_center(an))
    assert bf.upsilon == an.theta and not bf.interior
    assert not verify_buffered_decay(an.es.eigenvectors[:, 0], 0.0, bf, an).applicable


def test_buffered_clause_one_particle():
    applicable = 0
    for seed in range(5):
        an = analysis(1, 2, 50, seed)
        bf = build_buffered(an, (0,))
        assert bf.interior and bf.good_centers
        for a in bf.good_centers:
            assert 16 <= sym_distance(a, (0,)) <= 24
        for k in range(an.es.size):
            chk = verify_buffered_decay(an.es.eigenvectors[:, k], an.es.eigenvalues[k], bf, an, an.residuals[k])
            applicable += chk.applicable
            assert chk.passed
    assert applicable > 100
    # psi vanishing on upsilon passes trivially
    zero = np.zeros(an.es.size)
    assert verify_buffered_decay(zero, an.es.eigenvalues[0], bf, an).passed


def test_buffered_clause_two_particles():
    an = analysis(2, 2, 40, 0, lam=20.0)
    b = an.cover.centers[len(an.cover.centers) // 2]
    bf = build_buffered(an, b)
    assert bf.interior and bf.upsilon != an.theta
    with pytest.raises(UsageError):
        build_buffered(an, (100, 100))


def decaying_vector(an, x, rate=1.0):
    v = np.array([math.exp(-rate * sym_distance(y, x)) for y in an.theta.elements])
    return v / np.linalg.norm(v)


def test_iteration_gain_bound_on_constructed_vector():
    an = analysis(1, 2, 50, 0, lam=20.0)
    x = (0,)
    psi = decaying_vector(an, x)
    kinds = set()
    for b in [(20,), (-25,), (10,)]:
        bf = build_buffered(an, b)
        for y0 in an.theta.reps:
            if sym_distance(y0, x) < 10:
                continue
            t = run_iteration(psi, 0.0, an, bf, x, y0, stop_radius=10, mp=0.5)
            assert t.gain_ok
            assert sym_distance(t.final, x) < 10
            assert all(g <= 1 for _, _, g in t.steps)
            kinds |= {k for _, k, _ in t.steps}
    assert kinds == {"good", "bad"}


def test_iteration_empty_trace_near_center():
    an = analysis(1, 2, 50, 0, lam=20.0)
    bf = build_buffered(an, (20,))
    t = run_iteration(decaying_vector(an, (0,)), 0.0, an, bf, (0,), (3,), stop_radius=10, mp=0.5)
    assert t.K == 0 and t.final == (3,) and t.localized is None


def test_iteration_guard():
    an = analysis(1, 2, 50, 0, lam=20.0)
    bf = build_buffered(an, (20,))
    # a flat vector with a negative rate never settles
    psi = np.full(an.es.size, 1 / math.sqrt(an.es.size))
    with pytest.raises(DiagnosticError):
        run_iteration(psi, 0.0, an, bf, (0,), (45,), stop_radius=1, mp=-0.5)


def test_far_fully_interactive_cubes_separate():
    c1, c2 = (0, 1), (20, 21)
    t1, t2 = cube_set(c1, 1), cube_set(c2, 1)
    sep = 0
    for seed in range(1000):
        real = sample_disorder(seed, project_sites(t1) | project_sites(t2), Uniform(1.0))
        e1 = eigensystem(assemble(t1, real, 1.0, NN))
        e2 = eigensystem(assemble(t2, real, 1.0, NN))
        sep += family_separated(family_separation([t1, t2], [e1, e2], 8, 0.3, 2))
    assert sep >= 990


def test_crude_bound_ignores_gaps_below_resolution():
    an = analysis(1, 4, 8, 0)
    a = an.cover.centers[0]
    ces = an.cube_es(a)
    mu = float(ces.eigenvalues[0]) + 1e-14
    psi = an.es.eigenvectors[:, 0]
    chk = crude_bound_check(psi, mu, an.cube(a).members, an.theta, 1e-14, ces)
    assert not chk.applicable and chk.reason == "eta below eigenvalue resolution"
