"""Numerical execution of the eigensystem multi-scale machinery.

Everything here is d = 1.  Verifiers distinguish "precondition unmet"
(``applicable=False``) from "inequality violated" (``passed=False``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .errors import ConfigError, DiagnosticError, InternalConsistencyError, UsageError
from .geometry import (
    Cube,
    MsaParameters,
    SymmetricSet,
    cube_intersection,
    cube_set,
    exterior_boundary,
    inner_core,
    interior_boundary,
    make_cover,
    min_sym_distance,
    rearrange,
    sym_distance,
    truncation_center,
)
from .hamiltonian import DEFAULT_CAP, InteractionPotential, assemble
from .localization import certify_cube
from .spectral import EPS_EIG, eigensystem, separation_threshold, spectral_distance

# ----------------------------------------------------------------------------
# interactivity and weak separability


@dataclass(frozen=True)
class InteractivityVerdict:
    kind: str  # "partial" or "full"
    n1: int = 0
    n2: int = 0
    s1: frozenset = frozenset()
    s2: frozenset = frozenset()

    @property
    def partial(self):
        return self.kind == "partial"


def _floor(x):
    return int(math.floor(x + 1e-12))


def particle_clusters(center, L, c_u):
    """Group the sorted particles whose radius-floor(L) windows come closer than c_u."""
    x = rearrange(center)
    r = _floor(L)
    groups = [[0]]
    for j in range(1, len(x)):
        gap = (x[j] - r) - (x[j - 1] + r)
        if gap < c_u:
            groups[-1].append(j)
        else:
            groups.append([j])
    return x, r, groups


def classify_cube(center, L, interaction=None):
    """Partially interactive iff the window clusters split into at least two groups.

    S1 is the union of the windows of the leftmost cluster, S2 the union of
    the rest, so dist(S1, S2) >= C_U by construction.
    """
    interaction = interaction or InteractionPotential.zero()
    x, r, groups = particle_clusters(center, L, interaction.range_constant)
    if len(groups) < 2:
        return InteractivityVerdict("full")

    def sites(idx):
        return frozenset(s for j in idx for s in range(x[j] - r, x[j] + r + 1))

    first = groups[0]
    rest = [j for g in groups[1:] for j in g]
    return InteractivityVerdict("partial", len(first), len(rest), sites(first), sites(rest))


def check_interactivity(verdict, cube):
    """Exhaustive check of the occupation invariant of a partial verdict."""
    if not verdict.partial:
        return True
    for y in cube.members.reps:
        if sum(c in verdict.s1 for c in y) != verdict.n1 or sum(c in verdict.s2 for c in y) != verdict.n2:
            return False
    return True


@dataclass(frozen=True)
class WeakSeparabilityWitness:
    s: frozenset
    n1: int
    n2: int
    radius: int


def _components(coords, r):
    """Connected components (as closed intervals) of the union of [c - r, c + r]."""
    iv = sorted((c - r, c + r) for c in coords)
    out = [list(iv[0])]
    for lo, hi in iv[1:]:
        if lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [tuple(c) for c in out]


def _constant_count(theta, lo, hi):
    counts = {sum(lo <= c <= hi for c in x) for x in theta.reps}
    return counts.pop() if len(counts) == 1 else None


def _central_rep(theta):
    """Representative minimising the largest distance to the rest (a cube's center)."""
    arr = theta.rep_array
    ecc = np.abs(arr[:, None, :] - arr[None, :, :]).max(axis=2).max(axis=1)
    return theta.reps[int(np.argmin(ecc))]


def weak_separability(theta1, theta2):
    """Witness S with constant, different occupation numbers on the two sets.

    Window radii are tried from max diam_S downwards; every candidate is
    checked exhaustively before it is returned.
    """
    if not theta1 or not theta2:
        raise UsageError("weak_separability needs two nonempty sets")
    a, b = _central_rep(theta1), _central_rep(theta2)
    r0 = max(theta1.diameter, theta2.diameter)
    n = theta1.n_particles
    dist = theta1.distance_to(theta2)
    hypothesis = dist > 0 and dist >= 8 * n * r0  # singletons at distance 0 coincide
    for r in range(r0, -1, -1):
        cands = []
        for lo, hi in _components(a + b, r):
            ka = sum(lo <= c <= hi for c in a)
            kb = sum(lo <= c <= hi for c in b)
            if ka != kb:
                cands.append((not (ka > 0 and kb > 0), lo, hi))
        for _, lo, hi in sorted(cands):
            n1 = _constant_count(theta1, lo, hi)
            n2 = _constant_count(theta2, lo, hi)
            if n1 is not None and n2 is not None and n1 != n2:
                return WeakSeparabilityWitness(frozenset(range(lo, hi + 1)), n1, n2, r)
        if r == r0 and hypothesis:
            raise InternalConsistencyError(
                "no verified witness at the lemma radius although the distance hypothesis holds",
                {"theta1": theta1.reps[:4], "theta2": theta2.reps[:4], "radius": r0},
            )
    return None


def cube_projection(center, L):
    x = rearrange(center)
    r = _floor(L)
    return frozenset(s for c in x for s in range(c - r, c + r + 1))


def disjoint_projection_check(c1, c2, interaction=None, require_scale=True):
    """Whether the single-particle projections of two fully interactive cubes are disjoint."""
    interaction = interaction or InteractionPotential.zero()
    for c in (c1, c2):
        if classify_cube(c.center, c.half_width, interaction).partial:
            raise UsageError(f"cube at {c.center} is not fully interactive")
        if require_scale and not c.radius > interaction.range_constant:
            raise UsageError(f"need L > C_U, got L={c.half_width}, C_U={interaction.range_constant}")
    return not (cube_projection(c1.center, c1.half_width) & cube_projection(c2.center, c2.half_width))


def tensor_decomposition_residual(center, L, realization, lam, interaction=None, cap=DEFAULT_CAP):
    """Spectrum of one occupation sector versus sums of fewer-particle spectra.

    Returns the max-abs difference of the sorted multisets.
    """
    interaction = interaction or InteractionPotential.zero()
    v = classify_cube(center, L, interaction)
    if not v.partial:
        raise UsageError("tensor decomposition needs a partially interactive cube")
    x = rearrange(center)
    theta = cube_set(x, L)
    h = assemble(theta, realization, lam, interaction, cap)
    n1 = v.n1
    sector = [i for i, y in enumerate(h.index) if all(c in v.s1 for c in y[:n1])]
    sub = h.matrix[np.ix_(sector, sector)]
    e = np.linalg.eigvalsh(sub)
    h1 = assemble(cube_set(x[:n1], L), realization, lam, interaction, cap)
    h2 = assemble(cube_set(x[n1:], L), realization, lam, interaction, cap)
    s = np.add.outer(np.linalg.eigvalsh(h1.matrix), np.linalg.eigvalsh(h2.matrix)).ravel()
    s.sort()
    if s.size != e.size:
        return math.inf
    return float(np.abs(s - e).max())


# ----------------------------------------------------------------------------
# per-realization analysis at scales (l, L)


def m_prime(m, l, tau):
    return m * (1.0 - 3.0 * l ** (-(1.0 - tau) / 2.0))


def big_m(m, l, tau, gamma, n):
    return m_prime(m, l, tau) * (1.0 - 250.0 * n * n * l ** (1.0 - tau * gamma))


def _mask(theta, subset):
    """Boolean mask over theta's matrix index marking elements of ``subset``."""
    reps = subset.rep_set
    return np.array([tuple(r) in reps for r in theta.sorted_element_array.tolist()], dtype=bool)


class ScaleAnalysis:
    """One realization on Lambda_L(b) together with its cover at scale l.

    Eigensystems and certificates of cover cubes are computed lazily and
    cached, so several verifiers can share them.
    """

    def __init__(self, center, l, realization, lam, interaction=None, params=None, m=None,
                 L=None, cap=DEFAULT_CAP):
        self.params = params or MsaParameters()
        self.m = self.params.m if m is None else m
        self.l = float(l)
        self.L = self.l ** self.params.gamma if L is None else float(L)
        self.n = len(center)
        self.realization = realization
        self.lam = lam
        self.interaction = interaction or InteractionPotential.zero()
        self.cap = cap
        self.cover = make_cover(rearrange(center), self.L, self.l)
        self.big = self.cover.big
        self.theta = self.big.members
        self._es = {}
        self._cert = {}
        self._buffer_es = {}
        self._buffer = {}

    # scale-level objects

    @cached_property
    def h(self):
        return assemble(self.theta, self.realization, self.lam, self.interaction, self.cap)

    @cached_property
    def es(self):
        return eigensystem(self.h)

    @cached_property
    def residuals(self):
        v = self.es.eigenvectors
        return np.linalg.norm(self.h.matrix @ v - v * self.es.eigenvalues, axis=0)

    @property
    def threshold(self):
        return separation_threshold(self.L, self.params.beta)

    @property
    def m_prime(self):
        return m_prime(self.m, self.l, self.params.tau)

    @property
    def big_m(self):
        return big_m(self.m, self.l, self.params.tau, self.params.gamma, self.n)

    @cached_property
    def position(self):
        return self.h.position

    def values(self, psi, subset):
        """|psi| on the elements of ``subset`` (in subset.elements order)."""
        idx = [self.position[x] for x in subset.elements]
        return np.abs(np.asarray(psi)[idx])

    # cover cubes

    def cube(self, a):
        return self.cover.cube(a)

    def cube_es(self, a):
        a = rearrange(a)
        if a not in self._es:
            members = self.cube(a).members
            self._es[a] = eigensystem(assemble(members, self.realization, self.lam, self.interaction, self.cap))
        return self._es[a]

    def certificate(self, a):
        a = rearrange(a)
        if a not in self._cert:
            self._cert[a] = certify_cube(self.cube_es(a), self.cube(a).members, self.m, self.l, self.params.tau)
        return self._cert[a]

    def localizing(self, a):
        return self.certificate(a).passed

    def kind(self, a):
        return classify_cube(a, self.l, self.interaction)

    def buffer_region(self, a):
        """Lambda_{10 N l}(a) intersected with Lambda_L."""
        a = rearrange(a)
        if a not in self._buffer:
            self._buffer[a] = cube_intersection(Cube(a, 10 * self.n * self.l), self.big)
        return self._buffer[a]

    def buffer_es(self, a):
        a = rearrange(a)
        if a not in self._buffer_es:
            region = self.buffer_region(a)
            self._buffer_es[a] = eigensystem(assemble(region, self.realization, self.lam, self.interaction, self.cap))
        return self._buffer_es[a]

    @cached_property
    def center_array(self):
        return np.array(self.cover.centers, dtype=np.int64).reshape(len(self.cover.centers), self.n)

    @cached_property
    def center_distances(self):
        c = self.center_array
        return np.abs(c[:, None, :] - c[None, :, :]).max(axis=2)


# ----------------------------------------------------------------------------
# good events


@dataclass
class EventReport:
    e_pi: bool
    e_fi: bool
    e_nr: bool
    failed_partial: list = field(default_factory=list)
    failed_full_pairs: list = field(default_factory=list)
    failed_separations: list = field(default_factory=list)
    n_partial: int = 0
    n_full_pairs: int = 0
    n_nr_pairs: int = 0

    @property
    def good(self):
        return self.e_pi and self.e_fi and self.e_nr

    def to_dict(self):
        return {
            "E_PI": self.e_pi, "E_FI": self.e_fi, "E_NR": self.e_nr, "E": self.good,
            "n_partial": self.n_partial, "n_full_pairs": self.n_full_pairs, "n_nr_pairs": self.n_nr_pairs,
            "failed_partial": [list(a) for a in self.failed_partial],
            "failed_full_pairs": [[list(a), list(b)] for a, b in self.failed_full_pairs],
            "failed_separations": [[list(a), list(b), i, j] for a, b, i, j in self.failed_separations],
        }


def evaluate_events(analysis):
    """E_PI, E_FI and E_NR for one realization (threshold 1/2 exp(-L^beta))."""
    an = analysis
    n, l = an.n, an.l
    centers = an.cover.centers
    dist = an.center_distances
    partial = [an.kind(a).partial for a in centers]
    failed_pi = [a for a, p in zip(centers, partial) if p and not an.localizing(a)]
    n_pi = sum(partial)

    failed_fi, n_fi = [], 0
    ii, jj = np.nonzero(np.triu(dist >= 8 * n * l, 1))
    for i, j in zip(ii.tolist(), jj.tolist()):
        if partial[i] or partial[j]:
            continue
        n_fi += 1
        if not (an.localizing(centers[i]) or an.localizing(centers[j])):
            failed_fi.append((centers[i], centers[j]))

    failed_nr, n_nr = [], 0
    thr = an.threshold
    ii, jj = np.nonzero(np.triu(dist >= 200 * n * n * l, 1))
    for i, j in zip(ii.tolist(), jj.tolist()):
        a1, a2 = centers[i], centers[j]
        n_nr += 1
        for k1, e1 in enumerate((an.cube_es(a1), an.buffer_es(a1))):
            for k2, e2 in enumerate((an.cube_es(a2), an.buffer_es(a2))):
                if spectral_distance(e1, e2) < thr:
                    failed_nr.append((a1, a2, k1, k2))
    return EventReport(not failed_pi, not failed_fi, not failed_nr, failed_pi, failed_fi, failed_nr,
                       n_pi, n_fi, n_nr)


# ----------------------------------------------------------------------------
# decay lemmas


@dataclass(frozen=True)
class DecayCheck:
    applicable: bool
    passed: bool
    margin: float  # log(rhs + slack) - log(lhs), worst case; >= 0 iff passed
    reason: str = ""
    n_checked: int = 0

    @classmethod
    def not_applicable(cls, reason):
        return cls(False, True, math.inf, reason, 0)


def _log_margin(lhs, rhs, slack):
    lhs = np.asarray(lhs, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64) + slack
    with np.errstate(divide="ignore"):
        m = np.where(lhs > 0, np.log(rhs) - np.log(np.where(lhs > 0, lhs, 1.0)), np.inf)
    return float(m.min()) if m.size else math.inf


@dataclass(frozen=True, eq=False)
class _LocalGeometry:
    core_idx: np.ndarray
    ext_idx: np.ndarray
    dist: np.ndarray  # d_S(core y, exterior v)


@lru_cache(maxsize=4096)
def _local_geometry(phi, theta, depth):
    ext = exterior_boundary(phi, theta)
    if not ext:
        return None
    core = inner_core(phi, theta, depth)
    idx = {x: i for i, x in enumerate(theta.elements)}
    ys, vs = core.elements, ext.elements
    core_idx = np.array([idx[y] for y in ys], dtype=np.int64)
    ext_idx = np.array([idx[v] for v in vs], dtype=np.int64)
    if ys:
        a = np.sort(np.array(ys), axis=1)
        b = np.sort(np.array(vs), axis=1)
        dist = np.abs(a[:, None, :] - b[None, :, :]).max(axis=2)
    else:
        dist = np.zeros((0, len(vs)), dtype=np.int64)
    return _LocalGeometry(core_idx, ext_idx, dist)


def verify_local_decay(psi, mu, cube_l, theta, es_l, params, m, L, residual=0.0, certified=None):
    """|psi(y)| <= max_v exp(-m' d_S(y, v)) |psi(v)| on the l^tau~ core of the cube.

    ``psi`` is indexed like ``assemble(theta, ...)``.  ``residual`` is the
    norm of (H_theta - mu) psi; it enters as the additive slack
    residual / dist(mu, sigma(H_cube)).
    """
    l = cube_l.half_width
    if l < params.ell_min:
        return DecayCheck.not_applicable("l below ell_min")
    phi = cube_l.members
    if not phi.issubset(theta):
        return DecayCheck.not_applicable("cube not inside theta")
    gap = spectral_distance(np.array([mu]), es_l)
    if gap < max(separation_threshold(L, params.beta), _resolution(es_l)):
        return DecayCheck.not_applicable("mu resonant with the cube")
    if certified is None:
        certified = certify_cube(es_l, phi, m, l, params.tau).passed
    if not certified:
        return DecayCheck.not_applicable("cube not m-localizing")
    g = _local_geometry(phi, theta, l ** params.tau_tilde)
    if g is None:
        return DecayCheck.not_applicable("empty exterior boundary")
    if g.core_idx.size == 0:
        return DecayCheck.not_applicable("empty core")
    psi = np.abs(np.asarray(psi))
    py = psi[g.core_idx]
    pv = psi[g.ext_idx]
    d = g.dist
    mp = m_prime(m, l, params.tau)
    rhs = (np.exp(-mp * d) * pv[None, :]).max(axis=1)
    margin = _log_margin(py, rhs, residual / gap)
    return DecayCheck(True, margin >= 0, margin, "", int(g.core_idx.size))


@lru_cache(maxsize=4096)
def _crude_geometry(phi, theta):
    ext = exterior_boundary(phi, theta)
    if not ext:
        return None
    idx = {x: i for i, x in enumerate(theta.elements)}
    return (np.array([idx[x] for x in phi.elements], dtype=np.int64),
            np.array([idx[v] for v in ext.elements], dtype=np.int64))


def _resolution(spectrum):
    """Accuracy of computed eigenvalues, matching the eigensolver self-check."""
    norm = getattr(spectrum, "norm", None)
    if norm is None:
        norm = float(np.abs(np.asarray(spectrum)).max(initial=0.0))
    return EPS_EIG * max(norm, 1.0)


def crude_bound_check(psi, mu, phi, theta, eta, spectrum_phi, residual=0.0):
    """||psi||_{l2(phi)} <= 2N eta^-1 (#ext)^(1/2) max_ext |psi| (d = 1).

    An eta below the eigenvalue resolution cannot certify the spectral gap,
    so such instances are not applicable.
    """
    if not eta > 0:
        return DecayCheck.not_applicable("eta must be positive")
    if eta < _resolution(spectrum_phi):
        return DecayCheck.not_applicable("eta below eigenvalue resolution")
    if spectral_distance(np.array([mu]), spectrum_phi) < eta:
        return DecayCheck.not_applicable("dist(mu, sigma(H_phi)) below eta")
    g = _crude_geometry(phi, theta)
    if g is None:
        return DecayCheck.not_applicable("empty exterior boundary")
    phi_idx, ext_idx = g
    psi = np.asarray(psi)
    lhs = float(np.linalg.norm(psi[phi_idx]))
    vmax = float(np.abs(psi[ext_idx]).max())
    n = theta.n_particles
    rhs = 2 * n / eta * math.sqrt(ext_idx.size) * vmax
    margin = _log_margin([lhs], [rhs], residual / eta)
    return DecayCheck(True, margin >= 0, margin, "", 1)


@dataclass(frozen=True)
class Buffered:
    b: tuple
    upsilon: SymmetricSet
    good_centers: tuple
    interior: SymmetricSet
    fattened: SymmetricSet  # d_S(., Upsilon) <= 2 N l + floor(l) + 1, where bad steps land
    nominal: SymmetricSet  # d_S(., Upsilon) <= 2 N l


def build_buffered(analysis, b):
    """Upsilon = Lambda_{10Nl}(b) cap Lambda_L and its ring of good centers.

    Raises InternalConsistencyError if the interior boundary of Upsilon is
    not covered by cores of the ring cubes.
    """
    an = analysis
    b = rearrange(b)
    if b not in set(an.cover.centers):
        raise UsageError(f"{b} is not a cover center")
    n, l = an.n, an.l
    ups = an.buffer_region(b)
    ring = tuple(a for a in an.cover.centers if 8 * n * l <= sym_distance(a, b) <= 12 * n * l)
    inner = interior_boundary(ups, an.theta)
    covered = set()
    for a in ring:
        covered |= an.cover.core(a).rep_set
    missing = [y for y in inner.reps if y not in covered]
    if missing:
        raise InternalConsistencyError("buffered cube clause (ii) fails", {"b": b, "missing": missing[:5]})
    dist = min_sym_distance(an.theta.rep_array, ups.rep_array)
    # ring cubes reach 12 N l + floor(l) + 1 from b, Upsilon only 10 N l
    reach = 2 * n * l + _floor(l) + 1
    fat = SymmetricSet([r for r, d in zip(an.theta.reps, dist) if d <= reach], n)
    nominal = SymmetricSet([r for r, d in zip(an.theta.reps, dist) if d <= 2 * n * l], n)
    return Buffered(b, ups, ring, inner, fat, nominal)


def verify_buffered_decay(psi, mu, buffered, analysis, residual=0.0):
    """max_Upsilon |psi| <= exp(-(m'/2) l) max_{a in ring} max_{ext of cube a} |psi|."""
    an = analysis
    ups = buffered.upsilon
    if ups == an.theta:
        return DecayCheck.not_applicable("upsilon equals the big cube")
    if an.l < an.params.ell_min:
        return DecayCheck.not_applicable("l below ell_min")
    thr = an.threshold
    gap_u = spectral_distance(np.array([mu]), an.buffer_es(buffered.b))
    if gap_u < max(thr, _resolution(an.buffer_es(buffered.b))):
        return DecayCheck.not_applicable("mu resonant with upsilon")
    for a in buffered.good_centers:
        if spectral_distance(np.array([mu]), an.cube_es(a)) < thr:
            return DecayCheck.not_applicable("mu resonant with a ring cube")
        if not an.localizing(a):
            return DecayCheck.not_applicable("ring cube not m-localizing")
    lhs = float(an.values(psi, ups).max())
    rhs = 0.0
    for a in buffered.good_centers:
        ext = exterior_boundary(an.cube(a).members, an.theta)
        if ext:
            rhs = max(rhs, float(an.values(psi, ext).max()))
    rhs *= math.exp(-an.m_prime / 2 * an.l)
    margin = _log_margin([lhs], [rhs], residual / gap_u)
    return DecayCheck(True, margin >= 0, margin, "", 1)


# ----------------------------------------------------------------------------
# steps 3 to 5


def choose_bad_center(analysis):
    """A center b with every m-localizing failure within 8 N l of it, or None.

    Prefers a non-localizing center; falls back to the big-cube center when
    all cover cubes localize.
    """
    an = analysis
    centers = an.cover.centers
    bad = [i for i, a in enumerate(centers) if not an.localizing(a)]
    if not bad:
        b = rearrange(an.big.center)
        return b if b in set(centers) else centers[len(centers) // 2]
    dist = an.center_distances
    for i in bad:
        if all(dist[i, j] < 8 * an.n * an.l for j in bad):
            return centers[i]
    return None


@dataclass(frozen=True)
class Proximity:
    region: str  # "cube" or "buffer"
    center: tuple
    distance: float


def eigenvalue_proximity(mu, analysis, buffered):
    """The region of the modified cover closest in spectrum to mu (step 4).

    Returns (closest, found) where ``found`` says the distance is below
    1/2 exp(-L^beta) as the step asserts.
    """
    an = analysis
    best = Proximity("buffer", buffered.b, spectral_distance(np.array([mu]), an.buffer_es(buffered.b)))
    for a in an.cover.centers:
        if sym_distance(a, buffered.b) >= 8 * an.n * an.l:
            d = spectral_distance(np.array([mu]), an.cube_es(a))
            if d < best.distance:
                best = Proximity("cube", a, d)
    return best, best.distance < an.threshold


@dataclass
class IterationTrace:
    start: tuple
    steps: list  # (y_k, kind, gain)
    final: tuple
    M: float
    gain_ok: bool
    localized: bool | None  # None when d_S(y0, x_mu) < L^tau
    overlaps: int = 0
    outside_nominal: int = 0  # bad steps landing beyond 2 N l of Upsilon

    @property
    def K(self):
        return len(self.steps)

    @property
    def passed(self):
        return self.gain_ok and self.localized is not False

    def to_dict(self):
        return {
            "start": list(self.start), "final": list(self.final), "K": self.K, "M": self.M,
            "gain_ok": self.gain_ok, "localized": self.localized, "overlaps": self.overlaps,
            "outside_nominal": self.outside_nominal,
            "steps": [[list(y), k, g] for y, k, g in self.steps],
        }


def run_iteration(psi, mu, analysis, buffered, x_mu, y0, stop_radius=None, mp=None, residual=0.0):
    """Good/bad step chain from y0 towards x_mu.

    ``stop_radius`` defaults to 200 N^2 l; ``mp`` overrides m' (the decay
    rate used by good steps).
    """
    an = analysis
    n, l = an.n, an.l
    stop = 200 * n * n * l if stop_radius is None else stop_radius
    mp = an.m_prime if mp is None else mp
    good = [a for a in an.cover.centers if sym_distance(a, buffered.b) >= 8 * n * l]
    psi = np.asarray(psi)
    absval = np.abs(psi)
    pos = an.position
    ups_reps = buffered.upsilon.rep_set
    fat_reps = buffered.fattened.rep_set
    nominal_reps = buffered.nominal.rep_set
    cores = {a: an.cover.core(a).rep_set for a in good}
    ext_cache = {}

    def ext(a):
        if a not in ext_cache:
            e = exterior_boundary(an.cube(a).members, an.theta).elements
            ext_cache[a] = (e, absval[[pos[v] for v in e]], np.sort(np.array(e), axis=1) if e else None)
        return ext_cache[a]

    y = tuple(y0)
    steps, overlaps, outside, gain = [], 0, 0, 1.0
    guard = len(an.theta)
    while sym_distance(y, x_mu) >= stop:
        if len(steps) > guard:
            raise DiagnosticError("iteration did not terminate",
                                  {"start": y0, "steps": [s[:2] for s in steps[-10:]]})
        yh = rearrange(y)
        host = next((a for a in good if yh in cores[a]), None)
        if host is not None and yh in ups_reps:
            overlaps += 1
        if host is not None:
            e, vals, srt = ext(host)
            if not e:
                break
            d = np.abs(srt - np.array(yh)).max(axis=1)
            w = np.exp(-mp * d) * vals
            k = int(np.argmax(w))
            g = float(np.exp(-mp * d[k]))
            y_next, kind = e[k], "good"
        elif yh in ups_reps:
            best, y_next = -1.0, None
            for a in buffered.good_centers:
                e, vals, _ = ext(a)
                if e and vals.max() > best:
                    best, y_next = float(vals.max()), e[int(np.argmax(vals))]
            if y_next is None:
                break
            if rearrange(y_next) not in fat_reps:
                raise InternalConsistencyError("bad step left the fattened buffer", {"y": y_next})
            outside += rearrange(y_next) not in nominal_reps
            g = math.exp(-mp / 2 * l)
            kind = "bad"
        else:
            raise InternalConsistencyError("configuration outside every core and the buffer", {"y": y})
        steps.append((tuple(y_next), kind, g))
        gain *= g
        y = tuple(y_next)
    slack = residual / max(an.threshold, 1e-300)
    gain_ok = absval[pos[tuple(y0)]] <= gain * absval[pos[y]] + slack
    M = an.big_m
    d0 = sym_distance(y0, x_mu)
    localized = None
    if d0 >= an.L ** an.params.tau:
        localized = bool(absval[pos[tuple(y0)]] <= math.exp(-M * d0) + slack)
    return IterationTrace(tuple(y0), steps, y, M, bool(gain_ok), localized, overlaps, outside)


# ----------------------------------------------------------------------------
# schedules


def length_scales(L0, gamma, k_max):
    """L_k = L0 ** (gamma ** k), k = 0..k_max (floats; inf on overflow)."""
    out = []
    for k in range(k_max + 1):
        e = gamma**k * math.log(L0)
        out.append(math.exp(e) if e < 709 else math.inf)
    return out


def _factors(log_l, n, params):
    """The two mass-reduction factors at scale exp(log_l)."""
    t, g = params.tau, params.gamma
    f1 = 1.0 - 3.0 * math.exp(-(1.0 - t) / 2.0 * log_l)
    f2 = 1.0 - 250.0 * n * n * math.exp((1.0 - t * g) * log_l)
    return f1, f2


@dataclass(frozen=True)
class ScaleRow:
    k: int
    log_L: float
    L: float
    m: float  # m_k
    m_prime: float  # m_{k-1} times the first factor at L_{k-1}; m_k at k = 0


@dataclass(frozen=True)
class ScaleSchedule:
    rows: tuple
    m_inf: float  # lower bound on inf_k m_k from the tail product


def scale_schedule(L0, gamma=None, m=None, N=1, params=None, k_max=3, tail=200):
    """Tabulate L_k = L_{k-1}^gamma and m_k starting from m_0 = 2 m.

    Raises ConfigError naming the first scale at which a factor is not
    positive.  ``m_inf`` multiplies further factors until they are 1 to
    double precision (at most ``tail`` more scales).
    """
    params = params or MsaParameters()
    gamma = params.gamma if gamma is None else gamma
    m = params.m if m is None else m
    if L0 < 2:
        raise ConfigError("L0 must be at least 2")
    p = MsaParameters(params.beta, params.tau, gamma, m, params.ell_min)
    log_l = math.log(L0)
    mk = 2.0 * m
    rows = [ScaleRow(0, log_l, math.exp(log_l) if log_l < 709 else math.inf, mk, mk)]
    for k in range(1, k_max + tail + 1):
        f1, f2 = _factors(log_l, N, p)
        if f1 <= 0 or f2 <= 0:
            raise ConfigError(f"mass factor not positive at scale L_{k - 1} = exp({log_l:.6g}) "
                              f"(factors {f1:.6g}, {f2:.6g})")
        mp = mk * f1
        mk = mp * f2
        log_l *= gamma
        if k <= k_max:
            rows.append(ScaleRow(k, log_l, math.exp(log_l) if log_l < 709 else math.inf, mk, mp))
        elif f1 == 1.0 and f2 == 1.0:
            break
    return ScaleSchedule(tuple(rows), mk)


def min_initial_scale(N=1, params=None, target=None, lo=2.0, hi=1e300):
    """Smallest L0 (to 1e-9 in log) with every factor positive and inf m_k >= target.

    ``target`` defaults to m, the guarantee wanted from m_0 = 2 m.
    """
    params = params or MsaParameters()
    target = params.m if target is None else target

    def ok(log_l0):
        try:
            s = scale_schedule(math.exp(log_l0), N=N, params=params, k_max=0)
        except ConfigError:
            return False
        return s.m_inf >= target

    a, b = math.log(lo), math.log(hi)
    if not ok(b):
        raise ConfigError("no admissible L0 below the search bound")
    if ok(a):
        return lo
    while b - a > 1e-9:
        c = 0.5 * (a + b)
        if ok(c):
            b = c
        else:
            a = c
    return math.exp(b)


@dataclass(frozen=True)
class DecaySchedule:
    p: tuple  # p(1), ..., p(N)
    p_star: float
    hypothesis_ok: bool
    chain_ok: bool


def decay_parameter_schedule(p, N, gamma, d=1):
    """Backward recursion p(N) = max(p, (2/gamma - 1)^-1 (4Nd + 2)),
    p(n-1) = gamma (p(n) + 2nd + 2) + 1."""
    if not 1 < gamma < 2:
        raise ConfigError("decay schedule needs 1 < gamma < 2")
    base = (4 * N * d + 2) * gamma / (2 - gamma)  # (2/gamma - 1)^-1 without cancellation
    vals = {N: max(float(p), base)}
    for n in range(N, 1, -1):
        vals[n - 1] = gamma * (vals[n] + 2 * n * d + 2) + 1
    seq = tuple(vals[n] for n in range(1, N + 1))
    hyp = base <= vals[N]
    chain = all(vals[n - 1] >= gamma * (vals[n] + 2 * n * d + 2) + 1 - 1e-12 for n in range(2, N + 1))
    return DecaySchedule(seq, vals[1], hyp, chain)


# ----------------------------------------------------------------------------
# initial scale


@dataclass(frozen=True)
class InitialScaleReport:
    separated: bool
    decay_ok: bool | None
    min_gap: float
    worst_margin: float


def initial_lambda(N, l, m, delta, rho_sup=1.0, d=1):
    return 2 * N * d * rho_sup * (1 + math.exp(m)) * math.factorial(N) ** 2 * (2 * l + 1) ** (2 * N * d) / delta


def initial_eta(N, m, d=1):
    return (1 + math.exp(m)) * 2 * N * d


def initial_scale(theta, realization, lam, interaction, eta, slack=1e-10):
    """Diagonal eta-separation across orbits and the Gershgorin decay bound."""
    n = theta.n_particles
    if not eta > 4 * n:
        raise UsageError(f"need eta > 4N, got {eta}")
    h = assemble(theta, realization, lam, interaction)
    diag = h.diagonal
    srt = theta.sorted_element_array
    reps = theta.rep_array
    rep_diag = np.array([diag[h.position[tuple(r)]] for r in theta.reps])
    gaps = np.abs(rep_diag[:, None] - rep_diag[None, :])
    np.fill_diagonal(gaps, np.inf)
    min_gap = float(gaps.min()) if len(reps) > 1 else math.inf
    if min_gap < eta:
        return InitialScaleReport(False, None, min_gap, math.nan)
    es = eigensystem(h)
    q = 2 * n / (eta - 2 * n)
    worst = math.inf
    for i, theta_i in enumerate(es.eigenvalues):
        x = reps[int(np.argmin(np.abs(rep_diag - theta_i)))]
        l1 = np.abs(srt - x).sum(axis=1)
        bound = q ** l1.astype(np.float64)
        phi = np.abs(es.eigenvectors[:, i])
        worst = min(worst, _log_margin(phi, bound, slack))
    return InitialScaleReport(True, worst >= 0, min_gap, worst)
