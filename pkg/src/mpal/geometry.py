"""Permutation-invariant geometry of N particles on the integer lattice.

Configurations are tuples of ints.  Every symmetric set is stored as the set
of its non-decreasing orbit representatives; in one dimension the
symmetrized distance between two configurations is the sup-distance between
their sorted forms, which makes the sorted representative canonical.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, UsageError

Configuration = tuple  # tuple[int, ...]

_BLOCK = 4096


def rearrange(x):
    """Non-decreasing rearrangement of ``x``."""
    return tuple(sorted(int(c) for c in x))


def is_sorted(x):
    return all(x[i] <= x[i + 1] for i in range(len(x) - 1))


def sym_distance(x, y):
    """Symmetrized sup-distance min_pi ||x - pi y||_inf."""
    if len(x) != len(y):
        raise UsageError(f"configurations of different length: {len(x)} vs {len(y)}")
    if not x:
        return 0
    return max(abs(a - b) for a, b in zip(sorted(x), sorted(y)))


def orbit(x):
    """All distinct coordinate permutations of ``x``, lexicographically sorted."""
    return tuple(sorted(set(itertools.permutations(tuple(int(c) for c in x)))))


def orbit_size(x):
    counts = {}
    for c in x:
        counts[c] = counts.get(c, 0) + 1
    size = math.factorial(len(x))
    for k in counts.values():
        size //= math.factorial(k)
    return size


def pairwise_sym_distance(a, b):
    """Matrix of symmetrized distances between rows of two arrays.

    Rows must already be non-decreasing (orbit representatives or the sorted
    form of arbitrary configurations).
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.int64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return out
    step = max(1, _BLOCK * 64 // max(1, b.shape[0] * a.shape[1]))
    for i in range(0, a.shape[0], step):
        blk = a[i:i + step, None, :] - b[None, :, :]
        out[i:i + step] = np.abs(blk).max(axis=2)
    return out


def min_sym_distance(a, b):
    """Row-wise minimum of :func:`pairwise_sym_distance`; +inf when ``b`` is empty."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if b.shape[0] == 0:
        return np.full(a.shape[0], np.inf)
    out = np.empty(a.shape[0], dtype=np.float64)
    step = max(1, _BLOCK * 64 // max(1, b.shape[0] * max(1, a.shape[1])))
    for i in range(0, a.shape[0], step):
        blk = a[i:i + step, None, :] - b[None, :, :]
        out[i:i + step] = np.abs(blk).max(axis=2).min(axis=1)
    return out


class SymmetricSet:
    """Finite subset of Z^N closed under coordinate permutations.

    Membership, size and the full element list are derived from the sorted
    orbit representatives on demand.
    """

    def __init__(self, reps, n_particles):
        self.n_particles = int(n_particles)
        self.reps = tuple(sorted(set(reps)))

    @classmethod
    def from_configs(cls, configs, n_particles=None):
        configs = list(configs)
        if n_particles is None:
            if not configs:
                raise UsageError("n_particles required for an empty set")
            n_particles = len(configs[0])
        reps = set()
        for x in configs:
            if len(x) != n_particles:
                raise UsageError(f"configuration {x} has wrong length for N={n_particles}")
            reps.add(rearrange(x))
        return cls(reps, n_particles)

    @cached_property
    def rep_set(self):
        return frozenset(self.reps)

    @cached_property
    def rep_array(self):
        return np.array(self.reps, dtype=np.int64).reshape(len(self.reps), self.n_particles)

    @cached_property
    def elements(self):
        """Every configuration of the set, lexicographically sorted."""
        out = []
        for r in self.reps:
            out.extend(orbit(r))
        out.sort()
        return tuple(out)

    @cached_property
    def element_array(self):
        return np.array(self.elements, dtype=np.int64).reshape(len(self.elements), self.n_particles)

    @cached_property
    def sorted_element_array(self):
        return np.sort(self.element_array, axis=1)

    def __contains__(self, x):
        return len(x) == self.n_particles and rearrange(x) in self.rep_set

    def __len__(self):
        return sum(orbit_size(r) for r in self.reps)

    def __iter__(self):
        return iter(self.elements)

    def __bool__(self):
        return bool(self.reps)

    def __eq__(self, other):
        if not isinstance(other, SymmetricSet):
            return NotImplemented
        return self.n_particles == other.n_particles and self.rep_set == other.rep_set

    def __hash__(self):
        return hash((self.n_particles, self.rep_set))

    def __repr__(self):
        return f"SymmetricSet(N={self.n_particles}, orbits={len(self.reps)}, size={len(self)})"

    def _check(self, other):
        if other.n_particles != self.n_particles:
            raise UsageError("symmetric sets with different particle numbers")

    def issubset(self, other):
        self._check(other)
        return self.rep_set <= other.rep_set

    def difference(self, other):
        self._check(other)
        return SymmetricSet(self.rep_set - other.rep_set, self.n_particles)

    def intersection(self, other):
        self._check(other)
        return SymmetricSet(self.rep_set & other.rep_set, self.n_particles)

    def union(self, other):
        self._check(other)
        return SymmetricSet(self.rep_set | other.rep_set, self.n_particles)

    @cached_property
    def diameter(self):
        """Largest symmetrized distance between two elements (0 if empty)."""
        if not self.reps:
            return 0
        # max over pairs and over coordinates commute
        return int((self.rep_array.max(axis=0) - self.rep_array.min(axis=0)).max())

    def distance_to(self, other):
        """Symmetrized set distance; +inf if either set is empty."""
        self._check(other)
        if not self.reps or not other.reps:
            return math.inf
        return int(min_sym_distance(self.rep_array, other.rep_array).min())


def set_distance(a, b):
    return a.distance_to(b)


@dataclass(frozen=True)
class Cube:
    """Symmetrized cube {y : d_S(y, center) <= floor(half_width)}."""

    center: tuple
    half_width: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        if self.half_width < 0:
            raise UsageError("cube half-width must be nonnegative")

    @property
    def n_particles(self):
        return len(self.center)

    @property
    def radius(self):
        return int(math.floor(self.half_width + 1e-12))

    @cached_property
    def members(self):
        return enumerate_cube(self)

    def __contains__(self, y):
        return sym_distance(y, self.center) <= self.radius


def _nondecreasing_box(lo, hi):
    """All non-decreasing integer vectors with lo[j] <= y[j] <= hi[j]."""
    n = len(lo)
    out = []
    y = [0] * n

    def rec(j, floor):
        if j == n:
            out.append(tuple(y))
            return
        for v in range(max(lo[j], floor), hi[j] + 1):
            y[j] = v
            rec(j + 1, v)

    rec(0, -(1 << 62))
    return out


def enumerate_cube(cube):
    a = rearrange(cube.center)
    r = cube.radius
    reps = _nondecreasing_box([c - r for c in a], [c + r for c in a])
    return SymmetricSet(reps, len(a))


def cube_set(center, half_width):
    return enumerate_cube(Cube(center, half_width))


def cube_intersection(c1, c2):
    """Lambda_{L1}(a) cap Lambda_{L2}(b) without enumerating either cube."""
    a, b = rearrange(c1.center), rearrange(c2.center)
    if len(a) != len(b):
        raise UsageError("cubes with different particle numbers")
    lo = [max(x - c1.radius, y - c2.radius) for x, y in zip(a, b)]
    hi = [min(x + c1.radius, y + c2.radius) for x, y in zip(a, b)]
    return SymmetricSet(_nondecreasing_box(lo, hi), len(a))


# ----------------------------------------------------------------------------
# boundaries and cores


def _unit_shifts(n):
    return [d for d in itertools.product((-1, 0, 1), repeat=n) if any(d)]


@dataclass(frozen=True)
class BoundaryEdgeSet:
    """Edges (u, v) with u in Phi, v in Theta minus Phi and d_S(u, v) = 1."""

    rep_edges: frozenset  # pairs of orbit representatives
    n_particles: int

    @cached_property
    def edges(self):
        out = set()
        for u, v in self.rep_edges:
            for uu in orbit(u):
                for vv in orbit(v):
                    out.add((uu, vv))
        return frozenset(out)

    @cached_property
    def exterior(self):
        return SymmetricSet({v for _, v in self.rep_edges}, self.n_particles)

    @cached_property
    def interior(self):
        return SymmetricSet({u for u, _ in self.rep_edges}, self.n_particles)

    def __len__(self):
        return len(self.edges)


def boundary(phi, theta):
    if not phi.issubset(theta):
        raise UsageError("boundary requires phi to be a subset of theta")
    rest = theta.difference(phi).rep_set
    shifts = _unit_shifts(phi.n_particles)
    edges = set()
    for u in phi.reps:
        for d in shifts:
            v = tuple(a + b for a, b in zip(u, d))
            if is_sorted(v) and v in rest:
                edges.add((u, v))
    return BoundaryEdgeSet(frozenset(edges), phi.n_particles)


def exterior_boundary(phi, theta):
    return boundary(phi, theta).exterior


def interior_boundary(phi, theta):
    return boundary(phi, theta).interior


def inner_core(phi, theta, r):
    """Configurations of ``phi`` at symmetrized distance >= r from theta minus phi."""
    if not phi.issubset(theta):
        raise UsageError("inner_core requires phi to be a subset of theta")
    rest = theta.difference(phi)
    if not rest.reps:
        return phi
    if not phi.reps:
        return phi
    dist = min_sym_distance(phi.rep_array, rest.rep_array)
    keep = [rep for rep, d in zip(phi.reps, dist) if d >= r]
    return SymmetricSet(keep, phi.n_particles)


# ----------------------------------------------------------------------------
# covers


@dataclass(frozen=True)
class Cover:
    """All l-cubes contained in the big cube, one centre per orbit."""

    big: Cube
    small_half_width: float
    centers: tuple

    @property
    def n_particles(self):
        return self.big.n_particles

    @cached_property
    def _cubes(self):
        return {}

    def cube(self, a):
        a = rearrange(a)
        if a not in self._cubes:
            self._cubes[a] = Cube(a, self.small_half_width)
        return self._cubes[a]

    @cached_property
    def _cores(self):
        return {}

    def core(self, a):
        """The core of the cover cube at ``a`` relative to the big cube, depth l."""
        a = rearrange(a)
        if a not in self._cores:
            self._cores[a] = inner_core(self.cube(a).members, self.big.members, self.small_half_width)
        return self._cores[a]


def make_cover(b, L, l):
    if l < 1 or l > L:
        raise UsageError(f"cover requires 1 <= l <= L, got l={l}, L={L}")
    big = Cube(b, L)
    slack = big.radius - int(math.floor(l + 1e-12))
    # for sorted a, b: Lambda_l(a) in Lambda_L(b)  <=>  ||a - b||_inf <= floor(L) - floor(l)
    bh = rearrange(b)
    centers = _nondecreasing_box([c - slack for c in bh], [c + slack for c in bh])
    return Cover(big, l, tuple(centers))


def truncation_center(x, b, L, l):
    """Centre of a cover cube whose core contains ``x`` (both inputs sorted)."""
    if not is_sorted(x) or not is_sorted(b):
        raise UsageError("truncation_center expects non-decreasing configurations")
    if len(x) != len(b):
        raise UsageError("configurations of different length")
    s = int(math.floor(L + 1e-12)) - int(math.floor(l + 1e-12))
    return tuple(max(bj - s, min(xj, bj + s)) for xj, bj in zip(x, b))


# ----------------------------------------------------------------------------
# projections


def project_sites(theta):
    """Single-particle sites occupied by some configuration of ``theta``."""
    return frozenset(int(c) for rep in theta.reps for c in rep)


def number_at(u, x):
    return sum(1 for c in x if c == u)


# ----------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class MsaParameters:
    beta: float = 0.3
    tau: float = 0.8
    gamma: float = 1.5
    m: float = 0.5
    ell_min: float = 4.0

    def __post_init__(self):
        b, t, g = self.beta, self.tau, self.gamma
        if not (0 < b < 1 / g < 1 < g < 2):
            raise ConfigError(f"need 0 < beta < 1/gamma < 1 < gamma < 2 (beta={b}, gamma={g})")
        if not (max(g * b, 1 / g) < t < 1):
            raise ConfigError(f"need max(gamma*beta, 1/gamma) < tau < 1 (tau={t})")
        if self.m <= 0:
            raise ConfigError("m must be positive")

    @property
    def tau_tilde(self):
        return (1 + self.tau) / 2
