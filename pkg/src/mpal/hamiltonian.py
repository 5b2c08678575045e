"""Random potentials and restricted N-particle Hamiltonians.

H = -Delta + lambda V + U, restricted to a finite symmetric set Theta and
indexed by every ordering of the configurations in Theta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType

import numpy as np

from . import rng
from .errors import ConfigError, SizeCapError, UsageError
from .geometry import project_sites, rearrange

DEFAULT_CAP = 20_000


# ----------------------------------------------------------------------------
# single-site distributions


@dataclass(frozen=True)
class Uniform:
    v_max: float = 1.0

    def __post_init__(self):
        if not self.v_max > 0:
            raise ConfigError("uniform distribution needs v_max > 0")

    @property
    def density_sup(self):
        return 1.0 / self.v_max

    def ppf(self, u):
        return self.v_max * np.asarray(u, dtype=np.float64)

    def descriptor(self):
        return {"kind": "uniform", "v_max": self.v_max}


@dataclass(frozen=True)
class PiecewiseLinear:
    """Density linear between ``knots`` with the given (unnormalised) heights.

    The first knot must be 0 and the last one is v_max; all heights must be
    positive so the density is bounded above and below on its support.
    """

    knots: tuple
    heights: tuple

    def __post_init__(self):
        k = tuple(float(x) for x in self.knots)
        h = tuple(float(x) for x in self.heights)
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "heights", h)
        if len(k) < 2 or len(k) != len(h):
            raise ConfigError("piecewise_linear needs >= 2 knots and one height per knot")
        if k[0] != 0.0 or any(b <= a for a, b in zip(k, k[1:])):
            raise ConfigError("piecewise_linear knots must start at 0 and increase strictly")
        if min(h) <= 0:
            raise ConfigError("piecewise_linear heights must be positive")

    @property
    def v_max(self):
        return self.knots[-1]

    @cached_property
    def _masses(self):
        k, h = np.array(self.knots), np.array(self.heights)
        seg = 0.5 * (h[1:] + h[:-1]) * np.diff(k)
        return seg / seg.sum(), seg.sum()

    @property
    def density_sup(self):
        return max(self.heights) / self._masses[1]

    @property
    def smooth(self):
        """Whether the density is C^1 on the open support (a single linear piece)."""
        k, h = self.knots, self.heights
        slopes = [(h[i + 1] - h[i]) / (k[i + 1] - k[i]) for i in range(len(k) - 1)]
        return all(math.isclose(s, slopes[0], rel_tol=1e-12, abs_tol=1e-12) for s in slopes)

    def ppf(self, u):
        u = np.asarray(u, dtype=np.float64)
        mass, total = self._masses
        cum = np.concatenate([[0.0], np.cumsum(mass)])
        idx = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(mass) - 1)
        x0 = np.array(self.knots)[idx]
        w = np.diff(self.knots)[idx]
        h0 = np.array(self.heights)[idx] / total
        h1 = np.array(self.heights)[idx + 1] / total
        slope = (h1 - h0) / w
        r = u - cum[idx]  # mass to cover inside the segment
        # solve h0 t + slope t^2 / 2 = r for t in [0, w]
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = np.sqrt(np.maximum(h0 * h0 + 2.0 * slope * r, 0.0))
            t = np.where(np.abs(slope) > 1e-14, 2.0 * r / (h0 + disc), r / h0)
        return np.clip(x0 + t, 0.0, self.v_max)

    def descriptor(self):
        return {"kind": "piecewise_linear", "knots": list(self.knots), "heights": list(self.heights)}


def parse_distribution(desc):
    if isinstance(desc, (Uniform, PiecewiseLinear)):
        return desc
    if not isinstance(desc, dict) or "kind" not in desc:
        raise ConfigError(f"distribution descriptor must be an object with 'kind': {desc!r}")
    kind = desc["kind"]
    extra = set(desc) - {"kind", "v_max", "knots", "heights"}
    if extra:
        raise ConfigError(f"unknown distribution keys: {sorted(extra)}")
    if kind == "uniform":
        return Uniform(float(desc.get("v_max", 1.0)))
    if kind == "piecewise_linear":
        return PiecewiseLinear(tuple(desc["knots"]), tuple(desc["heights"]))
    raise ConfigError(f"unsupported distribution kind {kind!r}")


# ----------------------------------------------------------------------------
# disorder realizations


@dataclass(frozen=True)
class DisorderRealization:
    """Single-site potential values.

    Values not stored explicitly are derived from ``(seed, site)``; a
    realization without a seed can only answer for its stored sites.
    """

    seed: int | None
    distribution: object
    site_values: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))

    def __post_init__(self):
        vals = {int(k): float(v) for k, v in dict(self.site_values).items()}
        v_max = self.distribution.v_max if self.distribution is not None else math.inf
        for u, v in vals.items():
            if not (0.0 <= v <= v_max):
                raise UsageError(f"potential value {v} at site {u} outside [0, {v_max}]")
        object.__setattr__(self, "site_values", MappingProxyType(vals))

    @property
    def id(self):
        return self.seed

    def values(self, sites):
        sites = np.asarray(list(sites), dtype=np.int64)
        out = np.empty(sites.shape[0], dtype=np.float64)
        missing = []
        for i, u in enumerate(sites.tolist()):
            v = self.site_values.get(u)
            if v is None:
                missing.append(i)
            else:
                out[i] = v
        if missing:
            if self.seed is None or self.distribution is None:
                raise UsageError(f"no potential value for sites {sites[missing].tolist()}")
            out[missing] = self.distribution.ppf(rng.site_uniforms(self.seed, sites[missing]))
        return out

    def value(self, u):
        return float(self.values([u])[0])

    def to_dict(self):
        return {
            "schema": "mpal.disorder/1",
            "seed": self.seed,
            "distribution": None if self.distribution is None else self.distribution.descriptor(),
            "site_values": {str(u): v for u, v in sorted(self.site_values.items())},
        }

    @classmethod
    def from_dict(cls, d):
        dist = d.get("distribution")
        return cls(
            seed=d.get("seed"),
            distribution=None if dist is None else parse_distribution(dist),
            site_values={int(k): float(v) for k, v in d.get("site_values", {}).items()},
        )


def sample_disorder(seed, sites, distribution):
    """Realization with the values at ``sites`` materialised."""
    dist = parse_distribution(distribution)
    sites = sorted({int(u) for u in sites})
    vals = dist.ppf(rng.site_uniforms(seed, sites)) if sites else []
    return DisorderRealization(seed, dist, dict(zip(sites, (float(v) for v in vals))))


def fixed_disorder(site_values):
    """Deterministic realization from explicit values (no seed)."""
    return DisorderRealization(None, None, dict(site_values))


def zero_disorder(sites):
    return fixed_disorder({int(u): 0.0 for u in sites})


# ----------------------------------------------------------------------------
# interaction


@dataclass(frozen=True)
class InteractionPotential:
    """Even, finitely supported pair interaction on displacements."""

    support_values: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))

    def __post_init__(self):
        vals = {int(k): float(v) for k, v in dict(self.support_values).items() if float(v) != 0.0}
        for u, v in vals.items():
            if vals.get(-u, 0.0) != v:
                raise UsageError(f"interaction must be even: U({u})={v} but U({-u})={vals.get(-u, 0.0)}")
        object.__setattr__(self, "support_values", MappingProxyType(vals))

    @classmethod
    def zero(cls):
        return cls({})

    @classmethod
    def on_site(cls, g):
        return cls({0: g})

    @classmethod
    def nearest_neighbor(cls, g0, g1):
        return cls({0: g0, 1: g1, -1: g1})

    @property
    def range_constant(self):
        """C_U = max |u| over the support plus one (1 for the zero interaction)."""
        if not self.support_values:
            return 1
        return max(abs(u) for u in self.support_values) + 1

    def __call__(self, u):
        return self.support_values.get(int(u), 0.0)

    def pair_energy(self, sorted_coords):
        """Sum over i<j of U(x_i - x_j) for an (n, N) array of sorted rows."""
        x = np.asarray(sorted_coords, dtype=np.int64)
        out = np.zeros(x.shape[0])
        if not self.support_values:
            return out
        n = x.shape[1]
        for i in range(n):
            for j in range(i + 1, n):
                d = x[:, j] - x[:, i]
                out += np.array([self.support_values.get(int(v), 0.0) for v in d.tolist()])
        return out

    def to_dict(self):
        return {str(k): v for k, v in sorted(self.support_values.items())}


# ----------------------------------------------------------------------------
# assembly


@dataclass(frozen=True, eq=False)
class AssembledHamiltonian:
    index: tuple
    matrix: np.ndarray
    lam: float
    realization_id: object = None
    interaction: InteractionPotential = None

    @cached_property
    def position(self):
        return {x: i for i, x in enumerate(self.index)}

    @property
    def size(self):
        return len(self.index)

    @property
    def diagonal(self):
        return np.diag(self.matrix)


def _check_cap(n, cap):
    if cap is not None and n > cap:
        raise SizeCapError(f"restricted Hamiltonian would have {n} rows, above the cap of {cap}")


def potential_diagonal(theta_elements, realization, lam, interaction):
    """lambda * sum_j V(x_j) + sum_{i<j} U(x_i - x_j), evaluated on sorted rows.

    Sorting first makes the floating-point sum identical for every ordering
    of the same configuration.
    """
    x = np.sort(np.asarray(theta_elements, dtype=np.int64), axis=1)
    if x.shape[0] == 0:
        return np.zeros(0)
    sites = np.unique(x)
    vals = realization.values(sites)
    lookup = dict(zip(sites.tolist(), vals.tolist()))
    vsum = np.zeros(x.shape[0])
    for j in range(x.shape[1]):
        vsum = vsum + np.array([lookup[u] for u in x[:, j].tolist()])
    return lam * vsum + interaction.pair_energy(x)


def hopping_pairs(elements, position):
    """Index pairs (i, k), i < k, of configurations at l1-distance one."""
    pairs = []
    for i, x in enumerate(elements):
        for j in range(len(x)):
            y = x[:j] + (x[j] + 1,) + x[j + 1:]
            k = position.get(y)
            if k is not None:
                pairs.append((i, k))
    return pairs


def assemble(theta, realization, lam, interaction=None, cap=DEFAULT_CAP):
    if not theta:
        raise UsageError("cannot assemble a Hamiltonian on an empty set")
    interaction = interaction or InteractionPotential.zero()
    index = theta.elements
    _check_cap(len(index), cap)
    n = len(index)
    mat = np.zeros((n, n))
    mat[np.diag_indices(n)] = potential_diagonal(index, realization, lam, interaction)
    position = {x: i for i, x in enumerate(index)}
    for i, k in hopping_pairs(index, position):
        mat[i, k] = -1.0
        mat[k, i] = -1.0
    mat.setflags(write=False)
    h = AssembledHamiltonian(index, mat, float(lam), realization.id, interaction)
    h.__dict__["position"] = position
    return h


@dataclass(frozen=True, eq=False)
class BoundaryOperator:
    index: tuple
    matrix: np.ndarray


def boundary_operator(phi, theta):
    """Unit entries on the hopping edges between phi and theta minus phi.

    Indexed like ``assemble(theta, ...)``.
    """
    if not phi.issubset(theta):
        raise UsageError("boundary_operator requires phi to be a subset of theta")
    index = theta.elements
    position = {x: i for i, x in enumerate(index)}
    inside = np.array([x in phi for x in index], dtype=bool)
    mat = np.zeros((len(index), len(index)))
    for i, k in hopping_pairs(index, position):
        if inside[i] != inside[k]:
            mat[i, k] = 1.0
            mat[k, i] = 1.0
    mat.setflags(write=False)
    return BoundaryOperator(index, mat)


def check_geometric_decomposition(theta, phi, realization, lam, interaction=None, cap=DEFAULT_CAP):
    """Max-abs residual of H_Theta - (H_Phi + H_rest) + Gamma; zero when exact.

    Gamma carries +1 on boundary edges while the hopping term is -1, hence
    the sign.
    """
    h = assemble(theta, realization, lam, interaction, cap)
    gamma = boundary_operator(phi, theta)
    block = np.zeros_like(h.matrix)
    for part in (phi, theta.difference(phi)):
        if not part:
            continue
        hp = assemble(part, realization, lam, interaction, cap)
        idx = np.array([h.position[x] for x in hp.index])
        block[np.ix_(idx, idx)] = hp.matrix
    return float(np.abs(h.matrix - block + gamma.matrix).max())


def restrict_sites(theta):
    return sorted(project_sites(theta))


def canonical(x):
    return rearrange(x)
