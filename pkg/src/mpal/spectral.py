"""Exact diagonalization and spectral separation checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from .errors import DiagnosticError, UsageError

log = logging.getLogger(__name__)

EPS_EIG = 1e-10


@dataclass(frozen=True, eq=False)
class Eigensystem:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns
    clusters: tuple  # tuple of index tuples
    index: tuple = ()
    norm: float = 0.0

    @property
    def size(self):
        return self.eigenvalues.shape[0]

    def cluster_of(self, i):
        for c in self.clusters:
            if i in c:
                return c
        raise IndexError(i)


def cluster_indices(values, tol):
    """Group sorted eigenvalues whose consecutive gaps are below ``tol``."""
    if len(values) == 0:
        return ()
    out, cur = [], [0]
    for i in range(1, len(values)):
        if values[i] - values[i - 1] < tol:
            cur.append(i)
        else:
            out.append(tuple(cur))
            cur = [i]
    out.append(tuple(cur))
    return tuple(out)


def _as_matrix(h):
    mat = getattr(h, "matrix", h)
    return np.asarray(mat, dtype=np.float64), tuple(getattr(h, "index", ()))


def eigensystem(h, deg_tol=None, provenance=None):
    """Full eigen-decomposition with residual and orthonormality self-checks.

    ``h`` is an assembled Hamiltonian or a plain symmetric array.
    """
    mat, index = _as_matrix(h)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
        raise UsageError(f"eigensystem needs a nonempty square matrix, got {mat.shape}")
    if not np.array_equal(mat, mat.T):
        raise UsageError("eigensystem needs an exactly symmetric matrix")
    ctx = dict(provenance or {})
    if provenance is None and hasattr(h, "realization_id"):
        ctx = {"realization": h.realization_id, "lambda": h.lam, "size": mat.shape[0]}
    try:
        vals, vecs = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:
        raise DiagnosticError(f"eigensolver failed: {exc}", ctx) from exc
    norm = float(np.linalg.norm(mat, 2)) if mat.shape[0] > 1 else float(abs(mat[0, 0]))
    scale = max(norm, 1.0)
    res = np.linalg.norm(mat @ vecs - vecs * vals, axis=0)
    if res.max(initial=0.0) > EPS_EIG * scale:
        raise DiagnosticError(f"eigen-residual {res.max():.3e} above tolerance", ctx)
    gram = vecs.T @ vecs
    if np.abs(gram - np.eye(len(vals))).max() > EPS_EIG:
        raise DiagnosticError("eigenvectors fail the orthonormality check", ctx)
    tol = 1e-9 * scale if deg_tol is None else float(deg_tol)
    vals.setflags(write=False)
    vecs.setflags(write=False)
    return Eigensystem(vals, vecs, cluster_indices(vals, tol), index, norm)


def _values(a):
    return np.asarray(getattr(a, "eigenvalues", a), dtype=np.float64)


def spectral_distance(a, b):
    """min |x - y| over x in a, y in b, by merging the sorted lists."""
    x, y = _values(a), _values(b)
    if x.size == 0 or y.size == 0:
        raise UsageError("spectral_distance needs two nonempty spectra")
    if x.size == 1 and isinstance(b, Eigensystem):
        # eigenvalues are already sorted
        k = int(np.searchsorted(y, x[0]))
        return float(min(abs(x[0] - y[j]) for j in (k - 1, k) if 0 <= j < y.size))
    x, y = np.sort(x), np.sort(y)
    pos = np.searchsorted(y, x)
    best = math.inf
    for lo in (np.clip(pos - 1, 0, y.size - 1), np.clip(pos, 0, y.size - 1)):
        best = min(best, float(np.abs(x - y[lo]).min()))
    return best


def separation_threshold(L, beta):
    e = L**beta
    if e > 700:
        log.info("separation threshold underflows at L=%s, beta=%s", L, beta)
        return 0.0
    return 0.5 * math.exp(-e)


@dataclass(frozen=True)
class SeparationVerdict:
    pair: tuple
    distance: float
    threshold: float
    separated: bool
    applicable: bool


def family_separation(thetas, eigensystems, L, beta, N):
    """Pairwise verdicts; the family is separated iff every applicable pair is."""
    if len(thetas) != len(eigensystems):
        raise UsageError("thetas and eigensystems must be aligned")
    thr = separation_threshold(L, beta)
    out = []
    for i in range(len(thetas)):
        for j in range(i + 1, len(thetas)):
            need = 8 * N * max(thetas[i].diameter, thetas[j].diameter)
            applicable = thetas[i].distance_to(thetas[j]) >= need
            d = spectral_distance(eigensystems[i], eigensystems[j])
            out.append(SeparationVerdict((i, j), d, thr, d >= thr, applicable))
    return out


def family_separated(verdicts):
    return all(v.separated for v in verdicts if v.applicable)


def wilson_interval(k, n, confidence=0.95):
    if n <= 0:
        raise UsageError("wilson_interval needs n >= 1")
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class WegnerRow:
    s: float
    fraction: float
    ci_lo: float
    ci_hi: float


def wegner_distances(theta1, theta2, trials, seed, distribution, lam, interaction=None, cap=None):
    """Spectral distances between the two restrictions for independent realizations."""
    from . import rng
    from .hamiltonian import DEFAULT_CAP, assemble, sample_disorder

    cap = DEFAULT_CAP if cap is None else cap
    sites = sorted(set().union(*(set(x) for x in theta1.reps), *(set(x) for x in theta2.reps)))
    out = np.empty(trials)
    for t in range(trials):
        real = sample_disorder(rng.split(seed, t), sites, distribution)
        e1 = eigensystem(assemble(theta1, real, lam, interaction, cap))
        e2 = eigensystem(assemble(theta2, real, lam, interaction, cap))
        out[t] = spectral_distance(e1, e2)
    return out


def wegner_table(distances, s_grid):
    d = np.asarray(distances)
    rows = []
    for s in s_grid:
        k = int((d <= s).sum())
        lo, hi = wilson_interval(k, d.size)
        rows.append(WegnerRow(float(s), k / d.size, lo, hi))
    return rows


def wegner_empirical(theta1, theta2, s_grid, trials, seed, distribution=None, lam=1.0,
                     interaction=None, cap=None):
    """Empirical CDF of the spectral distance with Wilson 95% intervals."""
    from .hamiltonian import Uniform

    n = theta1.n_particles
    if theta1.distance_to(theta2) < 8 * n * max(theta1.diameter, theta2.diameter):
        raise UsageError("sets do not satisfy the 8N diam distance condition")
    dist = wegner_distances(theta1, theta2, trials, seed, distribution or Uniform(1.0), lam,
                            interaction, cap)
    return wegner_table(dist, s_grid)


def spectra_rows(instance_id, es):
    """CSV rows (instance_id, index, eigenvalue, cluster_id)."""
    cid = {}
    for k, c in enumerate(es.clusters):
        for i in c:
            cid[i] = k
    return [(instance_id, i, float(v), cid[i]) for i, v in enumerate(es.eigenvalues)]


SPECTRA_HEADER = ("instance_id", "index", "eigenvalue", "cluster_id")
