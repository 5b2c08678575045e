"""Localization certificates for eigenvectors and cubes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .geometry import rearrange
from .spectral import cluster_indices

NORM_TOL = 1e-10
CENTER_SCAN_CAP = 10_000


@dataclass(frozen=True)
class LocalizationCertificate:
    eigen_index: int
    center: tuple | None
    m: float
    L: float
    tau: float
    margin: float  # min over far y of -m d - log|phi(y)|; >= 0 iff pass
    passed: bool
    rotated: bool = False
    capped: bool = False


@dataclass(frozen=True)
class CubeCertificate:
    certificates: tuple
    passed: bool
    eigenvalues: tuple = field(default=(), repr=False)
    basis: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_rotated(self):
        return sum(c.rotated for c in self.certificates)


def _distances(theta, center):
    """d_S from every element of theta (in matrix index order) to ``center``."""
    c = np.array(rearrange(center), dtype=np.int64)
    return np.abs(theta.sorted_element_array - c).max(axis=1)


def _check_norm(phi):
    nrm = float(np.linalg.norm(phi))
    if abs(nrm - 1.0) > NORM_TOL:
        raise UsageError(f"vector is not normalised (norm {nrm!r})")


def _margin(absphi, dist, m, threshold):
    far = dist >= threshold
    if not far.any():
        return math.inf
    a = absphi[far]
    d = dist[far]
    with np.errstate(divide="ignore"):
        vals = -m * d - np.log(a)
    return float(vals.min())


def check_vector(phi, center, m, L, tau, theta, eigen_index=-1):
    """Test |phi(y)| <= exp(-m d_S(y, center)) for every y with d_S >= L**tau."""
    phi = np.asarray(phi, dtype=np.float64)
    _check_norm(phi)
    if center not in theta:
        raise UsageError(f"center {center} is not in theta")
    margin = _margin(np.abs(phi), _distances(theta, center), m, L**tau)
    return LocalizationCertificate(eigen_index, rearrange(center), m, L, tau, margin, margin >= 0)


def find_center(phi, m, L, tau, theta, cap=CENTER_SCAN_CAP):
    """A passing localization center (sorted representative) or None.

    Returns ``(center, capped)`` where ``capped`` records that the full scan
    was replaced by the argmax neighbourhood.
    """
    phi = np.asarray(phi, dtype=np.float64)
    _check_norm(phi)
    absphi = np.abs(phi)
    thr = L**tau
    srt = theta.sorted_element_array
    first = tuple(int(c) for c in srt[int(np.argmax(absphi))])
    capped = len(theta.reps) > cap
    if capped:
        cands = [first]
        for j in range(len(first)):
            for s in (-1, 1):
                y = rearrange(first[:j] + (first[j] + s,) + first[j + 1:])
                if y in theta and y not in cands:
                    cands.append(y)
    else:
        # best-first: representatives ordered by their largest |phi|
        best = {}
        for row, a in zip(map(tuple, srt.tolist()), absphi):
            if a > best.get(row, -1.0):
                best[row] = a
        cands = [first] + sorted((r for r in best if r != first), key=lambda r: (-best[r], r))
    for c in cands:
        dist = np.abs(srt - np.array(c)).max(axis=1)
        if _margin(absphi, dist, m, thr) >= 0:
            return c, capped
    return None, capped


def _certify(phi, i, m, L, tau, theta, rotated, cap):
    center, capped = find_center(phi, m, L, tau, theta, cap)
    if center is None:
        # report the margin at the argmax representative
        srt = theta.sorted_element_array
        c = tuple(int(v) for v in srt[int(np.argmax(np.abs(phi)))])
        margin = _margin(np.abs(phi), _distances(theta, c), m, L**tau)
        return LocalizationCertificate(i, None, m, L, tau, margin, False, rotated, capped)
    margin = _margin(np.abs(phi), _distances(theta, center), m, L**tau)
    return LocalizationCertificate(i, center, m, L, tau, margin, True, rotated, capped)


def position_observable(theta, f=None):
    """Diagonal of Q(x) = sum_j f(x_j), shifted to the mean coordinate."""
    x = theta.element_array.astype(np.float64)
    x = x - x.mean()
    fx = x * x if f is None else np.vectorize(f)(x)
    return fx.sum(axis=1)


def certify_cube(es, theta, m, L, tau, deg_tol=None, f=None, cap=CENTER_SCAN_CAP):
    """Certificate that some orthonormal eigenbasis of H_theta is m-localizing.

    Within a degenerate cluster where the solver basis fails, the basis is
    rotated to diagonalise a strictly convex position observable.
    """
    vals = es.eigenvalues
    vecs = np.array(es.eigenvectors, copy=True)
    clusters = es.clusters if deg_tol is None else cluster_indices(vals, deg_tol)
    q = None
    certs = [None] * len(vals)
    for cl in clusters:
        cl = list(cl)
        local = [_certify(vecs[:, i], i, m, L, tau, theta, False, cap) for i in cl]
        if len(cl) > 1 and not all(c.passed for c in local):
            if q is None:
                q = position_observable(theta, f)
            v = vecs[:, cl]
            _, w = np.linalg.eigh(v.T @ (q[:, None] * v))
            rot = v @ w
            rot /= np.linalg.norm(rot, axis=0)
            vecs[:, cl] = rot
            local = [_certify(vecs[:, i], i, m, L, tau, theta, True, cap) for i in cl]
        for i, c in zip(cl, local):
            certs[i] = c
    return CubeCertificate(tuple(certs), all(c.passed for c in certs), tuple(map(float, vals)), vecs)


def decay_profile(phi, center, theta):
    """Rows (r, max |phi| on the shell d_S = r) for every occupied shell."""
    if center not in theta:
        raise UsageError(f"center {center} is not in theta")
    dist = _distances(theta, center)
    absphi = np.abs(np.asarray(phi, dtype=np.float64))
    return [(int(r), float(absphi[dist == r].max())) for r in np.unique(dist)]


CERTIFICATE_HEADER = ("instance_id", "eigen_index", "eigenvalue", "center", "m", "pass", "margin")
PROFILE_HEADER = ("instance_id", "eigen_index", "r", "shell_max")


def certificate_rows(instance_id, cube_cert):
    rows = []
    for c, val in zip(cube_cert.certificates, cube_cert.eigenvalues):
        center = "" if c.center is None else " ".join(map(str, c.center))
        rows.append((instance_id, c.eigen_index, val, center, c.m, int(c.passed), c.margin))
    return rows


def profile_rows(instance_id, eigen_index, profile):
    return [(instance_id, eigen_index, r, v) for r, v in profile]
