"""Small-dimension symmetric matrix algebra and elementary symmetric functions.

Everything downstream (extremal operators, coefficient families, mean value
experiments) reduces to eigenvalues of small symmetric matrices and to the
polynomials sigma_k of those eigenvalues.  Matrices here are tiny (n <= 8,
typically 2 or 3), so the eigensolver is a deterministic cyclic Jacobi sweep
rather than a LAPACK call; reproducibility matters more than speed at these
sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SymMatrix",
    "SpectralDecomp",
    "ConeQuery",
    "EigenConvergenceError",
    "eig_ascending",
    "trace_form",
    "polar_symmetric_part",
    "sigma_k",
    "sigma_km1_i",
    "cone_membership",
]

_JACOBI_MAX_SWEEPS = 60


class EigenConvergenceError(RuntimeError):
    """Jacobi iteration failed to reach the off-diagonal tolerance."""


def _packed_size(n):
    return n * (n + 1) // 2


def _triu_indices(n):
    return np.triu_indices(n)


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric n x n matrix stored as its upper triangle, row-major.

    The packed storage cannot encode asymmetry, which is the invariant the
    rest of the code relies on.  ``mat`` reconstructs the dense symmetric
    array (read-only).
    """

    dim: int
    entries: np.ndarray  # shape (n(n+1)/2,), float64

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        e = np.asarray(self.entries, dtype=float).reshape(-1)
        if e.shape[0] != _packed_size(self.dim):
            raise ValueError(
                f"expected {_packed_size(self.dim)} packed entries for dim "
                f"{self.dim}, got {e.shape[0]}"
            )
        if not np.all(np.isfinite(e)):
            raise ValueError("entries must be finite")
        e = e.copy()
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @classmethod
    def from_full(cls, a, tol=1e-10):
        """Build from a dense array; rejects asymmetry beyond ``tol``."""
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        scale = 1.0 + np.max(np.abs(a)) if a.size else 1.0
        if np.max(np.abs(a - a.T)) > tol * scale:
            raise ValueError("matrix is not symmetric within tolerance")
        sym = 0.5 * (a + a.T)
        return cls(a.shape[0], sym[_triu_indices(a.shape[0])])

    @classmethod
    def from_diag(cls, diag):
        return cls.from_full(np.diag(np.asarray(diag, dtype=float)))

    @classmethod
    def identity(cls, n):
        return cls.from_full(np.eye(n))

    @property
    def mat(self):
        """Dense (n, n) symmetric array, read-only."""
        n = self.dim
        full = np.zeros((n, n))
        iu = _triu_indices(n)
        full[iu] = self.entries
        full = full + full.T - np.diag(np.diag(full))
        full.flags.writeable = False
        return full

    def __array__(self, dtype=None, copy=None):
        m = np.array(self.mat)
        return m.astype(dtype) if dtype is not None else m


@dataclass(frozen=True)
class SpectralDecomp:
    """Eigenvalues sorted ascending and an orthonormal frame Q with M = Q diag Q^t."""

    eigenvalues: np.ndarray  # shape (n,), ascending
    frame: np.ndarray  # shape (n, n), columns are eigenvectors

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float).copy()
        q = np.asarray(self.frame, dtype=float).copy()
        lam.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "frame", q)

    def reconstruct(self):
        return (self.frame * self.eigenvalues) @ self.frame.T


@dataclass(frozen=True)
class ConeQuery:
    """Membership query for the Garding cone of order k.

    closure is one of "open", "closed", "boundary".
    """

    k: int
    closure: str = "open"

    def __post_init__(self):
        if self.closure not in ("open", "closed", "boundary"):
            raise ValueError(f"unknown closure flag {self.closure!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def _as_dense(m):
    if isinstance(m, SymMatrix):
        return np.array(m.mat)
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a


def eig_ascending(m) -> SpectralDecomp:
    """Spectral decomposition with ascending eigenvalues via cyclic Jacobi.

    Deterministic sweep order (row-major over the strict upper triangle), so
    identical inputs give bit-identical decompositions on one platform.  For
    degenerate eigenvalues any orthonormal completion of the eigenspace may be
    returned; only frame invariants are guaranteed.

    Raises
    ------
    EigenConvergenceError
        If the off-diagonal norm has not dropped below tolerance after the
        fixed sweep budget.  The message names the offending matrix.
    """
    a = _as_dense(m)
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix must be finite")
    if n == 1:
        return SpectralDecomp(np.array([a[0, 0]]), np.eye(1))

    scale = max(1.0, float(np.max(np.abs(a))))
    tol = 1e-15 * scale
    q = np.eye(n)
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = math.sqrt(float(np.sum(np.tril(a, -1) ** 2)) * 2.0)
        if off <= tol:
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                apq = a[p, r]
                if abs(apq) <= 1e-18 * scale:
                    continue
                # classical Jacobi rotation annihilating a[p, r]
                theta = (a[r, r] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (
                    abs(theta) + math.sqrt(theta * theta + 1.0)
                )
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, r]
                rot_r = s * a[:, p] + c * a[:, r]
                a[:, p], a[:, r] = rot_p, rot_r
                rot_p = c * a[p, :] - s * a[r, :]
                rot_r = s * a[p, :] + c * a[r, :]
                a[p, :], a[r, :] = rot_p, rot_r
                a[p, r] = a[r, p] = 0.0
                rot_p = c * q[:, p] - s * q[:, r]
                rot_r = s * q[:, p] + c * q[:, r]
                q[:, p], q[:, r] = rot_p, rot_r
    else:
        raise EigenConvergenceError(
            f"Jacobi failed to converge after {_JACOBI_MAX_SWEEPS} sweeps on\n{_as_dense(m)}"
        )

    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    lam = lam[order]
    q = q[:, order]
    # sign convention: largest-magnitude component of each eigenvector positive
    for j in range(n):
        i = int(np.argmax(np.abs(q[:, j])))
        if q[i, j] < 0:
            q[:, j] = -q[:, j]
    return SpectralDecomp(lam, q)


def trace_form(a, m) -> float:
    """trace(A^t M A); the linear-in-M building block of every operator here."""
    am = _as_dense(a)
    mm = _as_dense(m)
    if am.shape != mm.shape:
        raise ValueError(f"dimension mismatch: {am.shape} vs {mm.shape}")
    return float(np.einsum("ji,jl,li->", am, mm, am))


def trace_form_batch(mats, m):
    """trace(A^t M A) for a stacked array of matrices, shape (count, n, n)."""
    mm = _as_dense(m)
    return np.einsum("kji,jl,kli->k", mats, mm, mats)


def polar_symmetric_part(a) -> SymMatrix:
    """PSD factor S = (A A^t)^(1/2) of the left polar decomposition A = S Q.

    Replacing A by S leaves every trace form and every ball average unchanged,
    which is what lets coefficient families be normalised to symmetric PSD
    members.
    """
    am = np.asarray(a, dtype=float)
    if am.ndim != 2 or am.shape[0] != am.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {am.shape}")
    gram = am @ am.T
    dec = eig_ascending(SymMatrix.from_full(gram))
    lam = np.clip(dec.eigenvalues, 0.0, None)
    s = (dec.frame * np.sqrt(lam)) @ dec.frame.T
    return SymMatrix.from_full(0.5 * (s + s.T))


def sigma_k(lam, k) -> float:
    """Elementary symmetric polynomial sigma_k of the entries of ``lam``.

    Evaluated by the prefix-polynomial recurrence (numerically stable, O(nk));
    subset enumeration is kept as the oracle in the test suite only.
    """
    lam = np.asarray(lam, dtype=float).reshape(-1)
    n = lam.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range 1..{n}")
    e = np.zeros(k + 1)
    e[0] = 1.0
    for i, x in enumerate(lam):
        top = min(k, i + 1)
        for j in range(top, 0, -1):
            e[j] += x * e[j - 1]
    return float(e[k])


def sigma_km1_i(gamma, k, i) -> float:
    """sigma_{k-1} with slot ``i`` (0-based) zeroed out.

    For k = 1 this is sigma_0 = 1 by convention, independent of gamma.
    """
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    n = gamma.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range 1..{n}")
    if not 0 <= i < n:
        raise ValueError(f"index i={i} out of range 0..{n - 1}")
    if k == 1:
        return 1.0
    reduced = gamma.copy()
    reduced[i] = 0.0
    return sigma_k(reduced, k - 1)


def sigma_km1_all(gamma, k):
    """Vector of sigma_{k-1,i} over all slots; used when building family members."""
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    return np.array([sigma_km1_i(gamma, k, i) for i in range(gamma.shape[0])])


def _cone_tols(lam, k):
    scale = max(1.0, float(np.max(np.abs(lam)))) if lam.size else 1.0
    # sigma_j scales like lam^j, so the tolerance does too
    return np.array([1e-12 * scale**j for j in range(1, k + 1)])


def cone_membership(lam, q: ConeQuery) -> bool:
    """Test lam against the open/closed/boundary Garding cone of order q.k.

    Open: sigma_j > 0 for all j <= k.  Closed: sigma_j >= 0 up to a relative
    tolerance 1e-12 * max(1, |lam|_inf)^j.  Boundary: closed holds and sigma_k
    vanishes within the same tolerance.
    """
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape[0] < q.k:
        raise ValueError(f"need at least k={q.k} entries, got {lam.shape[0]}")
    sig = np.array([sigma_k(lam, j) for j in range(1, q.k + 1)])
    tols = _cone_tols(lam, q.k)
    if q.closure == "open":
        return bool(np.all(sig > 0.0))
    closed = bool(np.all(sig >= -tols))
    if q.closure == "closed":
        return closed
    return closed and abs(sig[-1]) <= tols[-1]
