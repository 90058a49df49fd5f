"""Coefficient-matrix families and their samplers.

A family is the index set of the linear operators trace(A^t M A) whose
infimum (or supremum) defines the nonlinear operator under study.  Bounded
families (Pucci band, rank-one sphere, rank-k projectors, finite lists) give
finite operators; the k-Hessian family is unbounded and only enters
experiments through the cap A <= phi(eps) I.

Samplers are pure functions of (seed, count).  When the target Hessian is
known they can mix in closed-form extremizers ("injection"), which turns an
upper-bound sampler into a two-sided estimate, and, for targets outside the
admissibility cone, a divergence witness ladder built from the shifted
spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional

import numpy as np

from .symmat import (
    ConeQuery,
    SymMatrix,
    cone_membership,
    eig_ascending,
    sigma_k,
    sigma_km1_all,
)

__all__ = [
    "MatrixFamily",
    "SupInfSpec",
    "PhiSchedule",
    "SampleSet",
    "sample",
    "khessian_matrix_from_gamma",
    "optimal_gamma",
    "divergence_gammas",
    "phi_check",
    "grassmann_family",
    "parse_family",
]


# ---------------------------------------------------------------------------
# family descriptions


@dataclass(frozen=True)
class MatrixFamily:
    """One coefficient set.

    kind: "finite" | "band" | "rank1" | "rank1sub" | "proj" | "khess".
    "detone" parses to khess with k = dim.  All members are symmetric PSD.
    """

    kind: str
    dim: int
    theta: float = 1.0
    Theta: float = 1.0
    k: int = 1
    members: tuple = ()  # finite only: tuple of SymMatrix
    basis: Optional[np.ndarray] = None  # rank1sub only: (n, d) orthonormal

    def __post_init__(self):
        if self.kind not in ("finite", "band", "rank1", "rank1sub", "proj", "khess"):
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.kind == "band" and not 0 < self.theta <= self.Theta:
            raise ValueError("band requires 0 < theta <= Theta")
        if self.kind in ("proj", "khess") and not 1 <= self.k <= self.dim:
            raise ValueError(f"k={self.k} out of range 1..{self.dim}")
        if self.kind == "rank1sub":
            b = np.asarray(self.basis, dtype=float)
            if np.max(np.abs(b.T @ b - np.eye(b.shape[1]))) > 1e-10:
                raise ValueError("rank1sub basis must be orthonormal")
            object.__setattr__(self, "basis", b)

    @property
    def bounded(self):
        return self.kind != "khess"

    @property
    def norm_bound(self):
        """sup of the spectral norm over the family; None when unbounded."""
        if self.kind == "band":
            return math.sqrt(self.Theta)
        if self.kind in ("rank1", "rank1sub", "proj"):
            return 1.0
        if self.kind == "finite":
            return max(
                float(np.max(np.abs(eig_ascending(m).eigenvalues))) for m in self.members
            )
        return None

    def text(self):
        if self.kind == "band":
            return f"band:theta={self.theta:g},Theta={self.Theta:g}"
        if self.kind == "khess":
            return "detone" if self.k == self.dim else f"khess:k={self.k}"
        if self.kind == "proj":
            return f"proj:k={self.k}"
        if self.kind == "rank1":
            return "rank1"
        if self.kind == "finite" and len(self.members) == 1:
            m = self.members[0].mat
            if np.allclose(m, np.eye(self.dim)):
                return "id"
        return self.kind


@dataclass(frozen=True)
class SupInfSpec:
    """A set of families: sup over families of inf over members.

    kind "explicit" carries the inner families directly; "grassmann" carries
    sampled (n, n-k+1) orthonormal bases for the k-th-eigenvalue operator,
    each basis standing for the rank-one family of unit vectors it spans.
    """

    kind: str
    dim: int
    k: int = 1
    families: tuple = ()  # explicit: tuple of MatrixFamily
    bases: tuple = ()  # grassmann: tuple of (n, d) arrays

    def __post_init__(self):
        if self.kind not in ("explicit", "grassmann"):
            raise ValueError(f"unknown sup-inf kind {self.kind!r}")
        if self.kind == "explicit":
            if not all(f.bounded for f in self.families):
                raise ValueError("union of inner families must be bounded")

    @property
    def norm_bound(self):
        if self.kind == "grassmann":
            return 1.0
        return max(f.norm_bound for f in self.families)


@dataclass(frozen=True)
class PhiSchedule:
    """Truncation cap phi(eps), with phi -> inf and eps*phi(eps) -> 0.

    Either a power exponent a in (0, 1) for phi(eps) = eps^(-a), or an
    explicit positive function handle.
    """

    exponent: Optional[float] = None
    fn: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if (self.exponent is None) == (self.fn is None):
            raise ValueError("give exactly one of exponent, fn")
        if self.exponent is not None and not 0.0 < self.exponent < 1.0:
            raise ValueError("power schedule needs exponent in (0, 1)")

    def value(self, eps):
        if self.exponent is not None:
            return float(eps) ** (-self.exponent)
        return float(self.fn(float(eps)))


def phi_check(s: PhiSchedule, eps_probe) -> bool:
    """Monotone-tail check of phi -> inf and eps*phi -> 0 along a probe sequence."""
    eps_probe = np.asarray(eps_probe, dtype=float)
    if np.any(np.diff(eps_probe) >= 0) or eps_probe[-1] >= 1e-6:
        raise ValueError("probe must decrease strictly to below 1e-6")
    phi = np.array([s.value(e) for e in eps_probe])
    if np.any(phi <= 0):
        raise ValueError("phi must be positive")
    ep = eps_probe * phi
    tail = len(eps_probe) // 2  # monotonicity is a tail property
    grows = np.all(np.diff(phi[tail:]) >= -1e-12 * phi[tail:-1]) and phi[-1] > 2.0 * phi[0]
    decays = np.all(np.diff(ep[tail:]) <= 1e-12 * ep[tail:-1]) and ep[-1] < 0.5 * ep[0]
    return bool(grows and decays)


# ---------------------------------------------------------------------------
# k-Hessian family constructions


def optimal_gamma(mu, k):
    """The normalised spectrum gamma* = mu / sigma_k(mu)^(1/k) attaining the infimum."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if not cone_membership(mu, ConeQuery(k, "open")):
        raise ValueError(f"mu={mu.tolist()} is not strictly inside the order-{k} cone")
    sk = sigma_k(mu, k)
    if sk <= 0:
        raise ValueError("sigma_k(mu) must be positive")
    return mu * sk ** (-1.0 / k)


def khessian_matrix_from_gamma(gamma, k, frame=None) -> SymMatrix:
    """Family member with eigenvalues sqrt(sigma_{k-1,i}(gamma)) in the given frame.

    Requires gamma strictly inside the order-k cone with sigma_k(gamma) = 1.
    """
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    n = gamma.shape[0]
    if not cone_membership(gamma, ConeQuery(k, "open")):
        raise ValueError("gamma is not strictly inside the order-k cone")
    # the evaluation error of sigma_k itself scales like |gamma|^k, so the
    # normalisation gate must too (witness spectra are legitimately huge)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(gamma))) ** k)
    if abs(sigma_k(gamma, k) - 1.0) > tol:
        raise ValueError(f"sigma_k(gamma) = {sigma_k(gamma, k)!r}, expected 1")
    lam = np.sqrt(np.clip(sigma_km1_all(gamma, k), 0.0, None))
    q = np.eye(n) if frame is None else np.asarray(frame, dtype=float)
    return SymMatrix.from_full((q * lam) @ q.T)


def _shift_to_cone(mu, k):
    # smallest a >= 0 with mu + a*1 on the cone boundary (bisection)
    mu = np.asarray(mu, dtype=float)
    if cone_membership(mu, ConeQuery(k, "open")):
        return 0.0
    lo, hi = 0.0, max(0.0, -float(np.min(mu))) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cone_membership(mu + mid, ConeQuery(k, "open")):
            hi = mid
        else:
            lo = mid
    return hi


def divergence_gammas(mu, k, cap, count=8):
    """Witness spectra driving the capped infimum toward -inf for mu outside the cone.

    Follows the shifted-spectrum construction: gamma built from
    mu + (a* + delta)*1 normalised to sigma_k = 1, with delta chosen so the
    largest member eigenvalue approaches (but respects) the cap.  For the
    fully degenerate direction mu proportional to -1 the (b, 1/b) ladder with
    k-2 unit slots is used instead.  Returns a list of gamma vectors.
    """
    mu = np.asarray(mu, dtype=float).reshape(-1)
    n = mu.shape[0]
    if cone_membership(mu, ConeQuery(k, "closed")):
        return []
    out = []

    def lam_max(gamma):
        return math.sqrt(max(1e-300, float(np.max(sigma_km1_all(gamma, k)))))

    spread = float(np.max(mu) - np.min(mu))
    if spread > 1e-9 * max(1.0, float(np.max(np.abs(mu)))):
        a_star = _shift_to_cone(mu, k)
        deltas = np.logspace(-14, 1, 220) * (1.0 + a_star)
        ladder = []
        for d in deltas:
            shifted = mu + (a_star + d)
            sk = sigma_k(shifted, k)
            if sk <= 0 or not cone_membership(shifted, ConeQuery(k, "open")):
                continue
            gamma = shifted * sk ** (-1.0 / k)
            lm = lam_max(gamma)
            if lm <= 0.999 * cap:
                ladder.append((lm, gamma))
        ladder.sort(key=lambda t: t[0])
        out.extend(g for _, g in ladder[-count:])
    else:
        # mu = -a * (1, ..., 1): gamma_b = (b, 1/b, 1 x (k-2), 0 x (n-k))
        bs = np.logspace(0.5, 2 * math.log10(max(cap, 2.0)), 40)
        for b in bs:
            gamma = np.concatenate(
                [[b, 1.0 / b], np.ones(k - 2), np.zeros(n - k)]
            )
            gamma = gamma + 1e-12  # keep strictly inside the cone
            gamma = gamma * sigma_k(gamma, k) ** (-1.0 / k)
            if lam_max(gamma) <= 0.999 * cap:
                out.append(gamma)
        out = out[-count:]
    return out


# ---------------------------------------------------------------------------
# sampling


@dataclass
class SampleSet:
    """Stacked sampled matrices plus labels and known largest eigenvalues."""

    mats: np.ndarray  # (count, n, n)
    labels: list
    lam_max: np.ndarray  # (count,)

    def as_symmatrices(self):
        return [SymMatrix.from_full(m) for m in self.mats]

    def __len__(self):
        return len(self.labels)


def _haar_frames(rng, count, n):
    g = rng.normal(size=(count, n, n))
    q, r = np.linalg.qr(g)
    d = np.sign(np.einsum("kii->ki", r))
    d[d == 0] = 1.0
    return q * d[:, None, :]


def _sigma_batch(g, j):
    # elementary symmetric polynomial sigma_j along axis 1 of g, vectorised
    b, n = g.shape
    e = np.zeros((b, j + 1))
    e[:, 0] = 1.0
    for i in range(n):
        top = min(j, i + 1)
        for jj in range(top, 0, -1):
            e[:, jj] += g[:, i] * e[:, jj - 1]
    return e[:, j]


def _in_cone_batch(g, k):
    ok = np.ones(g.shape[0], dtype=bool)
    for j in range(1, k + 1):
        ok &= _sigma_batch(g, j) > 0.0
    return ok


def _sigma_km1_batch(g, k):
    b, n = g.shape
    out = np.empty((b, n))
    if k == 1:
        out[:] = 1.0
        return out
    for i in range(n):
        reduced = g.copy()
        reduced[:, i] = 0.0
        out[:, i] = _sigma_batch(reduced, k - 1)
    return out


def _khess_gammas(rng, count, n, k):
    # half exponentiated Gaussians (inside the cone for free), half isotropic
    # Gaussians rejected into the cone; both normalised to sigma_k = 1
    kept = []
    need = count
    guard = 0
    while need > 0 and guard < 200:
        guard += 1
        m = max(64, 2 * need)
        g1 = np.exp(rng.normal(size=(m // 2, n)))
        g2 = rng.normal(size=(m - m // 2, n))
        g2 = g2[_in_cone_batch(g2, k)]
        g = np.concatenate([g1, g2], axis=0)
        sk = _sigma_batch(g, k)
        g = g[sk > 0]
        sk = sk[sk > 0]
        g = g * sk[:, None] ** (-1.0 / k)
        kept.append(g[:need])
        need -= len(g[:need])
    if need > 0:
        raise RuntimeError("gamma sampler failed to fill the request")
    return np.concatenate(kept, axis=0)


def _assemble(frames, eigs):
    return np.einsum("kij,kj,klj->kil", frames, eigs, frames)


def sample(
    family: MatrixFamily,
    count,
    seed,
    cap=None,
    target=None,
    inject=True,
) -> SampleSet:
    """Draw ``count`` family members, deterministically in ``seed``.

    cap, if given, keeps only members with largest eigenvalue <= cap (the
    phi(eps) truncation); an empty result raises.  ``target`` is the Hessian
    the extremum will be taken against; when present (and ``inject``), the
    known extremizers for that target are appended, as are divergence
    witnesses when the target lies outside the family's admissibility cone.
    For finite families the stored members are returned (filtered by cap) and
    ``count`` is ignored.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if cap is not None and cap <= 0:
        raise ValueError("cap must be positive")
    n = family.dim
    rng = np.random.default_rng(seed)
    tdec = None
    if target is not None:
        tdec = eig_ascending(target)

    mats, labels, lmax = [], [], []

    def push(m, label, lm):
        mats.append(np.asarray(m, dtype=float))
        labels.append(label)
        lmax.append(lm)

    if family.kind == "finite":
        for i, sm in enumerate(family.members):
            lm = float(np.max(np.abs(eig_ascending(sm).eigenvalues)))
            if cap is None or lm <= cap:
                push(sm.mat, f"finite#{i}", lm)
        if not mats:
            raise ValueError("cap excludes the entire finite family")

    elif family.kind == "band":
        lo, hi = math.sqrt(family.theta), math.sqrt(family.Theta)
        if cap is not None and cap < lo:
            raise ValueError("cap excludes the entire band family")
        hi_eff = hi if cap is None else min(hi, cap)
        frames = _haar_frames(rng, count, n)
        s = rng.uniform(lo, hi_eff, size=(count, n))
        for i, m in enumerate(_assemble(frames, s)):
            push(m, f"band#{i}", float(np.max(s[i])))
        push(lo * np.eye(n), "anchor:sqrt_theta*I", lo)
        if hi_eff == hi:
            push(hi * np.eye(n), "anchor:sqrt_Theta*I", hi)
        if tdec is not None and inject:
            for sign, name in ((1, "inject:minus"), (-1, "inject:plus")):
                d = np.where(sign * tdec.eigenvalues >= 0, lo, hi)
                if np.max(d) <= hi_eff:
                    push((tdec.frame * d) @ tdec.frame.T, name, float(np.max(d)))

    elif family.kind in ("rank1", "rank1sub"):
        if cap is not None and cap < 1.0:
            raise ValueError("cap excludes the rank-one family")
        if family.kind == "rank1":
            v = rng.normal(size=(count, n))
        else:
            b = family.basis
            c = rng.normal(size=(count, b.shape[1]))
            v = c @ b.T
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        for i in range(count):
            push(np.outer(v[i], v[i]), f"rank1#{i}", 1.0)
        if tdec is not None and inject:
            if family.kind == "rank1":
                for j in range(n):
                    w = tdec.frame[:, j]
                    push(np.outer(w, w), f"inject:eigvec{j}", 1.0)
            else:
                b = family.basis
                comp = eig_ascending(b.T @ (target.mat if isinstance(target, SymMatrix) else np.asarray(target)) @ b)
                for j in (0, comp.eigenvalues.shape[0] - 1):
                    w = b @ comp.frame[:, j]
                    push(np.outer(w, w), f"inject:compress{j}", 1.0)

    elif family.kind == "proj":
        if cap is not None and cap < 1.0:
            raise ValueError("cap excludes the projector family")
        k = family.k
        frames = _haar_frames(rng, count, n)
        for i in range(count):
            v = frames[i, :, :k]
            push(v @ v.T, f"proj#{i}", 1.0)
        if tdec is not None and inject:
            vlow = tdec.frame[:, :k]
            vhigh = tdec.frame[:, n - k :]
            push(vlow @ vlow.T, "inject:bottom-k", 1.0)
            push(vhigh @ vhigh.T, "inject:top-k", 1.0)

    elif family.kind == "khess":
        k = family.k
        gam = _khess_gammas(rng, count, n, k)
        sig = np.clip(_sigma_km1_batch(gam, k), 0.0, None)
        eigs = np.sqrt(sig)
        lm = np.max(eigs, axis=1)
        frames = _haar_frames(rng, count, n)
        if tdec is not None:
            frames[::2] = tdec.frame  # co-diagonal half: the infimum lives there
        keep = np.ones(count, dtype=bool) if cap is None else lm <= cap
        for i in np.nonzero(keep)[0]:
            push(_assemble(frames[i : i + 1], eigs[i : i + 1])[0], f"khess#{i}", lm[i])
        ones = np.ones(n) * sigma_k(np.ones(n), k) ** (-1.0 / k)
        anchor = khessian_matrix_from_gamma(ones, k, None if tdec is None else tdec.frame)
        alm = float(np.max(np.abs(eig_ascending(anchor).eigenvalues)))
        if cap is None or alm <= cap:
            push(anchor.mat, "anchor:isotropic", alm)
        if tdec is not None and inject:
            mu = tdec.eigenvalues
            if cone_membership(mu, ConeQuery(k, "open")) and sigma_k(mu, k) > 0:
                gstar = optimal_gamma(mu, k)
                astar = khessian_matrix_from_gamma(gstar, k, tdec.frame)
                slm = math.sqrt(max(0.0, float(np.max(sigma_km1_all(gstar, k)))))
                if cap is None or slm <= cap:
                    push(astar.mat, "inject:gamma*", slm)
            elif cap is not None and not cone_membership(mu, ConeQuery(k, "closed")):
                for j, g in enumerate(divergence_gammas(mu, k, cap)):
                    w = khessian_matrix_from_gamma(g, k, tdec.frame)
                    push(w.mat, f"witness#{j}", math.sqrt(float(np.max(sigma_km1_all(g, k)))))
        if not mats:
            raise ValueError("cap too small to admit any gamma in the k-Hessian family")

    return SampleSet(np.array(mats), labels, np.array(lmax))


def grassmann_family(k, n, subspace_count, seed) -> SupInfSpec:
    """Sampled subspaces of dimension n-k+1 for the k-th eigenvalue operator.

    Coordinate-aligned subspaces are always included as anchors; the rest are
    Haar-distributed.  k = 1 gives the single full-space family.
    """
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range 1..{n}")
    if subspace_count < 1:
        raise ValueError("subspace_count must be >= 1")
    d = n - k + 1
    bases = []
    for idx in combinations(range(n), d):
        bases.append(np.eye(n)[:, list(idx)])
    if d == n:
        bases = bases[:1]
    rng = np.random.default_rng(seed)
    while len(bases) < max(subspace_count, len(bases)):
        g = rng.normal(size=(n, d))
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))
        bases.append(q)
    for b in bases:
        b.flags.writeable = False
    return SupInfSpec(kind="grassmann", dim=n, k=k, bases=tuple(bases))


def parse_family(text, dim) -> "MatrixFamily | SupInfSpec":
    """Parse CLI text forms: band:theta=,Theta=, khess:k=, detone, rank1,
    proj:k=, grassmann:k=,subspaces=[,seed=], id."""
    head, _, rest = text.partition(":")
    kv = {}
    if rest:
        for item in rest.split(","):
            key, sep, v = item.partition("=")
            if not sep:
                raise ValueError(f"malformed family option {item!r} in {text!r}")
            kv[key.strip()] = float(v)
    if head == "band":
        return MatrixFamily("band", dim, theta=kv.get("theta", 1.0), Theta=kv.get("Theta", 1.0))
    if head == "khess":
        return MatrixFamily("khess", dim, k=int(kv.get("k", dim)))
    if head == "detone":
        return MatrixFamily("khess", dim, k=dim)
    if head == "rank1":
        return MatrixFamily("rank1", dim)
    if head == "proj":
        return MatrixFamily("proj", dim, k=int(kv.get("k", 1)))
    if head == "grassmann":
        return grassmann_family(
            int(kv.get("k", 1)), dim, int(kv.get("subspaces", 64)), int(kv.get("seed", 0))
        )
    if head == "id":
        return MatrixFamily("finite", dim, members=(SymMatrix.identity(dim),))
    raise ValueError(f"unknown family {text!r}")
