"""Averages of scalar fields over Euclidean balls and spheres.

The single building block of every experiment is the normalised average of
u(x + A y) over y in a ball or sphere of radius eps (optionally off-center).
Rules are built once per (kind, region, dim) on the unit ball and mapped
affinely, so the extremum over thousands of coefficient matrices reuses one
node set.

Deterministic rules are product Gauss: radial Gauss-Jacobi nodes (the radial
weight r^(n-1) is built into the rule, so polynomial exactness in r is
genuine) times a uniform circle grid for n = 2 or a subdivided-octahedron
sphere grid for n = 3.  The octahedron grid with equal weights integrates
spherical polynomials of degree <= 3 exactly by symmetry, which is what the
trace identity needs.  Monte Carlo (optionally with stratified radial bins)
is the fallback for n >= 4 and for fields with isolated loss of smoothness,
where a symmetric deterministic node set would sit on the bad set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import roots_jacobi

from .symmat import SymMatrix

__all__ = [
    "ScalarField",
    "QuadRule",
    "LocalityError",
    "ball_average",
    "sphere_average",
    "trace_identity_selftest",
    "parse_rule",
]


class LocalityError(ValueError):
    """A probe point left the field's declared domain box."""


def unit_ball_volume(n):
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def unit_sphere_area(n):
    # surface measure of the unit sphere in R^n
    return n * unit_ball_volume(n)


# ---------------------------------------------------------------------------
# scalar fields


@dataclass
class ScalarField:
    """A test function with optional analytic derivatives.

    ``fn`` must be vectorised: it takes an (m, dim) array of points and
    returns an (m,) array.  ``grad`` and ``hess`` (if given) take a single
    point and return (dim,) and (dim, dim) arrays.  ``box`` is an optional
    (lo, hi) pair of arrays; probes outside it raise LocalityError.
    ``smoothness`` is "C2" or "C2_except" with ``bad_points`` listing where
    smoothness fails (used to pick quadrature defaults, nothing else).
    """

    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    box: Optional[tuple] = None
    smoothness: str = "C2"
    bad_points: tuple = ()

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        vals = np.asarray(self.fn(pts.reshape(-1, self.dim)), dtype=float)
        return float(vals[0]) if single else vals

    def gradient_at(self, x, step=1e-5):
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            return np.asarray(self.grad(x), dtype=float)
        g = np.zeros(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = step
            g[i] = (self(x + e) - self(x - e)) / (2 * step)
        return g

    def hessian_at(self, x, step=1e-4):
        """Analytic Hessian if present, else Richardson-extrapolated differences."""
        x = np.asarray(x, dtype=float)
        if self.hess is not None:
            return np.asarray(self.hess(x), dtype=float)

        def second(h):
            m = np.zeros((self.dim, self.dim))
            f0 = self(x)
            for i in range(self.dim):
                ei = np.zeros(self.dim)
                ei[i] = h
                m[i, i] = (self(x + ei) - 2 * f0 + self(x - ei)) / h**2
                for j in range(i + 1, self.dim):
                    ej = np.zeros(self.dim)
                    ej[j] = h
                    m[i, j] = m[j, i] = (
                        self(x + ei + ej)
                        - self(x + ei - ej)
                        - self(x - ei + ej)
                        + self(x - ei - ej)
                    ) / (4 * h**2)
            return m

        coarse, fine = second(2 * step), second(step)
        return (4 * fine - coarse) / 3.0

    def check_derivatives(self, seed=0, probes=10, step=1e-4, rtol=1e-5):
        """Verify analytic derivatives against central differences at random probes."""
        if self.grad is None and self.hess is None:
            return True
        rng = np.random.default_rng(seed)
        lo, hi = (np.full(self.dim, -1.0), np.full(self.dim, 1.0))
        if self.box is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.box)
            pad = 0.05 * (hi - lo)
            lo, hi = lo + pad, hi - pad
        for _ in range(probes):
            x = rng.uniform(lo, hi)
            if self.grad is not None:
                fd = np.array(
                    [
                        (self(x + step * e) - self(x - step * e)) / (2 * step)
                        for e in np.eye(self.dim)
                    ]
                )
                ref = np.asarray(self.grad(x), dtype=float)
                if np.max(np.abs(fd - ref)) > rtol * (1.0 + np.max(np.abs(ref))):
                    return False
            if self.hess is not None:
                save, self.hess = self.hess, None
                fd = self.hessian_at(x, step=step)
                self.hess = save
                ref = np.asarray(self.hess(x), dtype=float)
                if np.max(np.abs(fd - ref)) > rtol * (1.0 + np.max(np.abs(ref))):
                    return False
        return True

    @classmethod
    def quadratic(cls, m, p=None, c=0.0, x0=None, box=None):
        """u(y) = c + <p, y-x0> + 0.5 <M (y-x0), y-x0>; exact test paraboloid."""
        m = m.mat if isinstance(m, SymMatrix) else np.asarray(m, dtype=float)
        n = m.shape[0]
        p = np.zeros(n) if p is None else np.asarray(p, dtype=float)
        x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)

        def fn(pts):
            d = pts - x0
            return c + d @ p + 0.5 * np.einsum("ki,ij,kj->k", d, m, d)

        return cls(
            dim=n,
            fn=fn,
            grad=lambda x: p + m @ (np.asarray(x) - x0),
            hess=lambda x: m.copy(),
            box=box,
        )


# ---------------------------------------------------------------------------
# quadrature rules


def _radial_nodes(nr, n):
    # nodes/weights for integral_0^1 g(r) r^(n-1) dr
    x, w = roots_jacobi(nr, 0.0, float(n - 1))
    r = 0.5 * (x + 1.0)
    w = w / 2.0**n
    return r, w


def _circle_nodes(m):
    theta = 2.0 * math.pi * (np.arange(m) + 0.5) / m
    pts = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    w = np.full(m, 2.0 * math.pi / m)
    return pts, w


def _octahedron_sphere(level):
    """Vertices of the level-times subdivided octahedron, projected to the sphere.

    Barycentric integer coordinates on each face dedupe shared edge points
    exactly.  The set carries the full octahedral symmetry group, so with
    equal weights the rule integrates spherical polynomials of degree <= 3
    exactly.
    """
    step = 2**level
    seen = {}
    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                v = np.diag([sx, sy, sz]).astype(float)
                for i in range(step + 1):
                    for j in range(step + 1 - i):
                        k = step - i - j
                        p = i * v[0] + j * v[1] + k * v[2]
                        key = (int(p[0]), int(p[1]), int(p[2]))
                        if key not in seen:
                            seen[key] = p / np.linalg.norm(p)
    pts = np.array([seen[k] for k in sorted(seen)])
    w = np.full(len(pts), unit_sphere_area(3) / len(pts))
    return pts, w


def _octa_level(angular):
    # ``angular`` doubles as the circle point count (n=2) and the octahedron
    # subdivision level (n=3); counts > 5 are read as "use the default level".
    return angular if 1 <= angular <= 5 else 2


@dataclass(frozen=True)
class QuadRule:
    """A quadrature rule on the unit ball or unit sphere.

    kind is "gauss" or "mc"; region is "ball" or "sphere".  Weights are
    physical (they sum to the region measure); averages normalise by the
    measure.  Text forms: ``gauss:r=8,a=32`` and ``mc:n=100000,seed=7`` with
    an optional ``strat=<bins>`` for stratified radial sampling.
    """

    kind: str = "gauss"
    region: str = "ball"
    radial: int = 8
    angular: int = 32  # circle points for n=2; octahedron subdivision level for n=3
    nodes: int = 100_000  # mc only
    seed: int = 0  # mc only
    strat: int = 0  # mc only: number of equal-measure radial bins

    def __post_init__(self):
        if self.kind not in ("gauss", "mc"):
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.region not in ("ball", "sphere"):
            raise ValueError(f"unknown region {self.region!r}")

    def with_region(self, region):
        return QuadRule(
            self.kind, region, self.radial, self.angular, self.nodes, self.seed, self.strat
        )

    def text(self):
        if self.kind == "gauss":
            return f"gauss:r={self.radial},a={self.angular}"
        s = f"mc:n={self.nodes},seed={self.seed}"
        return s + (f",strat={self.strat}" if self.strat else "")


_NODE_CACHE = {}


def rule_nodes(rule: QuadRule, n: int):
    """(points, weights, measure) on the unit region; cached per (rule, n)."""
    key = (rule, n)
    if key in _NODE_CACHE:
        return _NODE_CACHE[key]

    if rule.kind == "gauss":
        if rule.region == "sphere":
            if n == 2:
                pts, w = _circle_nodes(max(rule.angular, 4))
            elif n == 3:
                pts, w = _octahedron_sphere(_octa_level(rule.angular))
            else:
                raise ValueError("gauss sphere rules implemented for n in {2, 3}; use mc")
            measure = unit_sphere_area(n)
        else:
            if n == 2:
                sp, sw = _circle_nodes(max(rule.angular, 4))
            elif n == 3:
                sp, sw = _octahedron_sphere(_octa_level(rule.angular))
            else:
                raise ValueError("gauss ball rules implemented for n in {2, 3}; use mc")
            r, rw = _radial_nodes(max(rule.radial, 2), n)
            pts = (r[:, None, None] * sp[None, :, :]).reshape(-1, n)
            w = (rw[:, None] * sw[None, :]).reshape(-1)
            measure = unit_ball_volume(n)
    else:
        rng = np.random.default_rng(rule.seed)
        dirs = rng.normal(size=(rule.nodes, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        if rule.region == "sphere":
            pts = dirs
            measure = unit_sphere_area(n)
        else:
            if rule.strat > 1:
                bins = rule.strat
                per = rule.nodes // bins
                us = np.concatenate(
                    [(i + rng.random(per)) / bins for i in range(bins)]
                    + [rng.random(rule.nodes - per * bins)]
                )
            else:
                us = rng.random(rule.nodes)
            radii = us ** (1.0 / n)
            pts = dirs[: len(radii)] * radii[:, None]
            measure = unit_ball_volume(n)
        w = np.full(len(pts), measure / len(pts))

    pts = pts.copy()
    pts.flags.writeable = False
    w = w.copy()
    w.flags.writeable = False
    _NODE_CACHE[key] = (pts, w, measure)
    return _NODE_CACHE[key]


def parse_rule(text) -> QuadRule:
    """Parse rule text forms like ``gauss:r=8,a=32`` or ``mc:n=100000,seed=7``."""
    head, _, rest = text.partition(":")
    kv = {}
    if rest:
        for item in rest.split(","):
            k, _, v = item.partition("=")
            if not _:
                raise ValueError(f"malformed rule option {item!r} in {text!r}")
            kv[k.strip()] = int(v)
    if head == "gauss":
        return QuadRule("gauss", "ball", radial=kv.pop("r", 8), angular=kv.pop("a", 32))
    if head == "mc":
        return QuadRule(
            "mc",
            "ball",
            nodes=kv.pop("n", 100_000),
            seed=kv.pop("seed", 0),
            strat=kv.pop("strat", 0),
        )
    raise ValueError(f"unknown rule {text!r}")


# ---------------------------------------------------------------------------
# averages


def _probe_points(x, eps, a, offset, pts):
    y = eps * pts
    if offset is not None:
        y = y + np.asarray(offset, dtype=float)[None, :]
    if a is None:
        return x[None, :] + y
    am = a.mat if isinstance(a, SymMatrix) else np.asarray(a, dtype=float)
    return x[None, :] + y @ am.T


def _check_box(u, probes, eps, a, offset):
    if u.box is None:
        return
    lo, hi = (np.asarray(b, dtype=float) for b in u.box)
    if np.any(probes < lo[None, :] - 1e-12) or np.any(probes > hi[None, :] + 1e-12):
        norm = 1.0 if a is None else float(np.linalg.norm(np.asarray(a), 2))
        raise LocalityError(
            f"probe left the domain box: eps={eps}, |A|={norm:.6g}, "
            f"offset={None if offset is None else np.asarray(offset).tolist()}"
        )


def ball_average(u: ScalarField, x, eps, a=None, offset=None, rule=None) -> float:
    """Normalised average of u(x + A y) over y in the ball B_eps(offset).

    ``offset`` is the center of the ball in y-space (the off-center variants
    use eps^alpha * v).  Exact for polynomials up to the rule's degree.
    """
    rule = rule or QuadRule()
    x = np.asarray(x, dtype=float)
    pts, w, measure = rule_nodes(rule.with_region("ball"), u.dim)
    probes = _probe_points(x, eps, a, offset, pts)
    _check_box(u, probes, eps, a, offset)
    return float(np.dot(w, u(probes)) / measure)


def sphere_average(u: ScalarField, x, eps, a=None, rule=None) -> float:
    """Normalised average of u(x + A y) over the sphere of radius eps."""
    rule = rule or QuadRule()
    x = np.asarray(x, dtype=float)
    pts, w, measure = rule_nodes(rule.with_region("sphere"), u.dim)
    probes = _probe_points(x, eps, None if a is None else a, None, pts)
    _check_box(u, probes, eps, a, None)
    return float(np.dot(w, u(probes)) / measure)


def average_batch(u: ScalarField, x, eps, mats, offset=None, rule=None, region="ball"):
    """Averages of u(x + A y) for a stacked (count, n, n) array of matrices.

    One flattened field evaluation serves every matrix; returns (values,
    std_of_mean) where the second entry is an MC estimate (zeros for Gauss
    rules).
    """
    rule = rule or QuadRule()
    x = np.asarray(x, dtype=float)
    pts, w, measure = rule_nodes(rule.with_region(region), u.dim)
    mats = np.asarray(mats, dtype=float)
    y = eps * pts
    if offset is not None and region == "ball":
        y = y + np.asarray(offset, dtype=float)[None, :]
    probes = x[None, None, :] + np.einsum("kij,mj->kmi", mats, y)
    _check_box(u, probes.reshape(-1, u.dim), eps, mats[0] if len(mats) else None, offset)
    vals = u(probes.reshape(-1, u.dim)).reshape(len(mats), len(pts))
    what = w / measure
    means = vals @ what
    if rule.kind == "mc":
        dev = vals - means[:, None]
        std = np.sqrt(np.maximum(0.0, (dev**2) @ (what**2)))
    else:
        std = np.zeros(len(mats))
    return means, std


def trace_identity_selftest(n, rule=None, trials=20, seed=0) -> float:
    """Max relative error of the ball/sphere second-moment trace identity.

    For random symmetric M and eps in {1, 0.1, 0.01} compares
    (n+2)/eps^2 * ball average of <M y, y>  (or n/eps^2 on the sphere)
    against trace(M); returns the max of |err| / (1 + |trace M|).
    """
    rule = rule or QuadRule()
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    const = (n + 2.0) if rule.region == "ball" else float(n)
    for _ in range(trials):
        g = rng.normal(size=(n, n))
        m = g + g.T
        u = ScalarField(
            dim=n, fn=lambda pts, m=m: np.einsum("ki,ij,kj->k", pts, m, pts)
        )
        tr = float(np.trace(m))
        for eps in (1.0, 0.1, 0.01):
            if rule.region == "ball":
                avg = ball_average(u, np.zeros(n), eps, rule=rule)
            else:
                avg = sphere_average(u, np.zeros(n), eps, rule=rule)
            err = abs(const / eps**2 * avg - tr) / (1.0 + abs(tr))
            worst = max(worst, err)
    return worst
