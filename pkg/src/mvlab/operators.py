"""Closed-form evaluators for the extremal operators under study.

These are the ground truth the mean-value experiments are checked against:
Pucci extremals, eigenvalue operators, truncated Laplacians, k-Hessians /
Monge-Ampere, and the Isaacs rewriting of an arbitrary uniformly elliptic
operator.  Operators with a nontrivial admissibility cone return the
distinguished MINUS_INFINITY sentinel (never a floating -inf, so report
arithmetic stays well-defined).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .symmat import ConeQuery, SymMatrix, cone_membership, eig_ascending, sigma_k

__all__ = [
    "MINUS_INFINITY",
    "is_minus_infinity",
    "NGridSpec",
    "OperatorSpec",
    "pucci_extremal",
    "lambda_k_value",
    "truncated_laplacian_value",
    "k_hessian_value",
    "monge_ampere_value",
    "isaacs_wrap_value",
    "evaluate",
    "parse_operator",
]


class _MinusInfinity:
    """Bottom element marking inadmissible Hessians (F would be -infinity)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MINUS_INFINITY"

    def __reduce__(self):
        return (_MinusInfinity, ())


MINUS_INFINITY = _MinusInfinity()


def is_minus_infinity(v):
    return v is MINUS_INFINITY


def _eigs(m):
    return eig_ascending(m).eigenvalues


def _check_constants(theta, Theta):
    if not 0 < theta <= Theta:
        raise ValueError(f"need 0 < theta <= Theta, got theta={theta}, Theta={Theta}")


def pucci_from_eigs(lam, theta, Theta, sign):
    lam = np.asarray(lam, dtype=float)
    if sign == "minus":
        wpos, wneg = theta, Theta
    elif sign == "plus":
        wpos, wneg = Theta, theta
    else:
        raise ValueError(f"sign must be 'minus' or 'plus', got {sign!r}")
    return float(wpos * lam[lam > 0].sum() + wneg * lam[lam < 0].sum())


def pucci_extremal(m, theta, Theta, sign) -> float:
    """Extremal Pucci operator: eigenvalues weighted theta/Theta by sign."""
    _check_constants(theta, Theta)
    return pucci_from_eigs(_eigs(m), theta, Theta, sign)


def lambda_k_value(m, k) -> float:
    """k-th smallest eigenvalue (k is 1-based)."""
    lam = _eigs(m)
    if not 1 <= k <= lam.shape[0]:
        raise ValueError(f"k={k} out of range 1..{lam.shape[0]}")
    return float(lam[k - 1])


def truncated_laplacian_value(m, k, sign) -> float:
    """Sum of the k smallest ("minus") or k largest ("plus") eigenvalues."""
    lam = _eigs(m)
    n = lam.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range 1..{n}")
    if sign == "minus":
        return float(lam[:k].sum())
    if sign == "plus":
        return float(lam[n - k :].sum())
    raise ValueError(f"sign must be 'minus' or 'plus', got {sign!r}")


def k_hessian_value(m, k):
    """k sigma_k(lambda)^(1/k) on the closed order-k cone, MINUS_INFINITY off it.

    Exactly zero on the cone boundary (where sigma_k vanishes to tolerance).
    """
    lam = _eigs(m)
    n = lam.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range 1..{n}")
    if not cone_membership(lam, ConeQuery(k, "closed")):
        return MINUS_INFINITY
    sk = max(0.0, sigma_k(lam, k))
    return float(k * sk ** (1.0 / k))


def monge_ampere_value(m):
    """n (det M)^(1/n) for PSD M, MINUS_INFINITY otherwise; the k = n Hessian."""
    n = (m.dim if isinstance(m, SymMatrix) else np.asarray(m).shape[0])
    return k_hessian_value(m, n)


@dataclass(frozen=True)
class NGridSpec:
    """Discretisation of the outer infimum over constant matrices N.

    radius R and per-axis resolution m; basis "diag" grids the eigenvalues of
    N in the frame of the queried matrix (the minimiser N = M is co-diagonal
    with itself), "full" grids every independent entry of N.
    """

    radius: float
    m: int = 33
    basis: str = "diag"

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("need at least 2 grid points per axis")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.basis not in ("diag", "full"):
            raise ValueError(f"basis must be 'diag' or 'full', got {self.basis!r}")


def isaacs_wrap_value(base, m, theta, Theta, grid: NGridSpec) -> float:
    """min over grid N of  base(N) + Pucci_plus(M - N).

    The inner supremum over the uniform-ellipticity band is the Pucci plus
    extremal in closed form, so only N is discretised.  Every grid point
    dominates the true value, with equality when M itself is on the grid;
    callers assert uniform ellipticity of ``base`` with these constants.
    """
    _check_constants(theta, Theta)
    mm = m.mat if isinstance(m, SymMatrix) else np.asarray(m, dtype=float)
    n = mm.shape[0]
    axis = np.linspace(-grid.radius, grid.radius, grid.m)

    best = math.inf
    if grid.basis == "diag":
        dec = eig_ascending(mm)
        lam = dec.eigenvalues
        # co-diagonal N: M - N shares the frame, eigenvalues lam - nu
        for nu in np.ndindex(*([grid.m] * n)):
            v = axis[list(nu)]
            nmat = (dec.frame * v) @ dec.frame.T
            val = base(nmat) + pucci_from_eigs(lam - v, theta, Theta, "plus")
            if val < best:
                best = val
    else:
        iu = np.triu_indices(n)
        for entries in np.ndindex(*([grid.m] * len(iu[0]))):
            nmat = np.zeros((n, n))
            nmat[iu] = axis[list(entries)]
            nmat = nmat + nmat.T - np.diag(np.diag(nmat))
            val = base(nmat) + pucci_extremal(mm - nmat, theta, Theta, "plus")
            if val < best:
                best = val
    if not math.isfinite(best):
        raise ValueError("empty N grid")
    return float(best)


# ---------------------------------------------------------------------------
# tagged operator descriptions


_BASES = {
    "trace": lambda m: float(np.trace(np.asarray(m, dtype=float))),
    "pucci-": None,  # filled against theta/Theta at evaluate time
    "pucci+": None,
}


@dataclass(frozen=True)
class OperatorSpec:
    """Tagged description of a closed-form operator.

    kind: laplacian | pucci- | pucci+ | lambda | trunc- | trunc+ |
    khessian | ma | isaacs.  For "isaacs", ``base`` names the wrapped
    operator ("trace", "pucci-", "pucci+") or is an arbitrary callable,
    and ``ngrid`` discretises the outer infimum.
    """

    kind: str
    theta: float = 1.0
    Theta: float = 1.0
    k: int = 1
    base: object = "trace"
    ngrid: Optional[NGridSpec] = None

    def __post_init__(self):
        known = ("laplacian", "pucci-", "pucci+", "lambda", "trunc-", "trunc+", "khessian", "ma", "isaacs")
        if self.kind not in known:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.kind in ("pucci-", "pucci+", "isaacs"):
            _check_constants(self.theta, self.Theta)

    def text(self):
        if self.kind in ("pucci-", "pucci+"):
            return f"{self.kind}:theta={self.theta:g},Theta={self.Theta:g}"
        if self.kind in ("lambda", "trunc-", "trunc+", "khessian"):
            return f"{self.kind}:k={self.k}"
        if self.kind == "isaacs":
            g = self.ngrid or NGridSpec(radius=2.0)
            return (
                f"isaacs:base={self.base},theta={self.theta:g},Theta={self.Theta:g},"
                f"R={g.radius:g},m={g.m}"
            )
        return self.kind


def _base_callable(spec: OperatorSpec):
    if callable(spec.base):
        return spec.base
    if spec.base == "trace":
        return _BASES["trace"]
    if spec.base == "pucci-":
        return lambda m: pucci_extremal(m, spec.theta, spec.Theta, "minus")
    if spec.base == "pucci+":
        return lambda m: pucci_extremal(m, spec.theta, spec.Theta, "plus")
    raise ValueError(f"unknown isaacs base {spec.base!r}")


def evaluate(spec: OperatorSpec, m):
    """Evaluate the operator described by ``spec`` at the symmetric matrix ``m``."""
    if spec.kind == "laplacian":
        return float(np.trace(np.asarray(m, dtype=float)))
    if spec.kind == "pucci-":
        return pucci_extremal(m, spec.theta, spec.Theta, "minus")
    if spec.kind == "pucci+":
        return pucci_extremal(m, spec.theta, spec.Theta, "plus")
    if spec.kind == "lambda":
        return lambda_k_value(m, spec.k)
    if spec.kind == "trunc-":
        return truncated_laplacian_value(m, spec.k, "minus")
    if spec.kind == "trunc+":
        return truncated_laplacian_value(m, spec.k, "plus")
    if spec.kind == "khessian":
        return k_hessian_value(m, spec.k)
    if spec.kind == "ma":
        return monge_ampere_value(m)
    if spec.kind == "isaacs":
        mm = m.mat if isinstance(m, SymMatrix) else np.asarray(m, dtype=float)
        grid = spec.ngrid or NGridSpec(radius=2.0 * max(1e-12, float(np.max(np.abs(mm)))))
        return isaacs_wrap_value(_base_callable(spec), mm, spec.theta, spec.Theta, grid)
    raise AssertionError(spec.kind)


def parse_operator(text) -> OperatorSpec:
    """Parse canonical operator text, e.g. ``pucci-:theta=1,Theta=2`` or ``ma``."""
    head, _, rest = text.partition(":")
    kv = {}
    if rest:
        for item in rest.split(","):
            key, sep, v = item.partition("=")
            if not sep:
                raise ValueError(f"malformed operator option {item!r} in {text!r}")
            kv[key.strip()] = v.strip()
    if head in ("laplacian", "ma"):
        return OperatorSpec(head)
    if head in ("pucci-", "pucci+"):
        return OperatorSpec(head, theta=float(kv.get("theta", 1)), Theta=float(kv.get("Theta", 1)))
    if head in ("lambda", "trunc-", "trunc+", "khessian"):
        return OperatorSpec(head, k=int(kv.get("k", 1)))
    if head == "isaacs":
        ngrid = None
        if "R" in kv or "m" in kv:
            ngrid = NGridSpec(
                radius=float(kv.get("R", 2.0)),
                m=int(kv.get("m", 33)),
                basis=kv.get("basis", "diag"),
            )
        return OperatorSpec(
            "isaacs",
            theta=float(kv.get("theta", 1)),
            Theta=float(kv.get("Theta", 1)),
            base=kv.get("base", "trace"),
            ngrid=ngrid,
        )
    raise ValueError(f"unknown operator {text!r}")
