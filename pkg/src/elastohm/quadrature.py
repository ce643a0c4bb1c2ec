"""Quadrature rules on the reference triangle and for singular triangle pairs.

The reference triangle is ``{(x1, x2): 0 <= x2 <= x1 <= 1}`` with area 1/2.  A
physical triangle with vertices ``(P0, P1, P2)`` is parametrised as

    chi(x) = P0 + x1 (P1 - P0) + x2 (P2 - P1),

so the reference vertices (0,0), (1,0), (1,1) map to P0, P1, P2 and the
Jacobian is twice the physical area.  Barycentric weights of a reference
point with respect to (P0, P1, P2) are ``(1 - x1, x1 - x2, x2)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

__all__ = [
    "QuadratureRule",
    "gauss_rule",
    "supported_orders",
    "gauss_legendre_01",
    "SingularRule",
    "sauter_schwab",
    "barycentric",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Points (reference coordinates) and positive weights summing to 1/2."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    def __len__(self) -> int:
        return len(self.weights)


def gauss_legendre_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _from_barycentric(lam: np.ndarray) -> np.ndarray:
    # lam = (1 - x1, x1 - x2, x2)
    x2 = lam[:, 2]
    x1 = lam[:, 1] + x2
    return np.column_stack([x1, x2])


def _symmetric_orbits(orbits: list[tuple[tuple[float, float, float], float]]) -> tuple[np.ndarray, np.ndarray]:
    pts, wts = [], []
    for (a, b, c), w in orbits:
        seen = set()
        for perm in ((a, b, c), (b, c, a), (c, a, b), (a, c, b), (c, b, a), (b, a, c)):
            key = tuple(round(v, 15) for v in perm)
            if key in seen:
                continue
            seen.add(key)
            pts.append(perm)
            wts.append(w)
    lam = np.array(pts)
    return _from_barycentric(lam), 0.5 * np.array(wts)


# Symmetric rules given as barycentric orbits with weights normalised to 1.
_DUNAVANT = {
    1: [((1 / 3, 1 / 3, 1 / 3), 1.0)],
    2: [((2 / 3, 1 / 6, 1 / 6), 1 / 3)],
    4: [
        ((0.108103018168070, 0.445948490915965, 0.445948490915965), 0.223381589678011),
        ((0.816847572980459, 0.091576213509771, 0.091576213509771), 0.109951743655322),
    ],
    5: [
        ((1 / 3, 1 / 3, 1 / 3), 0.225),
        ((0.059715871789770, 0.470142064105115, 0.470142064105115), 0.132394152788506),
        ((0.797426985353087, 0.101286507323456, 0.101286507323456), 0.125939180544827),
    ],
    6: [
        ((0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379),
        ((0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207),
        ((0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374),
    ],
    8: [
        ((1 / 3, 1 / 3, 1 / 3), 0.144315607677787),
        ((0.081414823414554, 0.459292588292723, 0.459292588292723), 0.095091634267285),
        ((0.658861384496480, 0.170569307751760, 0.170569307751760), 0.103217370534718),
        ((0.898905543365938, 0.050547228317031, 0.050547228317031), 0.032458497623198),
        ((0.008394777409958, 0.263112829634638, 0.728492392955404), 0.027230314174435),
    ],
}

_MAX_ORDER = 30


def supported_orders() -> tuple[int, ...]:
    return tuple(range(1, _MAX_ORDER + 1))


@lru_cache(maxsize=None)
def gauss_rule(order: int) -> QuadratureRule:
    """Triangle rule exact for polynomials of total degree ``order``.

    Orders 1, 2, 4, 5, 6 and 8 use classical symmetric rules (1, 3, 6, 7, 12
    and 16 points); order 3 uses the 6-point degree-4 rule and order 7 the
    16-point degree-8 rule; the remaining orders use the
    collapsed (Duffy) product of Gauss-Legendre rules, which keeps all
    weights positive.
    """
    if not isinstance(order, (int, np.integer)) or order < 1 or order > _MAX_ORDER:
        raise ValueError(f"unsupported quadrature order {order!r}; supported 1..{_MAX_ORDER}")
    order = int(order)
    if order in (3, 7):
        base = gauss_rule(order + 1)
        return QuadratureRule(base.points, base.weights, order)
    if order in _DUNAVANT:
        pts, wts = _symmetric_orbits(_DUNAVANT[order])
        return QuadratureRule(pts, wts, order)
    # degree d in (x1, x2) becomes degree d + 1 in the collapsed variable
    n = (order + 2) // 2 + 1
    u, wu = gauss_legendre_01(n)
    v, wv = gauss_legendre_01(n)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv) * U
    pts = np.column_stack([U.ravel(), (U * V).ravel()])
    return QuadratureRule(pts, W.ravel(), order)


def barycentric(ref: np.ndarray) -> np.ndarray:
    """Barycentric weights ``(1 - x1, x1 - x2, x2)`` of reference points."""
    ref = np.asarray(ref)
    return np.stack([1.0 - ref[..., 0], ref[..., 0] - ref[..., 1], ref[..., 1]], axis=-1)


@dataclass(frozen=True)
class SingularRule:
    """A 4D rule over pairs of reference points for one adjacency case.

    ``x`` and ``y`` have shape (n, 2) and ``w`` shape (n,); the rule integrates
    ``f(x, y)`` over the product of two reference triangles.
    """

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray


def _cube_points(n: int, n_xi: int):
    g, wg = gauss_legendre_01(n)
    r, wr = gauss_legendre_01(n_xi)
    grids = np.meshgrid(r, g, g, g, indexing="ij")
    wgrid = np.einsum("i,j,k,l->ijkl", wr, wg, wg, wg)
    xi, e1, e2, e3 = (a.ravel() for a in grids)
    return xi, e1, e2, e3, wgrid.ravel()


@lru_cache(maxsize=None)
def sauter_schwab(case: str, n: int, n_xi: Optional[int] = None) -> SingularRule:
    """Relative-coordinate rules for coincident, edge- and vertex-adjacent pairs.

    ``n`` Gauss-Legendre points are used in each angular direction and
    ``n_xi`` (default ``n``) in the radial one.  On flat triangles ``x - y``
    is homogeneous of degree one in the radial variable, so for homogeneous
    kernels the integrand is a low-degree polynomial there and few radial
    points are exact.

    Conventions: for ``"edge"`` both triangles are parametrised so that the
    shared edge is chi((0,0))-chi((1,0)) with the same orientation; for
    ``"vertex"`` the shared vertex is chi((0,0)) in both.
    """
    if n < 1 or (n_xi is not None and n_xi < 1):
        raise ValueError("point counts must be >= 1")
    xi, e1, e2, e3, w = _cube_points(n, n if n_xi is None else n_xi)
    xs, ys, ws = [], [], []

    def add(x1, x2, y1, y2, weight):
        xs.append(np.column_stack([x1, x2]))
        ys.append(np.column_stack([y1, y2]))
        ws.append(weight)

    if case == "coincident":
        jac = w * xi**3 * e1**2 * e2
        a = xi * (1 - e1 + e1 * e2)
        b = xi * (1 - e1 * e2 * e3)
        c = xi * (1 - e1)
        add(xi, a, b, c, jac)
        add(b, c, xi, a, jac)
        d = xi * e1 * (1 - e2 + e2 * e3)
        f = xi * (1 - e1 * e2)
        g = xi * e1 * (1 - e2)
        add(xi, d, f, g, jac)
        add(f, g, xi, d, jac)
        h = xi * e1 * (1 - e2 * e3)
        add(b, h, xi, g, jac)
        add(xi, g, b, h, jac)
    elif case == "edge":
        base = w * xi**3 * e1**2
        add(xi, xi * e1 * e3, xi * (1 - e1 * e2), xi * e1 * (1 - e2), base)
        jac = base * e2
        add(xi, xi * e1, xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3), jac)
        add(xi * (1 - e1 * e2), xi * e1 * (1 - e2), xi, xi * e1 * e2 * e3, jac)
        add(xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3), xi, xi * e1, jac)
        add(xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3), xi, xi * e1 * e2, jac)
    elif case == "vertex":
        jac = w * xi**3 * e2
        add(xi, xi * e1, xi * e2, xi * e2 * e3, jac)
        add(xi * e2, xi * e2 * e3, xi, xi * e1, jac)
    else:
        raise ValueError(f"unknown adjacency case {case!r}")
    return SingularRule(np.concatenate(xs), np.concatenate(ys), np.concatenate(ws))
