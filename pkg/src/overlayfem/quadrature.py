"""Composed Gauss quadrature over leaf footprints, plus embedded domains.

Every active leaf is integrated in its own reference square with a
tensor-product Gauss-Legendre rule whose per-axis order is one above the
highest polynomial order contributing on that leaf.  Seen from a base
element this composes into one sub-rule per leaf footprint, which is what
``integration_domains`` enumerates.

Geometries that do not fit the mesh are handled with an indicator factor:
quadrature cells fully inside the physical region keep weight factor one,
cells fully in the fictitious remainder get a small epsilon, and cut cells
subdivide into 2**d children up to a fixed depth, after which each Gauss
point is classified individually.  Geometry is a small CSG tree of
half-planes, disks and rectangles, also loadable from JSON.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_rule_1d(q):
    """Gauss-Legendre points and weights on [-1, 1], exact to degree 2q-1."""
    if q < 1:
        raise ValueError(f"quadrature order must be >= 1, got {q}")
    x, w = np.polynomial.legendre.leggauss(q)
    return x, w


def gauss_cell(lo, hi, order, alpha=None):
    """Tensor Gauss rule on an axis box; weights sum to the box measure."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    d = lo.size
    x1, w1 = gauss_rule_1d(order)
    if d == 1:
        pts = (lo[0] + hi[0]) / 2 + (hi[0] - lo[0]) / 2 * x1
        pts = pts[:, None]
        wts = w1 * (hi[0] - lo[0]) / 2
    else:
        xa = (lo[0] + hi[0]) / 2 + (hi[0] - lo[0]) / 2 * x1
        ya = (lo[1] + hi[1]) / 2 + (hi[1] - lo[1]) / 2 * x1
        X, Y = np.meshgrid(xa, ya, indexing="ij")
        pts = np.column_stack((X.ravel(), Y.ravel()))
        WX, WY = np.meshgrid(w1 * (hi[0] - lo[0]) / 2, w1 * (hi[1] - lo[1]) / 2,
                             indexing="ij")
        wts = (WX * WY).ravel()
    if alpha is None:
        alpha = np.ones(len(wts))
    return QuadratureCell(lo, hi, pts, wts, alpha)


@dataclass
class QuadratureCell:
    """Points, weights and indicator values on one axis-aligned box."""

    lo: np.ndarray
    hi: np.ndarray
    points: np.ndarray   # (n, d)
    weights: np.ndarray  # (n,)
    alpha: np.ndarray    # (n,) indicator factor per point


@dataclass
class IntegrationDomain:
    """One leaf footprint inside its base element's reference square."""

    base_id: int
    leaf_id: int
    lo_ref: np.ndarray
    hi_ref: np.ndarray
    order: int


def integration_domains(mesh, basis, base_elem):
    """The composed-rule boxes of one base element, leaf order."""
    if base_elem.parent is not None:
        raise ValueError("integration domains are rooted at base elements")
    d = mesh.dimension
    out = []
    stack = [base_elem]
    while stack:
        elem = stack.pop()
        if elem.children:
            stack.extend(reversed(elem.children))
            continue
        shift = 1 << elem.level
        lo_ref = np.empty(d)
        hi_ref = np.empty(d)
        for a in range(d):
            width = (base_elem.hi[a] - base_elem.lo[a]) * shift
            lo_ref[a] = 2.0 * (elem.lo[a] - base_elem.lo[a] * shift) / width - 1.0
            hi_ref[a] = 2.0 * (elem.hi[a] - base_elem.lo[a] * shift) / width - 1.0
        out.append(IntegrationDomain(
            base_elem.id, elem.id, lo_ref, hi_ref, basis.leaf_quad_order(elem)
        ))
    return out


# ----------------------------------------------------------------------
# CSG geometry

class Geometry:
    def contains(self, points):
        raise NotImplementedError


@dataclass(frozen=True)
class HalfPlane(Geometry):
    """Points with normal . x <= offset."""

    normal: tuple
    offset: float

    def contains(self, points):
        n = np.asarray(self.normal, dtype=float)
        return np.asarray(points) @ n <= self.offset


@dataclass(frozen=True)
class Disk(Geometry):
    center: tuple
    radius: float

    def contains(self, points):
        diff = np.asarray(points) - np.asarray(self.center, dtype=float)
        return np.einsum("ij,ij->i", diff, diff) <= self.radius ** 2


@dataclass(frozen=True)
class Rect(Geometry):
    lo: tuple
    hi: tuple

    def contains(self, points):
        pts = np.asarray(points)
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        return np.all((pts >= lo) & (pts <= hi), axis=1)


@dataclass(frozen=True)
class Union(Geometry):
    parts: tuple

    def contains(self, points):
        out = self.parts[0].contains(points)
        for g in self.parts[1:]:
            out = out | g.contains(points)
        return out


@dataclass(frozen=True)
class Intersection(Geometry):
    parts: tuple

    def contains(self, points):
        out = self.parts[0].contains(points)
        for g in self.parts[1:]:
            out = out & g.contains(points)
        return out


@dataclass(frozen=True)
class Difference(Geometry):
    """First part minus the union of the rest."""

    parts: tuple

    def contains(self, points):
        out = self.parts[0].contains(points)
        for g in self.parts[1:]:
            out = out & ~g.contains(points)
        return out


@dataclass(frozen=True)
class Complement(Geometry):
    part: Geometry

    def contains(self, points):
        return ~self.part.contains(points)


def geometry_from_json(obj):
    """Build a CSG tree from its JSON form.

    Primitives: {"primitive": "halfplane", "normal": [...], "offset": c},
    {"primitive": "disk", "center": [...], "radius": r},
    {"primitive": "rect", "lo": [...], "hi": [...]}.
    Operators: {"op": "union" | "intersect" | "subtract" | "complement",
    "args": [...]}.
    """
    if "primitive" in obj:
        kind = obj["primitive"]
        if kind == "halfplane":
            return HalfPlane(tuple(obj["normal"]), float(obj["offset"]))
        if kind == "disk":
            return Disk(tuple(obj["center"]), float(obj["radius"]))
        if kind == "rect":
            return Rect(tuple(obj["lo"]), tuple(obj["hi"]))
        raise ValueError(f"unknown geometry primitive {kind!r}")
    if "op" in obj:
        op = obj["op"]
        args = tuple(geometry_from_json(a) for a in obj.get("args", ()))
        if not args:
            raise ValueError(f"geometry op {op!r} needs arguments")
        if op == "union":
            return Union(args)
        if op == "intersect":
            return Intersection(args)
        if op == "subtract":
            return Difference(args)
        if op == "complement":
            if len(args) != 1:
                raise ValueError("complement takes exactly one argument")
            return Complement(args[0])
        raise ValueError(f"unknown geometry op {op!r}")
    raise ValueError("geometry JSON needs a 'primitive' or an 'op' key")


@dataclass(frozen=True)
class EmbeddedDomain:
    """A CSG region plus the indicator floor used outside of it."""

    geometry: Geometry
    epsilon: float = 1e-8

    def contains(self, points):
        return self.geometry.contains(points)

    def alpha(self, points):
        inside = self.geometry.contains(np.atleast_2d(points))
        return np.where(inside, 1.0, self.epsilon)


# ----------------------------------------------------------------------
# spacetree subdivision of cut cells

def spacetree_cells(lo, hi, domain, depth, order, to_physical=None):
    """Quadrature cells for a box crossed by an embedded boundary.

    The box is classified by sampling its corners and its Gauss points
    (mapped through `to_physical` when the box is a reference frame).
    Uniform boxes become a single cell with constant indicator; cut boxes
    split into 2**d children until `depth`, where the indicator is applied
    per Gauss point.
    """
    if depth < 0:
        raise ValueError("spacetree depth must be >= 0")
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    d = lo.size
    ident = to_physical is None
    eps = domain.epsilon

    def corners(l, h):
        if d == 1:
            return np.array([[l[0]], [h[0]]])
        return np.array([[l[0], l[1]], [h[0], l[1]], [l[0], h[1]], [h[0], h[1]]])

    out = []

    def visit(l, h, remaining):
        cell = gauss_cell(l, h, order)
        sample = np.vstack((corners(l, h), cell.points))
        phys = sample if ident else to_physical(sample)
        inside = domain.contains(phys)
        if inside.all():
            out.append(cell)
            return
        if not inside.any():
            out.append(QuadratureCell(l, h, cell.points, cell.weights,
                                      np.full(len(cell.weights), eps)))
            return
        if remaining == 0:
            pts_phys = cell.points if ident else to_physical(cell.points)
            alpha = np.where(domain.contains(pts_phys), 1.0, eps)
            out.append(QuadratureCell(l, h, cell.points, cell.weights, alpha))
            return
        mid = (l + h) / 2
        if d == 1:
            visit(l, mid, remaining - 1)
            visit(mid, h, remaining - 1)
        else:
            visit(l, mid, remaining - 1)
            visit(np.array([mid[0], l[1]]), np.array([h[0], mid[1]]), remaining - 1)
            visit(np.array([l[0], mid[1]]), np.array([mid[0], h[1]]), remaining - 1)
            visit(mid, h, remaining - 1)

    visit(lo, hi, depth)
    return out


def leaf_to_physical(leaf):
    """Affine map from the leaf's [-1, 1]^d reference box to physical space."""
    lo = np.asarray(leaf.lo_f, dtype=float)
    hi = np.asarray(leaf.hi_f, dtype=float)
    half = (hi - lo) / 2
    mid = (hi + lo) / 2

    def to_physical(points):
        return mid + np.atleast_2d(points) * half

    return to_physical


def leaf_jacobian(leaf):
    """Measure factor of the reference-to-physical map."""
    lo = np.asarray(leaf.lo_f, dtype=float)
    hi = np.asarray(leaf.hi_f, dtype=float)
    return float(np.prod((hi - lo) / 2))


def leaf_quadrature(basis, leaf, domain=None, depth=0, order=None):
    """Quadrature cells of one leaf, in the leaf's reference frame."""
    d = basis.mesh.dimension
    if order is None:
        order = basis.leaf_quad_order(leaf)
    lo = -np.ones(d)
    hi = np.ones(d)
    if domain is None:
        return [gauss_cell(lo, hi, order)]
    return spacetree_cells(lo, hi, domain, depth, order,
                           to_physical=leaf_to_physical(leaf))


def leaf_point_count(basis, leaf, domain=None, depth=0):
    """Number of Gauss points the leaf will be integrated with."""
    if domain is None:
        return basis.leaf_quad_order(leaf) ** basis.mesh.dimension
    return sum(len(c.weights) for c in leaf_quadrature(basis, leaf, domain, depth))


def indicator_area(basis, domain, depth):
    """Measure of the physical region as seen by the composed rules."""
    total = 0.0
    for leaf in basis.mesh.active_leaf_elements():
        jac = leaf_jacobian(leaf)
        for cell in leaf_quadrature(basis, leaf, domain, depth):
            total += jac * float(cell.weights[cell.alpha == 1.0].sum())
    return total
