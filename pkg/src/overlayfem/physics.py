"""Poisson operators on the overlay basis: element systems, boundary data,
serial assembly, and energy-norm error measurement.

Element matrices are integrated leaf by leaf with the composed Gauss rules
from :mod:`overlayfem.quadrature`; an embedded domain scales each point by
its indicator factor.  Homogeneous Dirichlet conditions are imposed by
symmetric elimination: the constrained rows and columns are dropped from
the system and restored as zeros in the solution vector.  Inhomogeneous
flux (Neumann) data enters through 1d edge rules on the domain boundary.

The energy-error integrator upgrades every leaf rule by a couple of Gauss
points and, on leaves whose closure holds a declared singular point, peels
dyadic shells toward that corner so the non-smooth remainder is integrated
accurately instead of polluting the measurement.
"""
from __future__ import annotations

import numpy as np
import scipy.integrate
import scipy.sparse
import scipy.sparse.linalg

from .basis import entity_mode_count
from .quadrature import (gauss_cell, gauss_rule_1d, leaf_jacobian,
                         leaf_quadrature, leaf_to_physical)


def element_stiffness(basis, leaf, domain=None, depth=0):
    """Leaf stiffness matrix and its global dof indices.

    Returns (K, gids) with K of shape (n, n) over the active shape
    functions on the leaf, in leaf_dofs order.
    """
    to_phys = leaf_to_physical(leaf)
    jac = leaf_jacobian(leaf)
    n = basis.leaf_mode_count(leaf)
    K = np.zeros((n, n))
    for cell in leaf_quadrature(basis, leaf, domain, depth):
        _, G = basis.evaluate_leaf(leaf, to_phys(cell.points))
        w = cell.weights * cell.alpha * jac
        K += np.einsum("q,qid,qjd->ij", w, G, G)
    return K, basis.leaf_dofs(leaf)


def element_load(basis, leaf, source, domain=None, depth=0):
    """Leaf load vector for a volume source term."""
    to_phys = leaf_to_physical(leaf)
    jac = leaf_jacobian(leaf)
    n = basis.leaf_mode_count(leaf)
    f = np.zeros(n)
    for cell in leaf_quadrature(basis, leaf, domain, depth):
        pts = to_phys(cell.points)
        V, _ = basis.evaluate_leaf(leaf, pts)
        w = cell.weights * cell.alpha * jac
        f += V.T @ (w * np.asarray(source(pts), dtype=float))
    return f


def assemble_serial(basis, domain=None, depth=0, source=None):
    """Global stiffness matrix (CSR) and load vector, one rank."""
    total = basis.dofmap.total
    rows, cols, vals = [], [], []
    f = np.zeros(total)
    for leaf in basis.mesh.active_leaf_elements():
        K, gids = element_stiffness(basis, leaf, domain, depth)
        gi = np.repeat(gids, len(gids))
        gj = np.tile(gids, len(gids))
        rows.append(gi)
        cols.append(gj)
        vals.append(K.ravel())
        if source is not None:
            np.add.at(f, gids, element_load(basis, leaf, source, domain, depth))
    K = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(total, total),
    ).tocsr()
    return K, f


# ----------------------------------------------------------------------
# boundary conditions

_SIDES_2D = ((1, False), (1, True), (0, False), (0, True))  # bottom, top, left, right


def _side_segment(leaf, axis, upper):
    """Physical endpoints of one side of a 2d leaf."""
    lo = np.asarray(leaf.lo_f, dtype=float)
    hi = np.asarray(leaf.hi_f, dtype=float)
    a = lo.copy()
    b = hi.copy()
    if upper:
        a[axis] = hi[axis]
    else:
        b[axis] = lo[axis]
    return a, b


def leaf_flux_load(basis, leaf, flux, part=None):
    """One leaf's boundary-flux load over its active shape functions.

    Only sides on the domain boundary contribute; `part(midpoint)` keeps a
    side when true (default keeps every boundary side), so loads can never
    be smeared onto interface edges.
    """
    mesh = basis.mesh
    if mesh.dimension != 2:
        raise NotImplementedError("flux loads are implemented for 2d meshes")
    q = basis.leaf_quad_order(leaf)
    x1, w1 = gauss_rule_1d(q + 1)
    f = np.zeros(basis.leaf_mode_count(leaf))
    hit = False
    for axis, upper in _SIDES_2D:
        if not mesh.side_on_domain_boundary(leaf, axis, upper):
            continue
        a, b = _side_segment(leaf, axis, upper)
        mid = (a + b) / 2
        if part is not None and not part(mid):
            continue
        normal = np.zeros(2)
        normal[axis] = 1.0 if upper else -1.0
        half = (b - a) / 2
        pts = mid + np.outer(x1, half)
        V, _ = basis.evaluate_leaf(leaf, pts)
        w = w1 * float(np.linalg.norm(half))
        g = np.asarray(flux(pts, normal), dtype=float)
        f += V.T @ (w * g)
        hit = True
    return f if hit else None


def neumann_load(basis, flux, part=None):
    """Boundary load vector from a normal-flux density, all ranks' leaves."""
    f = np.zeros(basis.dofmap.total)
    for leaf in basis.mesh.active_leaf_elements():
        fl = leaf_flux_load(basis, leaf, flux, part)
        if fl is not None:
            np.add.at(f, basis.leaf_dofs(leaf), fl)
    return f


def constrained_dof_mask(basis, on_part):
    """Mask of dofs whose entity lies inside a boundary part.

    Nodes are tested at their point, edges at both endpoints.  Faces and
    element-interior modes vanish on the boundary and are never
    constrained.
    """
    mesh = basis.mesh
    mask = np.zeros(basis.dofmap.total, dtype=bool)
    for ent in basis.dofmap.active_entities:
        if ent.kind == "node":
            hit = bool(on_part(mesh.node_point(ent)))
        elif ent.kind == "edge" and mesh.dimension == 2:
            a, b = mesh.edge_endpoints(ent)
            hit = bool(on_part(a)) and bool(on_part(b))
        else:
            hit = False
        if hit:
            off = basis.dofmap.entity_offset(ent)
            n = entity_mode_count(ent.kind, basis.orders.entity_order(ent))
            mask[off:off + n] = True
    return mask


class DirichletMap:
    """Homogeneous Dirichlet constraints as an index reduction."""

    def __init__(self, basis, on_part):
        self.mask = constrained_dof_mask(basis, on_part)
        self.free = np.flatnonzero(~self.mask)
        self.total = basis.dofmap.total

    @property
    def n_free(self):
        return self.free.size

    @property
    def n_constrained(self):
        return self.total - self.free.size

    def reduce(self, K, f=None):
        Kff = K[self.free][:, self.free].tocsr()
        if f is None:
            return Kff
        return Kff, f[self.free]

    def expand(self, u_free):
        u = np.zeros(self.total)
        u[self.free] = u_free
        return u


def solve_dirichlet(basis, dirichlet, domain=None, depth=0, source=None,
                    flux=None, flux_part=None):
    """Assemble and solve one Poisson problem serially, direct solver."""
    K, f = assemble_serial(basis, domain, depth, source)
    if flux is not None:
        f = f + neumann_load(basis, flux, flux_part)
    Kff, ff = dirichlet.reduce(K, f)
    u_free = scipy.sparse.linalg.spsolve(Kff.tocsc(), ff)
    return dirichlet.expand(u_free)


# ----------------------------------------------------------------------
# the singular corner benchmark

class LShapeSolution:
    """Harmonic r^(2/3) corner field on the three-quadrant domain.

    The angle is measured from the positive x axis and runs through the
    upper half plane into the lower-left quadrant, so it covers
    [0, 3*pi/2] with the field vanishing on both legs of the re-entrant
    corner (positive x axis and negative y axis).
    """

    singular_point = (0.0, 0.0)

    @staticmethod
    def _polar(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        r = np.hypot(x, y)
        th = np.arctan2(y, x)
        th = np.where(th < 0, th + 2 * np.pi, th)
        return x, y, r, th

    def value(self, points):
        _, _, r, th = self._polar(points)
        return r ** (2.0 / 3.0) * np.sin(2.0 * th / 3.0)

    def gradient(self, points):
        x, y, r, th = self._polar(points)
        s = np.sin(2.0 * th / 3.0)
        c = np.cos(2.0 * th / 3.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = (2.0 / 3.0) * r ** (-4.0 / 3.0)
            gx = scale * (x * s - y * c)
            gy = scale * (y * s + x * c)
        out = np.column_stack((gx, gy))
        return np.where(np.isfinite(out), out, 0.0)

    def flux(self, points, normal):
        return self.gradient(points) @ np.asarray(normal, dtype=float)

    @staticmethod
    def on_dirichlet_legs(point, tol=1e-12):
        x, y = float(point[0]), float(point[1])
        return (abs(y) <= tol and x >= -tol) or (abs(x) <= tol and y <= tol)

    def energy_squared(self):
        """Exact squared energy norm over the L-shaped domain.

        The squared gradient is (4/9) r^(-2/3); integrating in polar
        coordinates collapses the domain into six identical wedges of a
        sec(theta) boundary, leaving a smooth 1d integral.
        """
        val, _ = scipy.integrate.quad(
            lambda t: np.cos(t) ** (-4.0 / 3.0), 0.0, np.pi / 4.0
        )
        return 2.0 * val


def _corner_shells(corner, levels):
    """Dyadic boxes of [-1,1]^2 graded toward one of its vertices.

    Peels the three co-corner quadrants at every scale and finishes with
    the innermost corner box, whose leftover is far below solver noise.
    """
    cx, cy = corner
    boxes = []
    lo = np.array([-1.0, -1.0])
    hi = np.array([1.0, 1.0])
    for _ in range(levels):
        mid = (lo + hi) / 2
        qlo = np.array([lo[0] if cx < 0 else mid[0], lo[1] if cy < 0 else mid[1]])
        qhi = np.array([mid[0] if cx < 0 else hi[0], mid[1] if cy < 0 else hi[1]])
        for ix in range(2):
            for iy in range(2):
                blo = np.array([lo[0] if ix == 0 else mid[0],
                                lo[1] if iy == 0 else mid[1]])
                bhi = np.array([mid[0] if ix == 0 else hi[0],
                                mid[1] if iy == 0 else hi[1]])
                if np.allclose(blo, qlo) and np.allclose(bhi, qhi):
                    continue
                boxes.append((blo, bhi))
        lo, hi = qlo, qhi
    boxes.append((lo, hi))
    return boxes


def energy_error(basis, coefficients, exact_gradient, singular_point=None,
                 extra_order=2, corner_levels=40, domain=None, depth=0):
    """Energy-norm distance between a coefficient vector and a reference.

    Every leaf is re-integrated at its rule order plus `extra_order`.
    Leaves whose closure contains `singular_point` swap the single rule
    for dyadic corner shells, which keeps the r^(2/3)-type remainder from
    dominating the quadrature error.
    """
    mesh = basis.mesh
    coefficients = np.asarray(coefficients, dtype=float)
    acc = 0.0
    sp = None if singular_point is None else np.asarray(singular_point, dtype=float)
    for leaf in mesh.active_leaf_elements():
        q = basis.leaf_quad_order(leaf) + extra_order
        lo = np.asarray(leaf.lo_f, dtype=float)
        hi = np.asarray(leaf.hi_f, dtype=float)
        singular = sp is not None and bool(np.all((lo <= sp) & (sp <= hi)))
        jac = leaf_jacobian(leaf)
        to_phys = leaf_to_physical(leaf)
        if singular:
            # reference coordinates of the singular corner: one of the vertices
            ref = 2 * (sp - lo) / (hi - lo) - 1
            corner = np.where(ref >= 0, 1.0, -1.0)
            cells = [gauss_cell(blo, bhi, q)
                     for blo, bhi in _corner_shells(corner, corner_levels)]
        elif domain is not None:
            cells = leaf_quadrature(basis, leaf, domain, depth, order=q)
        else:
            cells = [gauss_cell(-np.ones(2), np.ones(2), q)]
        gids = basis.leaf_dofs(leaf)
        coef = coefficients[gids]
        for cell in cells:
            pts = to_phys(cell.points)
            _, G = basis.evaluate_leaf(leaf, pts)
            gh = np.einsum("qid,i->qd", G, coef)
            diff = gh - np.asarray(exact_gradient(pts), dtype=float)
            if singular and domain is not None:
                w = cell.weights * jac * domain.alpha(pts)
            else:
                w = cell.weights * jac * cell.alpha
            acc += float(np.einsum("q,qd,qd->", w, diff, diff))
    return float(np.sqrt(acc))
