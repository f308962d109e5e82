"""Shared helpers for the test suite.

Random meshes are built by seeded marking rounds so every test run sees
the same sequence.  Helpers here are deliberately small; anything used
as an oracle is reimplemented inside the test module that needs it.
"""

import numpy as np

from overlayfem.mesh import Mesh, BaseMeshSpec, PatchSpec
from overlayfem.basis import Basis, PolynomialOrderField

# Filled by the acceptance module; echoed after the run so the verdict
# lines are visible even under pytest's output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def single_patch(res, bounds=((0.0, 1.0), (0.0, 1.0))):
    if isinstance(res, int):
        res = (res, res)
    spec = BaseMeshSpec(dimension=2, patches=(PatchSpec(bounds=bounds, resolution=res),))
    return Mesh(spec)


def strip_1d(n, length=None):
    hi = float(n if length is None else length)
    spec = BaseMeshSpec(dimension=1, patches=(PatchSpec(bounds=((0.0, hi),), resolution=(n,)),))
    return Mesh(spec)


def random_refined_mesh(rng, max_leaves=1000):
    """Small unit-square mesh refined by random marking rounds."""
    res = int(rng.integers(2, 5))
    mesh = single_patch(res)
    rounds = int(rng.integers(1, 5))
    for _ in range(rounds):
        leaves = mesh.active_leaf_elements()
        if len(leaves) * 4 > max_leaves:
            break
        k = max(1, int(len(leaves) * float(rng.uniform(0.05, 0.3))))
        picked = rng.choice(len(leaves), size=k, replace=False)
        mesh.refine([leaves[i].id for i in picked])
    return mesh


def random_orders(rng, mesh, p_max=4):
    by_level = {lvl: int(rng.integers(1, p_max + 1)) for lvl in range(mesh.max_level() + 1)}
    return PolynomialOrderField(by_level=by_level)


def random_basis(rng, max_leaves=1000, p_max=4):
    mesh = random_refined_mesh(rng, max_leaves=max_leaves)
    return Basis(mesh, random_orders(rng, mesh, p_max=p_max))
