"""Benchmark definitions and study drivers behind the command-line tool.

Three problem families are wired up:

* ``lshape`` -- the singular corner benchmark on three unit quadrants,
  driven by the exact harmonic r^(2/3) field; energy errors are measured
  against it.
* ``fcm_disk`` -- a quarter disk embedded in the unit square; the mesh
  does not fit the arc, the spacetree does the resolving, and the column
  usually holding the energy error reports the quadrature area error
  against pi/4.
* ``custom`` -- user-supplied patches plus an optional CSG geometry from
  the config file.

Marking rules produce the per-step refinement sets: ``corner`` is the
fixed three-leaf rule at a singular vertex, ``ball`` grades every leaf
within a shrinking radius, ``interface`` targets leaves cut by the
embedded boundary, ``random`` picks seeded random leaves, and ``none``
freezes the mesh.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .basis import Basis, PolynomialOrderField
from .mesh import BaseMeshSpec, PatchSpec, create_base_mesh, export_mesh_xml
from .partition import compute_leaf_weights
from .physics import LShapeSolution, energy_error
from .quadrature import Disk, EmbeddedDomain, geometry_from_json, indicator_area

PARTITIONER_CHOICES = ("contiguous", "sfc", "graph")
DOF_DIST_CHOICES = ("contiguous", "graph")
BENCHMARK_CHOICES = ("lshape", "fcm_disk", "custom")
MARKING_CHOICES = ("corner", "ball", "interface", "random", "none")


@dataclass
class RunConfig:
    """Everything one benchmark run depends on, JSON-loadable."""

    benchmark: str = "lshape"
    res: int = 16
    steps: int = 5
    p: int = 2
    p_graded: dict | None = None
    ranks: int = 4
    partitioner: str = "sfc"
    dof_dist: str = "graph"
    epsilon: float = 1e-8
    depth: int = 4
    tol: float = 1e-10
    out: str = "out"
    dry_run: bool = False
    seed: int = 0
    workers: int = 1
    marking: str | None = None
    probe: int = 33
    patches: list | None = None
    geometry: dict | None = None
    dirichlet_boxes: list | None = None

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def merged(self, overrides):
        """New config with the non-None overrides applied on top."""
        data = dataclasses.asdict(self)
        for key, val in overrides.items():
            if val is not None:
                data[key] = val
        return RunConfig.from_dict(data)

    def validate(self):
        if self.benchmark not in BENCHMARK_CHOICES:
            raise ValueError(f"benchmark must be one of {BENCHMARK_CHOICES}")
        if self.partitioner not in PARTITIONER_CHOICES:
            raise ValueError(f"partitioner must be one of {PARTITIONER_CHOICES}")
        if self.dof_dist not in DOF_DIST_CHOICES:
            raise ValueError(f"dof-dist must be one of {DOF_DIST_CHOICES}")
        if self.marking is not None and self.marking not in MARKING_CHOICES:
            raise ValueError(f"marking must be one of {MARKING_CHOICES}")
        if self.res < 1:
            raise ValueError("res must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.p < 1:
            raise ValueError("p must be positive")
        if self.p_graded is not None:
            for lvl, p in self.p_graded.items():
                if int(p) < 1:
                    raise ValueError(f"graded order at level {lvl} must be positive")
        if self.ranks < 1:
            raise ValueError("ranks must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.benchmark == "fcm_disk" and not self.dry_run and self.epsilon <= 0:
            raise ValueError("a solve on an embedded domain needs epsilon > 0 "
                             "(epsilon=0 is for pure quadrature studies)")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if self.probe < 2:
            raise ValueError("probe grid needs at least 2 points per axis")
        if self.benchmark == "custom" and not self.patches:
            raise ValueError("custom benchmark needs a 'patches' list in the config")
        return self

    def order_field(self):
        if self.p_graded is not None:
            return PolynomialOrderField(
                by_level={int(k): int(v) for k, v in self.p_graded.items()})
        return PolynomialOrderField(uniform=self.p)

    def effective_marking(self):
        if self.marking is not None:
            return self.marking
        return {"lshape": "corner", "fcm_disk": "interface",
                "custom": "none"}[self.benchmark]


# ----------------------------------------------------------------------
# problems

def lshape_mesh_spec(res):
    """Three unit quadrants around the re-entrant corner at the origin."""
    return BaseMeshSpec(2, [
        PatchSpec(((0, 1), (0, 1)), (res, res)),
        PatchSpec(((-1, 0), (0, 1)), (res, res)),
        PatchSpec(((-1, 0), (-1, 0)), (res, res)),
    ])


def lshape_dirichlet(point):
    return LShapeSolution.on_dirichlet_legs(point)


def lshape_neumann_part(midpoint):
    return not LShapeSolution.on_dirichlet_legs(midpoint)


def fcm_disk_dirichlet(point, tol=1e-12):
    return abs(float(point[0])) <= tol or abs(float(point[1])) <= tol


def unit_source(points):
    return np.ones(len(np.atleast_2d(points)))


@dataclass
class BoxBoundary:
    """Predicate: point on the boundary of an axis box (picklable)."""

    lo: tuple
    hi: tuple
    tol: float = 1e-12

    def __call__(self, point):
        pt = np.asarray(point, dtype=float)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        if np.any(pt < lo - self.tol) or np.any(pt > hi + self.tol):
            return False
        return bool(np.any(np.abs(pt - lo) <= self.tol)
                    or np.any(np.abs(pt - hi) <= self.tol))


@dataclass
class InBoxes:
    """Predicate: point inside any of a list of closed boxes (picklable)."""

    boxes: tuple
    tol: float = 1e-12

    def __call__(self, point):
        pt = np.asarray(point, dtype=float)
        for lo, hi in self.boxes:
            if np.all(pt >= np.asarray(lo) - self.tol) and \
                    np.all(pt <= np.asarray(hi) + self.tol):
                return True
        return False


@dataclass
class Problem:
    name: str
    mesh_spec: BaseMeshSpec
    dirichlet_part: object
    source: object = None
    flux: object = None
    flux_part: object = None
    domain: EmbeddedDomain | None = None
    depth: int = 0
    exact: object = None
    singular_point: tuple | None = None


def make_problem(config):
    config.validate()
    if config.benchmark == "lshape":
        exact = LShapeSolution()
        return Problem(
            name="lshape",
            mesh_spec=lshape_mesh_spec(config.res),
            dirichlet_part=lshape_dirichlet,
            flux=exact.flux,
            flux_part=lshape_neumann_part,
            exact=exact,
            singular_point=(0.0, 0.0),
        )
    if config.benchmark == "fcm_disk":
        domain = EmbeddedDomain(Disk((0.0, 0.0), 1.0), epsilon=config.epsilon)
        return Problem(
            name="fcm_disk",
            mesh_spec=BaseMeshSpec(2, [PatchSpec(((0, 1), (0, 1)),
                                                 (config.res, config.res))]),
            dirichlet_part=fcm_disk_dirichlet,
            source=unit_source,
            domain=domain,
            depth=config.depth,
        )
    # custom
    patches = [PatchSpec(tuple(map(tuple, p["bounds"])),
                         tuple(p["resolution"])) for p in config.patches]
    spec = BaseMeshSpec(2, patches)
    domain = None
    if config.geometry is not None:
        domain = EmbeddedDomain(geometry_from_json(config.geometry),
                                epsilon=config.epsilon)
    if config.dirichlet_boxes:
        part = InBoxes(tuple((tuple(b[0]), tuple(b[1]))
                             for b in config.dirichlet_boxes))
    else:
        lo = np.min([[b[0] for b in p.bounds] for p in patches], axis=0)
        hi = np.max([[b[1] for b in p.bounds] for p in patches], axis=0)
        part = BoxBoundary(tuple(lo), tuple(hi))
    return Problem(
        name="custom",
        mesh_spec=spec,
        dirichlet_part=part,
        source=unit_source,
        domain=domain,
        depth=config.depth if domain is not None else 0,
    )


# ----------------------------------------------------------------------
# marking rules

def mark_corner_leaves(mesh, point):
    """Active leaves whose closure contains the point."""
    pt = np.asarray(point, dtype=float)
    out = []
    for leaf in mesh.active_leaf_elements():
        lo = np.asarray(leaf.lo_f)
        hi = np.asarray(leaf.hi_f)
        if np.all(lo <= pt) and np.all(pt <= hi):
            out.append(leaf.id)
    return out


def mark_ball_leaves(mesh, center, radius):
    """Active leaves whose closure meets the closed ball."""
    c = np.asarray(center, dtype=float)
    out = []
    for leaf in mesh.active_leaf_elements():
        lo = np.asarray(leaf.lo_f)
        hi = np.asarray(leaf.hi_f)
        gap = np.maximum(np.maximum(lo - c, c - hi), 0.0)
        if float(np.sqrt(np.sum(gap * gap))) <= radius:
            out.append(leaf.id)
    return out


def mark_interface_leaves(mesh, domain):
    """Active leaves whose box is cut by the embedded boundary.

    Classified on a 3x3 corner/midpoint/center stencil, which is enough
    for boundaries that are not thinner than a leaf.
    """
    out = []
    for leaf in mesh.active_leaf_elements():
        lo = np.asarray(leaf.lo_f)
        hi = np.asarray(leaf.hi_f)
        xs = np.linspace(lo[0], hi[0], 3)
        ys = np.linspace(lo[1], hi[1], 3)
        X, Y = np.meshgrid(xs, ys)
        inside = domain.contains(np.column_stack((X.ravel(), Y.ravel())))
        if inside.any() and not inside.all():
            out.append(leaf.id)
    return out


def mark_random_leaves(mesh, rng, fraction=0.1):
    """A seeded random subset of the active leaves (at least one)."""
    leaves = mesh.active_leaf_elements()
    count = max(1, int(round(fraction * len(leaves))))
    idx = rng.choice(len(leaves), size=count, replace=False)
    return [leaves[i].id for i in sorted(idx)]


def marks_for_step(problem, marking, mesh, step, rng):
    """Refinement set before solving step `step` (none at step 0)."""
    if step == 0 or marking == "none":
        return None
    if marking == "corner":
        if problem.singular_point is None:
            raise ValueError("corner marking needs a singular point")
        return mark_corner_leaves(mesh, problem.singular_point)
    if marking == "ball":
        if problem.singular_point is None:
            raise ValueError("ball marking needs a singular point")
        return mark_ball_leaves(mesh, problem.singular_point, 2.0 ** (1 - step))
    if marking == "interface":
        if problem.domain is None:
            raise ValueError("interface marking needs an embedded geometry")
        return mark_interface_leaves(mesh, problem.domain)
    if marking == "random":
        return mark_random_leaves(mesh, rng)
    raise ValueError(f"unknown marking rule {marking!r}")


# ----------------------------------------------------------------------
# study drivers

def step_error(problem, config, basis, solution):
    """The convergence-table error of one step, or nan when undefined."""
    if problem.exact is not None:
        return energy_error(basis, solution, problem.exact.gradient,
                            singular_point=problem.singular_point,
                            domain=problem.domain, depth=problem.depth)
    if problem.name == "fcm_disk":
        area = indicator_area(basis, problem.domain, problem.depth)
        return abs(area - math.pi / 4)
    return float("nan")


def run_benchmark(config):
    """Drive the configured pipeline; returns (step_dicts, final_state).

    final_state is None for dry runs, else a dict with the mesh, basis,
    solution, leaf ranks, and normalized leaf weights of the last step.
    """
    from .distributed import run_step
    from .partition import partition_leaves

    config.validate()
    problem = make_problem(config)
    marking = config.effective_marking()
    rng = np.random.default_rng(config.seed)
    orders = config.order_field()
    mesh = create_base_mesh(problem.mesh_spec)

    steps = []
    final = None
    for step in range(config.steps + 1):
        marks = marks_for_step(problem, marking, mesh, step, rng)
        if config.dry_run:
            if marks:
                mesh.refine(marks)
            basis = Basis(mesh, orders)
            steps.append({
                "step": step,
                "leaves": len(mesh.active_leaf_elements()),
                "dofs": basis.dofmap.total,
                "dry_run": True,
            })
            continue
        report, basis, solution = run_step(
            mesh, orders, config.ranks, problem.dirichlet_part, marks=marks,
            partitioner=config.partitioner, dof_distribution=config.dof_dist,
            domain=problem.domain, depth=problem.depth,
            source=problem.source, flux=problem.flux,
            flux_part=problem.flux_part, tol=config.tol, step_index=step,
            workers=config.workers,
        )
        err = step_error(problem, config, basis, solution)
        report.extras["error"] = None if math.isnan(err) else err
        if problem.name == "fcm_disk":
            report.extras["alpha_area"] = indicator_area(
                basis, problem.domain, problem.depth)
        steps.append(report.to_dict())
        if step == config.steps:
            weights = compute_leaf_weights(basis, problem.domain, problem.depth)
            ranks = partition_leaves(config.partitioner, mesh, basis,
                                     weights, config.ranks)
            final = {
                "mesh": mesh, "basis": basis, "solution": solution,
                "ranks": ranks, "weights": weights, "problem": problem,
                "error": err,
            }
    return steps, final


# ----------------------------------------------------------------------
# artifact writers

def write_report_json(path, config, steps, status="ok"):
    peak = _peak_rss_mb()
    body = {
        "config": dataclasses.asdict(config),
        "status": status,
        "steps": steps,
        "peak_rss_mb": peak,
    }
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2)
        fh.write("\n")


def _peak_rss_mb():
    try:
        import resource
        return round(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0, 1)
    except Exception:
        return None


def write_convergence_csv(path, steps):
    with open(path, "w") as fh:
        fh.write("step,dofs,energy_error\n")
        for s in steps:
            err = s.get("error")
            fh.write(f"{s['step']},{s['dofs']},{'' if err is None else repr(err)}\n")


def write_partition_csv(path, mesh, ranks, weights):
    leaves = mesh.active_leaf_elements()
    with open(path, "w") as fh:
        fh.write("leaf_id,rank,weight\n")
        for leaf, r, w in zip(leaves, ranks, weights):
            fh.write(f"{leaf.id},{int(r)},{repr(float(w))}\n")


def write_solution_csv(path, basis, solution, probe):
    """Sample the solved field on a uniform probe grid over the mesh box."""
    from .basis import FieldApproximation
    mesh = basis.mesh
    pts = []
    lo = np.min([l.lo_f for l in mesh.base_elements], axis=0)
    hi = np.max([l.hi_f for l in mesh.base_elements], axis=0)
    xs = np.linspace(lo[0], hi[0], probe)
    ys = np.linspace(lo[1], hi[1], probe)
    field = FieldApproximation(basis, solution)
    with open(path, "w") as fh:
        fh.write("x,y,u\n")
        for y in ys:
            for x in xs:
                if mesh.locate_leaf((x, y)) is None:
                    continue
                val = float(field.value(np.array([[x, y]]))[0])
                fh.write(f"{repr(float(x))},{repr(float(y))},{repr(val)}\n")


def write_mesh_xml(path, final):
    mesh = final["mesh"]
    basis = final["basis"]
    leaves = mesh.active_leaf_elements()
    orders = [basis.orders.level_order(leaf.level) for leaf in leaves]
    export_mesh_xml(mesh, path, ranks=final["ranks"],
                    weights=final["weights"], orders=orders)


def write_artifacts(outdir, config, steps, final, status="ok"):
    os.makedirs(outdir, exist_ok=True)
    write_report_json(os.path.join(outdir, "report.json"), config, steps, status)
    if config.dry_run or final is None:
        return
    write_convergence_csv(os.path.join(outdir, "convergence.csv"), steps)
    write_partition_csv(os.path.join(outdir, "partition.csv"),
                        final["mesh"], final["ranks"], final["weights"])
    write_mesh_xml(os.path.join(outdir, "mesh.xml"), final)
    write_solution_csv(os.path.join(outdir, "solution.csv"),
                       final["basis"], final["solution"], config.probe)
