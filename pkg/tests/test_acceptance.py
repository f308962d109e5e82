"""Headline acceptance checks for the library, one per guarantee we ship.

Each test records a single ``[criterion NN] PASS/FAIL`` line before it
asserts the same condition; conftest echoes the lines in the terminal
summary, so a red test and a FAIL line always go together and the verdicts
stay visible under pytest's output capture.

Frozen reference numbers live in the constants below.  The integer counts
were hand-derived from the entity census of the corner-refined meshes; the
floating-point sequences were measured once on the reference configuration
and pinned with the stated tolerances.  Wall-clock gates are generous
(each measured run sits far below its gate) but they are part of the
contract: these workloads must stay cheap on a single ordinary core.
"""

import os
import time
import warnings

import numpy as np

from conftest import ACCEPTANCE_LINES, random_refined_mesh, random_orders
from overlayfem.mesh import BaseMeshSpec, PatchSpec, create_base_mesh
from overlayfem.basis import Basis, PolynomialOrderField
from overlayfem.physics import DirichletMap, assemble_serial
from overlayfem.quadrature import Disk, EmbeddedDomain, indicator_area
from overlayfem.partition import (
    compute_leaf_weights, partition_contiguous, partition_leaves,
    partition_sfc, weighted_imbalance,
)
from overlayfem.distributed import (
    distribute_dofs_contiguous, distribute_dofs_graph,
    exchange_and_assemble, integrate_rank_system, run_step,
)
from overlayfem.benchmarks import (
    RunConfig, lshape_mesh_spec, make_problem, mark_corner_leaves,
    run_benchmark,
)

# ---------------------------------------------------------------- frozen

# Leaf counts after five rounds of corner refinement on the L-shaped mesh
# (three leaves marked per round): base count + 5 * 9 hierarchy leaves.
LEAVES_RES16 = 813          # 3*16^2 - 5*3 + 5*9
LEAVES_RES128 = 49197       # 3*128^2 - 5*3 + 5*9

# Total basis functions on the res-128 mesh at uniform order 10, checked
# against the closed-form entity census: 49690 nodes + 98886 edges * 9
# + 49197 faces * 81.
DOFS_RES128_P10 = 4_924_621
DOF_TARGET = 5.0e6
DOF_TARGET_RTOL = 0.02

# Energy-norm errors of the corner-singular solve (res 8, order 2, five
# rounds of ball marking with radius 2^(1-step)), pinned at rel 1e-6.
CONVERGENCE_DOFS = [833, 2785, 4801, 6817, 8833, 10849]
CONVERGENCE_ERRS = [
    3.907122028200744e-02,
    2.4616989215480424e-02,
    1.5509161758140322e-02,
    9.771339557213841e-03,
    6.157158178466321e-03,
    3.8812371471275073e-03,
]

# Quarter-disk area errors for the sharp indicator (res 16, rule order 3)
# over recursion depths 0..6: last one measured at 4.81e-7.
AREA_FINAL_BOUND = 2e-3
AREA_FINAL_PINNED = 1e-6

MATCH_RTOL = 1e-12
SOLUTION_ATOL = 1e-10
IMBALANCE_BOUND = 1.10


def _report(num, ok, detail):
    line = f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    return line


def _warn_line(num, detail):
    line = f"[criterion {num:02d}] WARN  {detail}"
    ACCEPTANCE_LINES.append(line)
    return line


def on_square_boundary(p):
    return min(p[0], p[1]) < 1e-12 or max(p[0], p[1]) > 1 - 1e-12


def bumpy_source(pts):
    return 1.0 + pts[:, 0] * np.sin(3.0 * pts[:, 1])


def corner_refined_lshape(res, steps=5):
    mesh = create_base_mesh(lshape_mesh_spec(res))
    for _ in range(steps):
        mesh.refine(mark_corner_leaves(mesh, (0.0, 0.0)))
    return mesh


def row_errors(dist_csr, serial_csr):
    """Per-row max abs difference and per-row serial scale."""
    diff = abs(dist_csr - serial_csr).max(axis=1).toarray().ravel()
    scale = abs(serial_csr).max(axis=1).toarray().ravel()
    overall = np.abs(serial_csr.data).max()
    return diff, np.where(scale > 0, scale, overall)


# ------------------------------------------------------------- criteria


def test_criterion_01_corner_refinement_leaf_counts():
    t0 = time.perf_counter()
    got16 = len(corner_refined_lshape(16).active_leaf_elements())
    got128 = len(corner_refined_lshape(128).active_leaf_elements())
    wall = time.perf_counter() - t0
    ok = got16 == LEAVES_RES16 and got128 == LEAVES_RES128 and wall < 5.0
    _report(1, ok, f"leaf counts res 16 -> {got16}, res 128 -> {got128} "
                   f"({wall:.2f}s, gate 5s)")
    assert got16 == LEAVES_RES16
    assert got128 == LEAVES_RES128
    assert wall < 5.0


def test_criterion_02_large_mesh_dof_count():
    t0 = time.perf_counter()
    mesh = corner_refined_lshape(128)
    basis = Basis(mesh, PolynomialOrderField(uniform=10))
    total = basis.dofmap.total
    wall = time.perf_counter() - t0
    rel = abs(total - DOF_TARGET) / DOF_TARGET
    ok = total == DOFS_RES128_P10 and rel <= DOF_TARGET_RTOL and wall < 30.0
    _report(2, ok, f"dofs at order 10 -> {total} "
                   f"({rel * 100:.2f}% from {DOF_TARGET:.1e}, {wall:.2f}s, gate 30s)")
    assert total == DOFS_RES128_P10
    assert rel <= DOF_TARGET_RTOL
    assert wall < 30.0


def test_criterion_03_distributed_assembly_matches_serial():
    rng = np.random.default_rng(2026)
    rank_counts = [1, 2, 3, 4, 8]
    partitioners = ["contiguous", "sfc", "graph"]
    distributions = ["graph", "contiguous"]
    t0 = time.perf_counter()
    worst = 0.0
    bad = []
    for case in range(20):
        mesh = random_refined_mesh(rng, max_leaves=1000)
        basis = Basis(mesh, random_orders(rng, mesh, p_max=4))
        dirichlet = DirichletMap(basis, on_square_boundary)
        n_ranks = rank_counts[case % len(rank_counts)]
        method = partitioners[case % len(partitioners)]
        leaves = mesh.active_leaf_elements()
        w = compute_leaf_weights(basis)
        ranks = partition_leaves(method, mesh, basis, w, n_ranks)

        to_free = np.full(basis.dofmap.total, -1, dtype=np.int64)
        to_free[dirichlet.free] = np.arange(dirichlet.n_free)
        intermediates = []
        for r in range(n_ranks):
            mine = [i for i in range(len(leaves)) if ranks[i] == r]
            intermediates.append(integrate_rank_system(
                basis, to_free,
                [leaves[i].id for i in mine], np.asarray(mine, dtype=np.int64),
                r, source=bumpy_source))
        leaf_free = [to_free[basis.leaf_dofs(leaf)] for leaf in leaves]
        leaf_free = [d[d >= 0] for d in leaf_free]
        if distributions[case % len(distributions)] == "graph":
            owner = distribute_dofs_graph(leaf_free, ranks, dirichlet.n_free, n_ranks)
        else:
            owner = distribute_dofs_contiguous(dirichlet.n_free, n_ranks)
        system, _ = exchange_and_assemble(intermediates, owner,
                                          dirichlet.n_free, n_ranks)

        K, f = assemble_serial(basis, source=bumpy_source)
        K_ff, f_f = dirichlet.reduce(K, f)
        diff, scale = row_errors(system.gather_matrix().tocsr(), K_ff.tocsr())
        worst = max(worst, float(np.max(diff / scale)) if diff.size else 0.0)
        if not np.all(diff <= MATCH_RTOL * scale):
            bad.append(f"case {case}: matrix row mismatch")
        rhs = system.gather_rhs()
        if np.max(np.abs(rhs - f_f)) > MATCH_RTOL * max(1.0, np.abs(f_f).max()):
            bad.append(f"case {case}: rhs mismatch")
        if sum(s.n_leaves for s in intermediates) != len(leaves):
            bad.append(f"case {case}: element integrated more or less than once")
    wall = time.perf_counter() - t0
    ok = not bad and wall < 120.0
    _report(3, ok, f"20 random meshes, ranks drawn from {{1,2,3,4,8}}: "
                   f"worst row error {worst:.2e} (tol {MATCH_RTOL:.0e}), "
                   f"integrations == leaves ({wall:.2f}s, gate 120s)")
    assert not bad, bad[:3]
    assert wall < 120.0


def test_criterion_04_majority_ownership_matches_oracle():
    rng = np.random.default_rng(4096)
    t0 = time.perf_counter()
    bad = []
    for case in range(20):
        mesh = random_refined_mesh(rng, max_leaves=1000)
        basis = Basis(mesh, random_orders(rng, mesh, p_max=4))
        dirichlet = DirichletMap(basis, on_square_boundary)
        n_ranks = int(rng.integers(1, 9))
        leaves = mesh.active_leaf_elements()
        ranks = rng.integers(0, n_ranks, size=len(leaves))

        to_free = np.full(basis.dofmap.total, -1, dtype=np.int64)
        to_free[dirichlet.free] = np.arange(dirichlet.n_free)
        leaf_free = [to_free[basis.leaf_dofs(leaf)] for leaf in leaves]
        leaf_free = [d[d >= 0] for d in leaf_free]

        owner = distribute_dofs_graph(leaf_free, ranks, dirichlet.n_free, n_ranks)

        # exhaustive oracle: tally touches per free dof, majority wins,
        # ties go to the lower rank
        tally = [dict() for _ in range(dirichlet.n_free)]
        for dofs, rank in zip(leaf_free, ranks):
            for dof in dofs:
                tally[dof][int(rank)] = tally[dof].get(int(rank), 0) + 1
        want = np.empty(dirichlet.n_free, dtype=np.int64)
        for dof, counts in enumerate(tally):
            best = max(counts.values())
            want[dof] = min(r for r, c in counts.items() if c == best)
        if not np.array_equal(owner, want):
            bad.append(f"case {case}: owner differs from oracle")

        # every free dof owned by exactly one rank, and that rank touches it
        if owner.shape != (dirichlet.n_free,) or not np.all((owner >= 0) & (owner < n_ranks)):
            bad.append(f"case {case}: owner array malformed")
        elif any(int(owner[dof]) not in counts for dof, counts in enumerate(tally)):
            bad.append(f"case {case}: dof owned by a rank without support")
    wall = time.perf_counter() - t0
    ok = not bad and wall < 30.0
    _report(4, ok, f"20 random meshes: ownership == exhaustive tally, "
                   f"ties to lower rank, free dofs partitioned "
                   f"({wall:.2f}s, gate 30s)")
    assert not bad, bad[:3]
    assert wall < 30.0


def test_criterion_05_graph_distribution_cuts_traffic():
    problem = make_problem(RunConfig(benchmark="lshape", res=16, steps=5, p=4))
    mesh = corner_refined_lshape(16)
    orders = PolynomialOrderField(uniform=4)
    t0 = time.perf_counter()
    sent = {}
    for dist in ("graph", "contiguous"):
        report, _, _ = run_step(mesh, orders, 4, problem.dirichlet_part,
                                partitioner="sfc", dof_distribution=dist,
                                flux=problem.flux, flux_part=problem.flux_part,
                                tol=1e-10)
        sent[dist] = sum(r["sent_triplets"] for r in report.to_dict()["per_rank"])
    wall = time.perf_counter() - t0
    ok = sent["graph"] <= sent["contiguous"] and wall < 60.0
    _report(5, ok, f"sent triplets at 4 ranks: graph {sent['graph']} <= "
                   f"contiguous {sent['contiguous']} ({wall:.2f}s, gate 60s)")
    assert sent["graph"] <= sent["contiguous"]
    assert wall < 60.0


def test_criterion_06_corner_convergence_steepens():
    t0 = time.perf_counter()
    cfg = RunConfig(benchmark="lshape", res=8, steps=5, p=2, ranks=2,
                    marking="ball", partitioner="sfc", dof_dist="graph",
                    tol=1e-10)
    steps, _ = run_benchmark(cfg)
    wall = time.perf_counter() - t0
    dofs = [s["dofs"] for s in steps]
    errs = [s["error"] for s in steps]
    slopes = [(np.log(errs[i + 1]) - np.log(errs[i]))
              / (np.log(dofs[i + 1]) - np.log(dofs[i]))
              for i in range(len(errs) - 1)]
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    steeper = all(b < a for a, b in zip(slopes, slopes[1:]))
    pinned = (dofs == CONVERGENCE_DOFS
              and all(abs(e - ref) <= 1e-6 * ref
                      for e, ref in zip(errs, CONVERGENCE_ERRS)))
    ok = decreasing and steeper and pinned and wall < 120.0
    _report(6, ok, f"energy errors {errs[0]:.4e} -> {errs[-1]:.4e} strictly "
                   f"decreasing, slopes {slopes[0]:.2f} -> {slopes[-1]:.2f} "
                   f"steepening, pinned at rel 1e-6 ({wall:.2f}s, gate 120s)")
    assert dofs == CONVERGENCE_DOFS
    assert decreasing
    assert steeper
    assert pinned
    assert wall < 120.0


def test_criterion_07_embedded_area_converges():
    t0 = time.perf_counter()
    mesh = create_base_mesh(BaseMeshSpec(2, [PatchSpec(((0, 1), (0, 1)), (16, 16))]))
    basis = Basis(mesh, PolynomialOrderField(uniform=2))
    domain = EmbeddedDomain(Disk((0.0, 0.0), 1.0), epsilon=0.0)
    exact = np.pi / 4.0
    errs = [abs(indicator_area(basis, domain, depth=d) - exact)
            for d in range(7)]
    wall = time.perf_counter() - t0
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    ok = (decreasing and errs[-1] < AREA_FINAL_BOUND
          and errs[-1] < AREA_FINAL_PINNED and wall < 30.0)
    _report(7, ok, f"quarter-disk area error {errs[0]:.2e} -> {errs[-1]:.2e} "
                   f"monotone over depths 0..6, final < {AREA_FINAL_BOUND:.0e} "
                   f"({wall:.2f}s, gate 30s)")
    assert decreasing
    assert errs[-1] < AREA_FINAL_BOUND
    assert errs[-1] < AREA_FINAL_PINNED
    assert wall < 30.0


def test_criterion_08_rank_count_invariant_solve():
    problem = make_problem(RunConfig(benchmark="lshape", res=16, steps=5, p=4))
    mesh = corner_refined_lshape(16)
    orders = PolynomialOrderField(uniform=4)
    t0 = time.perf_counter()
    iters, sols = [], []
    for n_ranks in (1, 2, 4):
        report, _, sol = run_step(mesh, orders, n_ranks, problem.dirichlet_part,
                                  partitioner="sfc", dof_distribution="graph",
                                  flux=problem.flux, flux_part=problem.flux_part,
                                  tol=1e-10)
        iters.append(report.cg_iterations)
        sols.append(sol)
    wall = time.perf_counter() - t0
    drift = max(float(np.max(np.abs(s - sols[0]))) for s in sols[1:])
    same_iters = len(set(iters)) == 1 and 0 < iters[0] < 10_000
    ok = same_iters and drift <= SOLUTION_ATOL and wall < 120.0
    _report(8, ok, f"cg iterations at 1/2/4 ranks: {iters}, solution drift "
                   f"{drift:.1e} (tol {SOLUTION_ATOL:.0e}) ({wall:.2f}s, gate 120s)")
    assert same_iters
    assert drift <= SOLUTION_ATOL
    assert wall < 120.0


def test_criterion_09_sfc_partition_balance():
    t0 = time.perf_counter()
    mesh = corner_refined_lshape(16)
    basis = Basis(mesh, PolynomialOrderField(uniform=18))
    w = compute_leaf_weights(basis)
    sfc = weighted_imbalance(w, partition_sfc(mesh, w, 8), 8)
    cont = weighted_imbalance(w, partition_contiguous(len(w), 8), 8)

    never_worse = True
    rng = np.random.default_rng(909)
    for _ in range(10):
        rmesh = random_refined_mesh(rng, max_leaves=1000)
        rbasis = Basis(rmesh, random_orders(rng, rmesh, p_max=4))
        rw = compute_leaf_weights(rbasis)
        n_ranks = int(rng.integers(2, 9))
        ri_sfc = weighted_imbalance(rw, partition_sfc(rmesh, rw, n_ranks), n_ranks)
        ri_cont = weighted_imbalance(rw, partition_contiguous(len(rw), n_ranks), n_ranks)
        never_worse = never_worse and ri_sfc <= ri_cont + 1e-12
    wall = time.perf_counter() - t0
    ok = sfc <= IMBALANCE_BOUND and never_worse and wall < 60.0
    _report(9, ok, f"curve-ordered imbalance at 8 ranks: {sfc:.4f} <= "
                   f"{IMBALANCE_BOUND} (contiguous {cont:.4f}); never worse "
                   f"than contiguous on 10 random meshes ({wall:.2f}s, gate 60s)")
    assert sfc <= IMBALANCE_BOUND
    assert never_worse
    assert wall < 60.0


def test_criterion_10_parallel_integration_speedup():
    # Soft criterion: a warning, never a failure.  The integration phase
    # should speed up by >= 3.0x with 4 workers, but only a host with at
    # least 4 cores can be expected to show it.
    cores = os.cpu_count() or 1
    problem = make_problem(RunConfig(benchmark="lshape", res=16, steps=5, p=4))
    mesh = corner_refined_lshape(16)
    orders = PolynomialOrderField(uniform=4)
    walls = {}
    for workers in (1, 4):
        report, _, _ = run_step(mesh, orders, 4, problem.dirichlet_part,
                                partitioner="sfc", dof_distribution="graph",
                                flux=problem.flux, flux_part=problem.flux_part,
                                tol=1e-10, workers=workers)
        walls[workers] = report.timings["integrate"]
    speedup = walls[1] / walls[4] if walls[4] > 0 else float("inf")
    detail = (f"integration speedup with 4 workers: {speedup:.2f}x "
              f"(1 worker {walls[1]:.2f}s, 4 workers {walls[4]:.2f}s, "
              f"{cores} core(s))")
    if cores < 4:
        _warn_line(10, detail + " -- host has fewer than 4 cores, "
                               "informational only")
        warnings.warn(f"speedup criterion not assessable on {cores} core(s): "
                      f"measured {speedup:.2f}x")
    elif speedup < 3.0:
        _warn_line(10, detail + " -- below the 3.0x target")
        warnings.warn(f"integration speedup {speedup:.2f}x below the 3.0x "
                      "target on a >=4-core host")
    else:
        _report(10, True, detail)
