"""Partitioning a refined mesh when leaf costs span orders of magnitude.

Integration cost grows like the cube of the per-direction point count,
so on an hp mesh a handful of high-order base leaves dominate.  Cutting
the leaf list into equal-count blocks ignores that; ordering leaves
along a space-filling curve and cutting by weight keeps both locality
and balance.  The graph partitioner trades a little balance for fewer
cut interfaces.
"""

from overlayfem.mesh import create_base_mesh
from overlayfem.basis import Basis, PolynomialOrderField
from overlayfem.benchmarks import lshape_mesh_spec, mark_corner_leaves
from overlayfem.partition import (
    build_leaf_graph, compute_leaf_weights, edge_cut, partition_leaves,
    weighted_imbalance,
)

mesh = create_base_mesh(lshape_mesh_spec(8))
for _ in range(4):
    mesh.refine(mark_corner_leaves(mesh, (0.0, 0.0)))

basis = Basis(mesh, PolynomialOrderField(by_level={0: 6, 1: 4, 2: 3, 3: 2, 4: 1}))
weights = compute_leaf_weights(basis)
adj = build_leaf_graph(basis)
n = len(weights)
print(f"{n} leaves, weight range {weights.min():.3f} .. {weights.max():.3f}")

print(f"\n{'ranks':>5} {'method':>12} {'imbalance':>10} {'edge cut':>9}")
for n_ranks in (2, 4, 8):
    for method in ("contiguous", "sfc", "graph"):
        ranks = partition_leaves(method, mesh, basis, weights, n_ranks)
        imb = weighted_imbalance(weights, ranks, n_ranks)
        cut = edge_cut(adj, ranks)
        print(f"{n_ranks:>5} {method:>12} {imb:>10.4f} {cut:>9}")

print("\nimbalance = max rank weight / mean rank weight (1.0 is perfect)")
print("edge cut  = leaf adjacencies whose two leaves land on different ranks")
