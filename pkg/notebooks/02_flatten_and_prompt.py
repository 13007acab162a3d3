"""
Flattening a scene graph into a token sequence
==============================================

Each object contributes an identifier token and a 2D-feature slot. The
triplet layout then adds (object, relation, neighbor) slots per edge; the
edge-only layout states the object once and lists the relation slots.
"""

# %%
import numpy as np

from graphtok3d import (GraphConfig, ObjectProposal, Scene, assemble_prompt, build_scene_graph,
                        flatten_edge_only, flatten_triplet, token_budget, token_budget_full)

rng = np.random.default_rng(1)
centers = [(0, 0, 0), (1, 0, 0), (0, 2, 0), (3, 1, 0)]
scene = Scene("demo", tuple(
    ObjectProposal(i, np.hstack([np.asarray(c) + rng.uniform(-0.2, 0.2, (20, 3)), np.full((20, 3), 0.5)]))
    for i, c in enumerate(centers)))
graph = build_scene_graph(scene, GraphConfig(k=2))

trip = flatten_triplet(graph)
eo = flatten_edge_only(graph)
print("triplet:", len(trip), "slots = 2n + 3|E| =", 2 * 4 + 3 * len(graph.edges))
print("edge-only:", len(eo), "slots = 3n + |E| =", 3 * 4 + len(graph.edges))

# %%
# The prompt wraps the sequence in brackets after a fixed system preamble.
# Placeholders show where projected embeddings are spliced in.
prompt = assemble_prompt(trip, "Which object is left of the table?", "<OBJ000>")
print(prompt.render(trip))

# %%
# Sequence length grows linearly with k instead of quadratically with n.
print(f"{'n':>5} {'k=2':>7} {'complete':>9} {'ratio':>7}")
for n in (10, 50, 100, 200):
    knn, full = token_budget(n, 2), token_budget_full(n)
    print(f"{n:>5} {knn:>7} {full:>9} {full / knn:>7.2f}")
