"""
Projection MLPs and their hand-written gradients
================================================

Three small MLPs map 2D features, object features and relation features
into the model width. Gradients are written out by hand, so this script
checks them against central finite differences.
"""

# %%
import numpy as np

from graphtok3d import (GraphConfig, ObjectProposal, RawFeatures, Scene, build_scene_graph,
                        flatten_triplet, init_params, mlp_backward, mlp_forward, project_sequence)

ps = init_params(seed=0, d_2d=6, d_v=5, d_e=4, d_model=3, hidden=7)
rng = np.random.default_rng(0)
x = rng.normal(size=(2, 5))
g = rng.normal(size=(2, 3))

grads, gx = mlp_backward(ps.fv, x, g)
h = 1e-4
w = ps.fv.weights[1]
fd = np.zeros_like(w)
for idx in np.ndindex(w.shape):
    old = w[idx]
    w[idx] = old + h
    up = np.sum(g * mlp_forward(ps.fv, x))
    w[idx] = old - h
    down = np.sum(g * mlp_forward(ps.fv, x))
    w[idx] = old
    fd[idx] = (up - down) / (2 * h)
print("max |analytic - finite difference| on W2:", np.abs(grads.weights[1] - fd).max())

# %%
# Projecting a whole sequence: every slot gets one row of width d_model.
# Node slots of the same object share their row, identifier slots read a
# learned table.
scene = Scene("s", tuple(ObjectProposal(i, np.hstack([rng.uniform(i, i + 0.5, (10, 3)), np.full((10, 3), 0.3)]))
                         for i in range(3)))
graph = build_scene_graph(scene, GraphConfig(k=2, edge_dim=4))
raw = RawFeatures(rng.normal(size=(3, 6)), rng.normal(size=(3, 5)), graph.edge_features())
seq = project_sequence(flatten_triplet(graph), raw, ps)
print("embeddings:", seq.embeddings.shape)
