"""Central finite-difference check of mlp_backward."""

import numpy as np

from graphtok3d.projection import MLPParams, mlp_backward, mlp_forward

H = 1e-4
REL_TOL = 1e-4
ABS_FLOOR = 1e-2 * H


def random_mlp(rng, in_dim, hidden, out_dim, scale=1.0):
    sizes = [(hidden, in_dim), (hidden, hidden), (out_dim, hidden)]
    return MLPParams([rng.normal(0, scale / np.sqrt(c), (r, c)) for r, c in sizes],
                     [rng.normal(0, 0.1, r) for r, _ in sizes])


def check_instance(p, x, g):
    """Worst (|analytic - fd| - allowed) over all coordinates; <= 0 means pass.

    allowed = max(REL_TOL * |fd|, ABS_FLOOR).
    """
    grads, gin = mlp_backward(p, x, g)

    def objective():
        return float(np.sum(g * mlp_forward(p, x)))

    worst = -np.inf
    pairs = []
    for l in range(3):
        pairs.append((p.weights[l], grads.weights[l]))
        pairs.append((p.biases[l], grads.biases[l]))
    for arr, ga in pairs:
        flat, gflat = arr.reshape(-1), ga.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + H
            up = objective()
            flat[i] = old - H
            down = objective()
            flat[i] = old
            fd = (up - down) / (2 * H)
            worst = max(worst, abs(gflat[i] - fd) - max(REL_TOL * abs(fd), ABS_FLOOR))
    xf = x.reshape(-1)
    for i in range(xf.size):
        old = xf[i]
        xf[i] = old + H
        up = objective()
        xf[i] = old - H
        down = objective()
        xf[i] = old
        fd = (up - down) / (2 * H)
        worst = max(worst, abs(gin.reshape(-1)[i] - fd) - max(REL_TOL * abs(fd), ABS_FLOOR))
    return worst
