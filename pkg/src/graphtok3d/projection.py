"""Projection MLPs that map raw encoder features into the model width, plus
the learned identifier-token table.

Every projection is ``Linear -> GELU -> Linear -> GELU -> Linear``. GELU uses
the tanh approximation::

    gelu(x) = 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x**3)))
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import binio
from .errors import MissingFeature, ParseError, ShapeError
from .flatten import EDGE, FEATURE2D, IDENTIFIER, NODE

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715
N_IDENTIFIERS = 200

CHECKPOINT_MAGIC = b"3DGC"
CHECKPOINT_VERSION = 1


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_A * x ** 3)))


def gelu_grad(x):
    t = np.tanh(GELU_C * (x + GELU_A * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)


@dataclass
class MLPParams:
    """Three affine layers; ``weights[l]`` has shape (out, in)."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise ShapeError("an MLP has exactly three layers")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {l}: weight {w.shape} / bias {b.shape} mismatch")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeError(f"layer {l} input {w.shape[1]} != previous output "
                                 f"{self.weights[l - 1].shape[0]}")

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[2].shape[0]

    def named_arrays(self, prefix):
        for l in range(3):
            yield f"{prefix}.W{l + 1}", self.weights[l]
            yield f"{prefix}.b{l + 1}", self.biases[l]

    def zeros_like(self):
        return MLPParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def copy(self):
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def _check_input(p, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != p.in_dim:
        raise ShapeError(f"expected input of width {p.in_dim}, got shape {x.shape}")
    return x


def _forward(p, x):
    (w1, w2, w3), (b1, b2, b3) = p.weights, p.biases
    a1 = x @ w1.T + b1
    h1 = gelu(a1)
    a2 = h1 @ w2.T + b2
    h2 = gelu(a2)
    y = h2 @ w3.T + b3
    return y, (a1, h1, a2, h2)


def mlp_forward(p, x):
    """Apply the MLP to one vector or a batch of row vectors."""
    return _forward(p, _check_input(p, x))[0]


def mlp_backward(p, x, grad_out):
    """Gradients of ``sum(grad_out * mlp_forward(p, x))``.

    Returns ``(param_grads, grad_in)`` where ``param_grads`` is an MLPParams of
    gradients. Batched inputs accumulate parameter gradients over rows.
    """
    x = _check_input(p, x)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != x.shape[:-1] + (p.out_dim,):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match output")
    single = x.ndim == 1
    if single:
        x, grad_out = x[None], grad_out[None]
    (w1, w2, w3) = p.weights
    _, (a1, h1, a2, h2) = _forward(p, x)

    gw3 = grad_out.T @ h2
    gb3 = grad_out.sum(axis=0)
    d2 = (grad_out @ w3) * gelu_grad(a2)
    gw2 = d2.T @ h1
    gb2 = d2.sum(axis=0)
    d1 = (d2 @ w2) * gelu_grad(a1)
    gw1 = d1.T @ x
    gb1 = d1.sum(axis=0)
    grad_in = d1 @ w1
    grads = MLPParams([gw1, gw2, gw3], [gb1, gb2, gb3])
    return grads, (grad_in[0] if single else grad_in)


@dataclass
class ProjectionSet:
    f2d: MLPParams
    fv: MLPParams
    fe: MLPParams
    id_table: np.ndarray

    def __post_init__(self):
        outs = {self.f2d.out_dim, self.fv.out_dim, self.fe.out_dim, self.id_table.shape[1]}
        if len(outs) != 1:
            raise ShapeError(f"projection output widths disagree: {sorted(outs)}")
        if self.id_table.shape[0] != N_IDENTIFIERS:
            raise ShapeError(f"identifier table needs {N_IDENTIFIERS} rows")

    @property
    def d_model(self):
        return self.id_table.shape[1]

    @property
    def dims(self):
        return {"d_2d": self.f2d.in_dim, "d_v": self.fv.in_dim, "d_e": self.fe.in_dim,
                "d_model": self.d_model, "hidden": self.f2d.weights[0].shape[0]}

    def named_arrays(self):
        yield from self.f2d.named_arrays("f2d")
        yield from self.fv.named_arrays("fv")
        yield from self.fe.named_arrays("fe")
        yield "id_table", self.id_table

    def copy(self):
        return ProjectionSet(self.f2d.copy(), self.fv.copy(), self.fe.copy(), self.id_table.copy())


def _init_mlp(rng, in_dim, hidden, out_dim):
    sizes = [(hidden, in_dim), (hidden, hidden), (out_dim, hidden)]
    weights, biases = [], []
    for fan_out, fan_in in sizes:
        a = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def init_params(seed, d_2d=1024, d_v=1024, d_e=512, d_model=64, hidden=None):
    """Glorot-uniform weights, zero biases, N(0, 0.02) identifier table."""
    for name, v in (("d_2d", d_2d), ("d_v", d_v), ("d_e", d_e), ("d_model", d_model)):
        if v < 1:
            raise ShapeError(f"{name} must be positive")
    hidden = hidden or d_model
    rng = np.random.default_rng(seed)
    f2d = _init_mlp(rng, d_2d, hidden, d_model)
    fv = _init_mlp(rng, d_v, hidden, d_model)
    fe = _init_mlp(rng, d_e, hidden, d_model)
    id_table = rng.normal(0.0, 0.02, size=(N_IDENTIFIERS, d_model))
    return ProjectionSet(f2d, fv, fe, id_table)


def _gather(seq, raw):
    ids, two_d, nodes, edges = [], [], [], []
    for s in seq.slots:
        if s.kind in (FEATURE2D, NODE, IDENTIFIER) and not 0 <= s.object_ref < N_IDENTIFIERS:
            raise MissingFeature(f"object id {s.object_ref} out of range")
        if s.kind == IDENTIFIER:
            ids.append(s.object_ref)
        elif s.kind == FEATURE2D:
            if s.object_ref >= len(raw.z2d):
                raise MissingFeature(f"no 2D feature for object {s.object_ref}")
            two_d.append(s.object_ref)
        elif s.kind == NODE:
            if s.object_ref >= len(raw.zv):
                raise MissingFeature(f"no 3D feature for object {s.object_ref}")
            nodes.append(s.object_ref)
        elif s.kind == EDGE:
            if s.object_ref not in raw.ze:
                raise MissingFeature(f"no edge feature for pair {s.object_ref}")
            edges.append(s.object_ref)
    return ids, two_d, nodes, edges


def project_sequence(seq, raw, ps, zero_edges=False):
    """Fill the embedding matrix of ``seq``, one row per slot.

    Each distinct object/edge goes through its MLP once; recurring node slots
    reuse the same row. ``zero_edges`` replaces every edge row with zeros.
    """
    _gather(seq, raw)
    objs = sorted({s.object_ref for s in seq.slots if s.kind in (FEATURE2D, NODE)})
    pairs = sorted({s.object_ref for s in seq.slots if s.kind == EDGE})
    obj_row = {o: r for r, o in enumerate(objs)}
    edge_row = {p: r for r, p in enumerate(pairs)}
    f2d = mlp_forward(ps.f2d, raw.z2d[objs]) if objs else None
    fv = mlp_forward(ps.fv, raw.zv[objs]) if objs else None
    if pairs and not zero_edges:
        fe = mlp_forward(ps.fe, np.stack([raw.ze[p] for p in pairs]))
    else:
        fe = np.zeros((len(pairs), ps.d_model))
    out = np.empty((len(seq), ps.d_model))
    for r, s in enumerate(seq.slots):
        if s.kind == IDENTIFIER:
            out[r] = ps.id_table[s.object_ref]
        elif s.kind == FEATURE2D:
            out[r] = f2d[obj_row[s.object_ref]]
        elif s.kind == NODE:
            out[r] = fv[obj_row[s.object_ref]]
        else:
            out[r] = fe[edge_row[s.object_ref]]
    return seq.with_embeddings(out)


# -- checkpoint -------------------------------------------------------------------

_HEADER = struct.Struct("<4sI6I")


def encode_checkpoint(ps):
    d = ps.dims
    head = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, d["d_2d"], d["d_v"], d["d_e"],
                        d["d_model"], d["hidden"], N_IDENTIFIERS)
    blocks = []
    for _, arr in ps.named_arrays():
        blocks.append(binio.encode_block(arr if arr.ndim == 2 else arr[None, :]))
    return head + b"".join(blocks)


def decode_checkpoint(buf):
    if len(buf) < _HEADER.size:
        raise ParseError("truncated checkpoint header", location=f"byte {len(buf)}")
    magic, version, d_2d, d_v, d_e, d_model, hidden, n_ids = _HEADER.unpack_from(buf, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ParseError(f"bad magic {magic!r}", location="byte 0")
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", location="byte 4")
    offset = _HEADER.size
    arrays = []
    for _ in range(3 * 6 + 1):
        mat, _, offset = binio.decode_block(buf, offset, edges=False)
        arrays.append(mat)
    if offset != len(buf):
        raise ParseError("trailing bytes after checkpoint", location=f"byte {offset}")

    def mlp(chunk):
        return MLPParams([chunk[0], chunk[2], chunk[4]], [chunk[1][0], chunk[3][0], chunk[5][0]])

    ps = ProjectionSet(mlp(arrays[0:6]), mlp(arrays[6:12]), mlp(arrays[12:18]), arrays[18])
    expect = {"d_2d": d_2d, "d_v": d_v, "d_e": d_e, "d_model": d_model, "hidden": hidden}
    if ps.dims != expect or n_ids != ps.id_table.shape[0]:
        raise ParseError(f"checkpoint header {expect} disagrees with tensors {ps.dims}")
    return ps


def save_checkpoint(ps, path):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(ps))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
