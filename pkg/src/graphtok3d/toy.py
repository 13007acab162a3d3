"""Desk-scale grounding experiment.

A dot-product head stands in for the language model. A structured query
``(target_class, relation, anchor_class)`` is embedded by summing three
lookup rows; every surviving object is represented by the mean of its rows
in the projected flat sequence; the answer is the argmax of the dot
products. With single-token answers the sequence NLL reduces to
cross-entropy over object ids.

Scenes are built so that relational queries cannot be answered from class
features alone: two objects share the target class and sit on opposite
sides of the anchor.

For reference, the full-scale recipe trains for 3 epochs at a learning rate
of 5e-6 with cosine annealing and batch size 8. None of that is used here.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .errors import GenerationError, TrainingDiverged, ValidationError
from .flatten import EDGE, FEATURE2D, IDENTIFIER, NODE, flatten
from .graph import EXTERNAL, GraphConfig, build_scene_graph, geometric_relation_feature, nms_dedup
from .projection import init_params, mlp_backward, mlp_forward
from .scene import MAX_OBJECTS, ObjectProposal, RawFeatures, Scene

LEFT_OF, RIGHT_OF, ABOVE, BELOW, NEAREST_TO, NONE = (
    "left_of", "right_of", "above", "below", "nearest_to", "none")
RELATIONS = (LEFT_OF, RIGHT_OF, ABOVE, BELOW, NEAREST_TO, NONE)
DIRECTIONAL = (LEFT_OF, RIGHT_OF, ABOVE, BELOW)
NO_ANCHOR = -1

ROOM_SIZE = 10.0
FEATURE_NOISE = 0.05
MIN_DISTRACTOR_GAP = 2.5

FULL_SCALE_LR = 5e-6
FULL_SCALE_EPOCHS = 3
FULL_SCALE_BATCH = 8


@dataclass(frozen=True, eq=False)
class GroundingExample:
    scene: Scene
    raw: RawFeatures
    classes: tuple  # class id per object id
    target_class: int
    relation: str
    anchor_class: int
    answer: int


# -- ground truth predicates -------------------------------------------------------

def satisfies(scene, classes, obj, relation, target_class, anchor_class):
    """Whether object ``obj`` answers the query, judged from centroids."""
    if classes[obj] != target_class:
        return False
    if relation == NONE:
        return sum(c == target_class for c in classes) == 1
    c = scene[obj].centroid
    anchors = [a for a in range(len(classes)) if a != obj and classes[a] == anchor_class]
    if relation == NEAREST_TO:
        if len(anchors) != 1:
            return False
        a = scene[anchors[0]].centroid
        mine = np.linalg.norm(c - a)
        rivals = [np.linalg.norm(scene[o].centroid - a) for o in range(len(classes))
                  if o != obj and o != anchors[0] and classes[o] == target_class]
        return all(mine < r for r in rivals)
    axis, sign = {LEFT_OF: (0, -1), RIGHT_OF: (0, 1), BELOW: (2, -1), ABOVE: (2, 1)}[relation]
    return any(sign * (c[axis] - scene[a].centroid[axis]) > 0 for a in anchors)


# -- generator -------------------------------------------------------------------------

def _object_points(rng, center, n_points):
    half = rng.uniform(0.1, 0.25, size=3)
    xyz = center + rng.uniform(-1.0, 1.0, size=(n_points, 3)) * half
    rgb = rng.uniform(0.0, 1.0, size=(n_points, 3))
    # float32-representable so binary point files round-trip exactly
    return np.hstack([xyz, rgb]).astype(np.float32).astype(np.float64)


def class_features(rng, classes, dim, n_classes):
    """One-hot class block plus Gaussian noise."""
    block = max(1, dim // n_classes)
    out = rng.normal(0.0, FEATURE_NOISE, size=(len(classes), dim))
    for i, c in enumerate(classes):
        out[i, c * block:(c + 1) * block] += 1.0
    return out


def _cluster_layout(rng, relations, n_classes, n_objects):
    """Positions/classes of the anchor + two same-class targets, plus queries."""
    horizontal = [r for r in relations if r in (LEFT_OF, RIGHT_OF)]
    vertical = [r for r in relations if r in (ABOVE, BELOW)]
    axes = ([0] if horizontal else []) + ([2] if vertical else [])
    if not axes and NEAREST_TO in relations:
        axes = [0]
    if not axes:
        raise GenerationError(f"no relational query possible from {relations}")
    axis = axes[rng.integers(len(axes))]
    center = np.array([rng.uniform(3.0, 7.0), rng.uniform(3.0, 7.0), rng.uniform(1.2, 2.0)])
    near, far = sorted(rng.uniform(0.5, 1.0, size=2))
    if far - near < 0.15:
        far = near + 0.15
    lo_gap, hi_gap = (near, far) if rng.random() < 0.5 else (far, near)
    jitter = rng.uniform(-0.15, 0.15, size=(2, 3))
    jitter[:, axis] = 0.0
    lo = center + jitter[0]
    hi = center + jitter[1]
    lo[axis] -= lo_gap
    hi[axis] += hi_gap

    if n_objects == 2:
        t = int(rng.integers(n_classes))
        return center, [lo, hi], [t, t], t, t, axis
    t, a = (int(v) for v in rng.choice(n_classes, size=2, replace=False))
    return center, [center, lo, hi], [a, t, t], t, a, axis


def generate_synthetic_scene(seed, n_objects, class_vocab, relations=DIRECTIONAL,
                             dims=(32, 32, 24), noisy=False, max_retries=100, scene_id=None):
    """Random room with one relational cluster and scattered distractors.

    ``class_vocab`` is a class count or a sequence of class names. Returns
    ``(scene, raw_features, examples)``. With ``noisy=True`` a quarter of the
    proposals are exact duplicates of other objects, as an over-segmenting
    instance segmenter would produce; answers point at the NMS survivor.
    """
    n_classes = class_vocab if isinstance(class_vocab, int) else len(class_vocab)
    if not 2 <= n_objects <= MAX_OBJECTS:
        raise GenerationError(f"n_objects must be in [2, {MAX_OBJECTS}]")
    n_dup = n_objects // 4 if noisy else 0
    n_real = n_objects - n_dup
    if n_real < 2:
        raise GenerationError("too few objects for a relational query")
    if n_real > 3 and n_classes < 3:
        raise GenerationError("distractors need a class vocabulary of at least 3")
    if n_classes < 2 and n_real > 2:
        raise GenerationError("class vocabulary too small")
    if n_real == 2 and n_classes < 1:
        raise GenerationError("empty class vocabulary")
    bad = [r for r in relations if r not in RELATIONS]
    if bad:
        raise ValidationError(f"unknown relations {bad}")
    rng = np.random.default_rng(seed)
    d_2d, d_v, d_e = dims

    center, positions, classes, t, a, axis = _cluster_layout(rng, relations, n_classes, n_real)
    others = [c for c in range(n_classes) if c not in (t, a)]
    for _ in range(n_real - len(positions)):
        for _attempt in range(max_retries):
            p = np.array([rng.uniform(0.5, ROOM_SIZE - 0.5), rng.uniform(0.5, ROOM_SIZE - 0.5),
                          rng.uniform(0.3, 2.5)])
            if np.linalg.norm((p - center)[:2]) < MIN_DISTRACTOR_GAP:
                continue
            if all(np.linalg.norm(p - q) > 0.6 for q in positions):
                break
        else:
            raise GenerationError(f"could not place distractor after {max_retries} tries")
        positions.append(p)
        classes.append(int(others[rng.integers(len(others))]))

    clouds = [_object_points(rng, p, int(rng.integers(24, 65))) for p in positions]
    for _ in range(n_dup):
        src = int(rng.integers(n_real))
        clouds.append(clouds[src].copy())
        classes.append(classes[src])

    perm = rng.permutation(n_objects)  # object id of the i-th generated object
    by_id = [None] * n_objects
    cls_by_id = [0] * n_objects
    for gen_idx, oid in enumerate(perm):
        by_id[oid] = clouds[gen_idx]
        cls_by_id[oid] = classes[gen_idx]
    scene = Scene(scene_id or f"synthetic_{seed}", tuple(ObjectProposal(i, by_id[i]) for i in range(n_objects)))

    z2d = class_features(rng, cls_by_id, d_2d, n_classes)
    zv = class_features(rng, cls_by_id, d_v, n_classes)
    ze = {(i, j): geometric_relation_feature(scene[i], scene[j], d_e)
          for i in range(n_objects) for j in range(n_objects) if i != j}
    raw = RawFeatures(z2d, zv, ze)

    # Queries are asked on the deduplicated scene.
    survivors = nms_dedup(scene, 0.99) if noisy else list(range(n_objects))
    alive = set(survivors)
    view_classes = tuple(c if i in alive else -1 for i, c in enumerate(cls_by_id))
    queries = []
    pair = {0: (LEFT_OF, RIGHT_OF), 2: (BELOW, ABOVE)}[axis]
    queries += [r for r in pair if r in relations]
    if NEAREST_TO in relations and t != a:
        queries.append(NEAREST_TO)
    if NONE in relations and t != a:
        queries.append(NONE)

    examples = []
    for rel in queries:
        target, anchor = (a, NO_ANCHOR) if rel == NONE else (t, a)
        hits = [o for o in survivors if satisfies(scene, view_classes, o, rel, target, anchor)]
        if len(hits) != 1:
            raise GenerationError(f"query ({target}, {rel}, {anchor}) has {len(hits)} answers")
        examples.append(GroundingExample(scene, raw, tuple(cls_by_id), target, rel, anchor, hits[0]))
    return scene, raw, examples


def make_dataset(seed, n_examples, n_objects=8, n_classes=6, relations=DIRECTIONAL,
                 dims=(32, 32, 24), noisy=False):
    """Generate scenes until ``n_examples`` queries exist (deterministic in seed)."""
    examples = []
    seq = np.random.SeedSequence(seed)
    i = 0
    while len(examples) < n_examples:
        child = seq.spawn(1)[0]
        _, _, ex = generate_synthetic_scene(child, n_objects, n_classes, relations, dims, noisy,
                                            scene_id=f"synthetic_{seed}_{i:05d}")
        examples.extend(ex)
        i += 1
    return examples[:n_examples]


# -- model -------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    k: int = 2
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    layout: str = "triplet"
    nms_iou: float | None = 0.99
    min_dist: float = 0.01

    def __post_init__(self):
        if self.lr < 0:
            raise ValidationError("lr must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")

    def graph_config(self, d_e):
        return GraphConfig(k=self.k, nms_iou_threshold=self.nms_iou,
                           min_neighbor_distance=self.min_dist, edge_dim=d_e)


@dataclass
class _Prepared:
    objs: list          # surviving object ids, score order
    pool: np.ndarray    # (n_objs, rows) mean-pooling weights over unique rows
    z2d: np.ndarray
    zv: np.ndarray
    ze: np.ndarray
    pos: dict           # object id -> score index


def prepare(example, cfg):
    """Graph + flat sequence of an example's scene folded into a pooling matrix
    over the unique rows ``[id rows, 2d rows, node rows, edge rows]``."""
    d_e = example.raw.dims[2]
    gcfg = replace(cfg.graph_config(d_e), relation_source=EXTERNAL)
    graph = build_scene_graph(example.scene, gcfg, external=example.raw.ze)
    seq = flatten(graph, cfg.layout)
    objs = sorted(graph.surviving_ids)
    n = len(objs)
    row_of = {o: r for r, o in enumerate(objs)}
    pairs = graph.edge_pairs()
    edge_of = {p: r for r, p in enumerate(pairs)}
    pool = np.zeros((n, 3 * n + len(pairs)))
    for s, owner in zip(seq.slots, seq.segments):
        if s.kind == IDENTIFIER:
            col = row_of[s.object_ref]
        elif s.kind == FEATURE2D:
            col = n + row_of[s.object_ref]
        elif s.kind == NODE:
            col = 2 * n + row_of[s.object_ref]
        else:
            col = 3 * n + edge_of[s.object_ref]
        pool[row_of[owner], col] += 1.0
    pool /= pool.sum(axis=1, keepdims=True)
    ze = (np.stack([example.raw.ze[p] for p in pairs]) if pairs else np.zeros((0, d_e)))
    return _Prepared(objs, pool, example.raw.z2d[objs], example.raw.zv[objs], ze, row_of)


class ToyModel:
    """Projection set plus query lookup tables and a dot-product scorer."""

    def __init__(self, projection, class_emb, rel_emb, anchor_emb):
        self.projection = projection
        self.class_emb = class_emb
        self.rel_emb = rel_emb
        self.anchor_emb = anchor_emb  # last row stands for "no anchor"
        self.zero_edges = False
        self._cache = {}
        self._cfg = TrainConfig()

    @classmethod
    def create(cls, seed, n_classes, dims=(32, 32, 24), d_model=64):
        d_2d, d_v, d_e = dims
        ps = init_params(seed, d_2d, d_v, d_e, d_model)
        rng = np.random.default_rng([seed, 1])
        return cls(ps, rng.normal(0, 0.02, (n_classes, d_model)),
                   rng.normal(0, 0.02, (len(RELATIONS), d_model)),
                   rng.normal(0, 0.02, (n_classes + 1, d_model)))

    def configure(self, cfg):
        """Graph settings used to serialize scenes (clears the cache on change)."""
        if (cfg.k, cfg.layout, cfg.nms_iou, cfg.min_dist) != (
                self._cfg.k, self._cfg.layout, self._cfg.nms_iou, self._cfg.min_dist):
            self._cache.clear()
        self._cfg = cfg
        return self

    def named_arrays(self):
        yield from self.projection.named_arrays()
        yield "class_emb", self.class_emb
        yield "rel_emb", self.rel_emb
        yield "anchor_emb", self.anchor_emb

    def params(self):
        return dict(self.named_arrays())

    def _prepared(self, ex):
        key = id(ex.scene)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not ex.scene:
            hit = (ex.scene, prepare(ex, self._cfg))
            self._cache[key] = hit
        return hit[1]

    def query_vector(self, ex):
        anchor = len(self.anchor_emb) - 1 if ex.anchor_class == NO_ANCHOR else ex.anchor_class
        return (self.class_emb[ex.target_class] + self.rel_emb[RELATIONS.index(ex.relation)]
                + self.anchor_emb[anchor])

    def _unique_rows(self, prep):
        ps = self.projection
        ids = ps.id_table[prep.objs]
        f2d = mlp_forward(ps.f2d, prep.z2d)
        fv = mlp_forward(ps.fv, prep.zv)
        if len(prep.ze) and not self.zero_edges:
            fe = mlp_forward(ps.fe, prep.ze)
        else:
            fe = np.zeros((len(prep.ze), ps.d_model))
        return np.vstack([ids, f2d, fv, fe])

    def pooled(self, ex):
        prep = self._prepared(ex)
        return prep.pool @ self._unique_rows(prep)

    def scores(self, ex):
        return self.pooled(ex) @ self.query_vector(ex)

    def answer_index(self, ex):
        return self._prepared(ex).pos[ex.answer]

    def loss_and_grads(self, examples):
        """Mean NLL over ``examples`` and its gradient for every parameter array."""
        losses, grads = self._losses_and_grads(examples)
        return math.fsum(losses) / len(examples), grads

    def _losses_and_grads(self, examples):
        grads = {name: np.zeros_like(arr) for name, arr in self.named_arrays()}
        by_scene = {}
        for ex in examples:
            by_scene.setdefault(id(ex.scene), []).append(ex)
        losses = []
        inv = 1.0 / len(examples)
        ps = self.projection
        for group in by_scene.values():
            prep = self._prepared(group[0])
            rows = self._unique_rows(prep)
            pooled = prep.pool @ rows
            d_pooled = np.zeros_like(pooled)
            for ex in group:
                q = self.query_vector(ex)
                logits = pooled @ q
                ans = prep.pos[ex.answer]
                losses.append(nll_loss(logits, ans))
                d_logits = _softmax(logits)
                d_logits[ans] -= 1.0
                d_logits *= inv
                d_pooled += np.outer(d_logits, q)
                dq = pooled.T @ d_logits
                grads["class_emb"][ex.target_class] += dq
                grads["rel_emb"][RELATIONS.index(ex.relation)] += dq
                anchor = len(self.anchor_emb) - 1 if ex.anchor_class == NO_ANCHOR else ex.anchor_class
                grads["anchor_emb"][anchor] += dq
            d_rows = prep.pool.T @ d_pooled
            n = len(prep.objs)
            np.add.at(grads["id_table"], prep.objs, d_rows[:n])
            for name, mlp, x, d in (("f2d", ps.f2d, prep.z2d, d_rows[n:2 * n]),
                                    ("fv", ps.fv, prep.zv, d_rows[2 * n:3 * n]),
                                    ("fe", ps.fe, prep.ze, d_rows[3 * n:])):
                if len(x) == 0 or (name == "fe" and self.zero_edges):
                    continue
                g, _ = mlp_backward(mlp, x, d)
                for (gname, garr) in g.named_arrays(name):
                    grads[gname] += garr
        return losses, grads


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def nll_loss(logits, answer):
    """``-log softmax(logits)[answer]``, computed stably."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= answer < len(logits):
        raise IndexError(f"answer {answer} out of range for {len(logits)} logits")
    m = logits.max()
    return float(m - logits[answer] + np.log(np.sum(np.exp(logits - m))))


# -- training ----------------------------------------------------------------------------

class _Adam:
    def __init__(self, params, cfg):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            p -= c.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + c.eps)


class _SGD:
    def __init__(self, params, cfg):
        self.cfg = cfg

    def step(self, params, grads):
        for k, p in params.items():
            p -= self.cfg.lr * grads[k]


def train(model, data, cfg):
    """Minibatch training; returns ``(model, per-epoch mean losses)``.

    Parameters are updated in place. Shuffling draws from ``cfg.seed`` only.
    """
    if not data:
        raise ValidationError("no training examples")
    model.configure(cfg)
    params = model.params()
    opt = (_Adam if cfg.optimizer == "adam" else _SGD)(params, cfg)
    rng = np.random.default_rng(cfg.seed)
    curve = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        losses = []
        for start in range(0, len(data), cfg.batch_size):
            batch = [data[i] for i in order[start:start + cfg.batch_size]]
            # overflow surfaces as a non-finite loss and is reported as TrainingDiverged
            with np.errstate(over="ignore", invalid="ignore"):
                batch_losses, grads = model._losses_and_grads(batch)
            loss = math.fsum(batch_losses) / len(batch)
            if not math.isfinite(loss):
                raise TrainingDiverged(step, loss)
            opt.step(params, grads)
            losses.extend(batch_losses)
            step += 1
        # fsum is exactly rounded, so the epoch mean does not depend on shuffle order
        curve.append(math.fsum(losses) / len(data))
    return model, curve


def evaluate_grounding(model, examples):
    """Fraction of examples whose top-scoring object is the answer."""
    if not examples:
        return 0.0
    correct = 0
    for ex in examples:
        correct += int(np.argmax(model.scores(ex))) == model.answer_index(ex)
    return correct / len(examples)


# -- the edges-vs-no-edges experiment -----------------------------------------------------

@dataclass
class ExperimentConfig:
    seeds: tuple = (0, 1, 2, 3, 4)
    n_train: int = 1000
    n_eval: int = 500
    n_objects: int = 8
    n_classes: int = 6
    k_graph: int = 2
    k_baseline: int = 0
    d_model: int = 32
    dims: tuple = (32, 32, 24)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=3e-3, epochs=5, batch_size=16))


def run_seed(seed, exp, k, data=None):
    """Train one model at neighbor count ``k``; returns (model, curve, eval set)."""
    train_set, eval_set = data or split_data(seed, exp)
    model = ToyModel.create(seed, exp.n_classes, exp.dims, exp.d_model)
    cfg = replace(exp.train, seed=seed, k=k)
    model, curve = train(model, train_set, cfg)
    return model, curve, eval_set


def split_data(seed, exp):
    data = make_dataset([seed, 7], exp.n_train + exp.n_eval, exp.n_objects, exp.n_classes,
                        dims=exp.dims)
    return data[:exp.n_train], data[exp.n_train:]


def binomial_sigma(p, n):
    return math.sqrt(max(p * (1 - p), 0.0) / n)


def run_relation_experiment(exp=None, progress=None):
    """Paired-seed comparison of k-NN edges against no edges.

    For each seed both models see the same data and initialization. Also
    evaluates the edge model with its edge rows forced to zero.
    """
    exp = exp or ExperimentConfig()
    rows = []
    for seed in exp.seeds:
        data = split_data(seed, exp)
        graph_model, curve_g, eval_set = run_seed(seed, exp, exp.k_graph, data)
        base_model, curve_b, _ = run_seed(seed, exp, exp.k_baseline, data)
        acc_g = evaluate_grounding(graph_model, eval_set)
        acc_b = evaluate_grounding(base_model, eval_set)
        graph_model.zero_edges = True
        acc_z = evaluate_grounding(graph_model, eval_set)
        graph_model.zero_edges = False
        row = {"seed": seed, "acc_graph": acc_g, "acc_baseline": acc_b, "acc_zeroed_edges": acc_z,
               "loss_graph": curve_g, "loss_baseline": curve_b}
        rows.append(row)
        if progress:
            progress(row)
    acc_g = np.array([r["acc_graph"] for r in rows])
    acc_b = np.array([r["acc_baseline"] for r in rows])
    acc_z = np.array([r["acc_zeroed_edges"] for r in rows])
    diff = acc_g - acc_b
    if len(rows) > 1 and np.any(diff != diff[0]):
        p_value = float(stats.ttest_rel(acc_g, acc_b, alternative="greater").pvalue)
    else:
        p_value = 0.0 if len(rows) > 1 and diff[0] > 0 else 1.0
    sigma = binomial_sigma(float(acc_b.mean()), exp.n_eval)
    return {
        "per_seed": rows,
        "mean_graph": float(acc_g.mean()), "std_graph": float(acc_g.std(ddof=1)) if len(rows) > 1 else 0.0,
        "mean_baseline": float(acc_b.mean()), "std_baseline": float(acc_b.std(ddof=1)) if len(rows) > 1 else 0.0,
        "mean_zeroed_edges": float(acc_z.mean()),
        "mean_gap": float(diff.mean()),
        "p_value": p_value,
        "baseline_sigma": sigma,
    }
