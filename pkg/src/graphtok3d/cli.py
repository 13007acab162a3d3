"""Command line entry point: ``graphtok3d <subcommand> ...``.

Settings are resolved as built-in defaults < ``--config`` file < explicit
flags. The config file is flat ``key=value`` lines (``#`` comments allowed)
using the long flag names with dashes or underscores.

Exit codes: 0 ok, 2 parse error, 3 validation error, 4 missing feature,
5 training divergence.
"""

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import binio
from .errors import GraphTokError, ParseError, ValidationError
from .flatten import LAYOUTS, assemble_prompt, flatten, token_budget, token_budget_full
from .graph import EXTERNAL, GEOMETRIC, GraphConfig, build_scene_graph, load_graph, save_graph
from .metrics import dump_metrics, evaluate_records, read_records
from .projection import init_params, load_checkpoint, project_sequence, save_checkpoint
from .scene import RawFeatures, load_scene
from .toy import ExperimentConfig, TrainConfig, run_relation_experiment, run_seed, split_data

DEFAULTS = {
    "k": 2,
    "nms_iou": "0.99",
    "min_dist": 0.01,
    "layout": "triplet",
    "dims": "1024,1024,512,64",
    "seed": 0,
    "out": ".",
    "report": "none",
    "thresholds": "0.25,0.5",
    "bleu_smoothing": False,
    # train-toy
    "lr": 3e-3,
    "epochs": 5,
    "batch_size": 16,
    "optimizer": "adam",
    "n_seeds": 1,
    "n_train": 1000,
    "n_eval": 500,
    "n_objects": 8,
    "n_classes": 6,
    "noisy": False,
    "toy_dims": "32,32,24,32",
    # paths and free text, unset unless given
    "scene": None, "graph": None, "edge_features": None, "features_2d": None,
    "features_3d": None, "checkpoint": None, "query": None, "target": None, "input": None,
    "n": None,
}

TYPES = {"k": int, "min_dist": float, "seed": int, "lr": float, "epochs": int, "batch_size": int,
         "n_seeds": int, "n_train": int, "n_eval": int, "n_objects": int, "n_classes": int}
BOOL_KEYS = {"bleu_smoothing", "noisy"}


def read_config(path):
    """Parse a flat key=value file."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected key=value", location=f"{path}:{lineno}")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key in BOOL_KEYS:
                out[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    out[key] = TYPES.get(key, str)(value)
                except ValueError:
                    raise ParseError(f"bad value for {key}: {value!r}", location=f"{path}:{lineno}") from None
    return out


def _resolve(args):
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(read_config(args.config))
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "func"):
            settings[key] = value
    return argparse.Namespace(**settings)


def _parse_dims(text, n=4):
    try:
        dims = [int(v) for v in str(text).split(",")]
    except ValueError:
        raise ValidationError(f"--dims expects comma-separated integers, got {text!r}") from None
    if len(dims) != n or min(dims) < 1:
        raise ValidationError(f"--dims expects {n} positive integers, got {text!r}")
    return dims


def _nms(value):
    if str(value).lower() in ("off", "none", "disabled"):
        return None
    return float(value)


def _graph_config(s, d_e):
    return GraphConfig(k=int(s.k), nms_iou_threshold=_nms(s.nms_iou),
                       min_neighbor_distance=float(s.min_dist),
                       relation_source=EXTERNAL if s.edge_features else GEOMETRIC, edge_dim=d_e)


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# -- subcommands ---------------------------------------------------------------------

def cmd_build_graph(s):
    if not s.scene:
        raise ValidationError("--scene is required")
    d_2d, d_v, d_e, d_model = _parse_dims(s.dims)
    scene = load_scene(s.scene)
    external = binio.read_edge_features(s.edge_features) if s.edge_features else None
    graph = build_scene_graph(scene, _graph_config(s, d_e), external)
    save_graph(graph, s.out)
    print(f"{scene.scene_id}: {graph.n_surviving} of {scene.n} objects kept, "
          f"{len(graph.edges)} edges -> {os.path.join(s.out, 'graph.json')}")
    return 0


def cmd_tokenize(s):
    if not s.graph:
        raise ValidationError("--graph is required")
    graph = load_graph(s.graph)
    seq = flatten(graph, s.layout)
    os.makedirs(s.out, exist_ok=True)
    _write(os.path.join(s.out, "sequence.json"), seq.to_json())
    msg = f"{len(seq)} slots ({s.layout})"
    if s.features_2d and s.features_3d:
        z2d = binio.read_features(s.features_2d, edges=False)
        zv = binio.read_features(s.features_3d, edges=False)
        ze = binio.read_edge_features(s.edge_features) if s.edge_features else graph.edge_features()
        ze = {k: v for k, v in ze.items() if v is not None}
        raw = RawFeatures(z2d, zv, ze)
        if s.checkpoint:
            ps = load_checkpoint(s.checkpoint)
        else:
            d_2d, d_v, d_e, d_model = _parse_dims(s.dims)
            ps = init_params(int(s.seed), z2d.shape[1], zv.shape[1],
                             next(iter(ze.values())).shape[0] if ze else d_e, d_model)
        seq = project_sequence(seq, raw, ps)
        binio.write_features(os.path.join(s.out, "embeddings.3dgf"), seq.embeddings)
        msg += f", embeddings {seq.embeddings.shape[0]}x{seq.embeddings.shape[1]}"
    if s.query is not None:
        prompt = assemble_prompt(seq, s.query, s.target)
        _write(os.path.join(s.out, "prompt.json"), prompt.to_json())
    print(msg)
    return 0


def budget_rows(n, k):
    knn = token_budget(n, k)
    full = token_budget_full(n)
    ratio = full / knn if knn else None
    return {"n": n, "k": k, "knn_tokens": knn, "full_tokens": full, "reduction": ratio}


def cmd_budget(s):
    if s.n is None or int(s.n) < 0 or int(s.k) < 0:
        raise ValidationError("budget needs --n >= 0 and --k >= 0")
    row = budget_rows(int(s.n), int(s.k))
    ratio = "n/a" if row["reduction"] is None else f"{row['reduction']:g}"
    print(f"{'objects':>8} {'k':>3} {'k-NN tokens':>12} {'full-graph tokens':>18} {'reduction':>10}")
    print(f"{row['n']:>8} {row['k']:>3} {row['knn_tokens']:>12} {row['full_tokens']:>18} {ratio:>10}")
    if s.out and s.out != ".":
        os.makedirs(s.out, exist_ok=True)
        _write(os.path.join(s.out, "budget.json"), json.dumps(row, indent=1) + "\n")
    return 0


def _plot(path, rows, results):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "graphtok3d"
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for r in rows:
        ax1.plot(range(1, len(r["loss"]) + 1), r["loss"], marker="o", label=f"seed {r['seed']}")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("mean NLL")
    ax1.legend()
    ax2.bar([str(r["seed"]) for r in rows], [r["accuracy"] for r in rows])
    ax2.set_ylim(0, 1)
    ax2.set_xlabel("seed")
    ax2.set_ylabel("eval accuracy")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_train_toy(s):
    d_2d, d_v, d_e, d_model = _parse_dims(s.toy_dims)
    tcfg = TrainConfig(lr=float(s.lr), epochs=int(s.epochs), batch_size=int(s.batch_size),
                       seed=int(s.seed), k=int(s.k), optimizer=s.optimizer, layout=s.layout,
                       nms_iou=_nms(s.nms_iou), min_dist=float(s.min_dist))
    seeds = tuple(range(int(s.seed), int(s.seed) + int(s.n_seeds)))
    exp = ExperimentConfig(seeds=seeds, n_train=int(s.n_train), n_eval=int(s.n_eval),
                           n_objects=int(s.n_objects), n_classes=int(s.n_classes),
                           d_model=d_model, dims=(d_2d, d_v, d_e), train=tcfg)
    os.makedirs(s.out, exist_ok=True)
    rows = []
    first_model = None
    from .toy import evaluate_grounding, make_dataset

    for seed in seeds:
        if s.noisy:
            data = make_dataset([seed, 7], exp.n_train + exp.n_eval, exp.n_objects, exp.n_classes,
                                dims=exp.dims, noisy=True)
            data = (data[:exp.n_train], data[exp.n_train:])
        else:
            data = split_data(seed, exp)
        model, curve, eval_set = run_seed(seed, exp, tcfg.k, data)
        rows.append({"seed": seed, "accuracy": evaluate_grounding(model, eval_set), "loss": curve})
        if first_model is None:
            first_model = model

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "epoch", "mean_loss"])
    for r in rows:
        for epoch, loss in enumerate(r["loss"], 1):
            writer.writerow([r["seed"], epoch, repr(float(loss))])
    _write(os.path.join(s.out, "losses.csv"), buf.getvalue())
    accs = np.array([r["accuracy"] for r in rows])
    results = {
        "k": tcfg.k, "layout": tcfg.layout, "noisy": bool(s.noisy),
        "per_seed": [{"seed": r["seed"], "accuracy": r["accuracy"]} for r in rows],
        "mean": float(accs.mean()),
        "std": float(accs.std(ddof=1)) if len(accs) > 1 else 0.0,
    }
    _write(os.path.join(s.out, "results.json"), json.dumps(results, indent=1) + "\n")
    save_checkpoint(first_model.projection, os.path.join(s.out, "checkpoint.3dgc"))
    if s.report == "plot":
        _plot(os.path.join(s.out, "report.svg"), rows, results)
    print(f"k={tcfg.k}: mean accuracy {results['mean']:.4f} over {len(seeds)} seed(s)")
    return 0


def cmd_experiment(s):
    d_2d, d_v, d_e, d_model = _parse_dims(s.toy_dims)
    tcfg = TrainConfig(lr=float(s.lr), epochs=int(s.epochs), batch_size=int(s.batch_size))
    seeds = tuple(range(int(s.seed), int(s.seed) + int(s.n_seeds)))
    exp = ExperimentConfig(seeds=seeds, n_train=int(s.n_train), n_eval=int(s.n_eval),
                           n_objects=int(s.n_objects), n_classes=int(s.n_classes), k_graph=int(s.k),
                           d_model=d_model, dims=(d_2d, d_v, d_e), train=tcfg)
    res = run_relation_experiment(exp, progress=lambda r: print(
        f"seed {r['seed']}: k={exp.k_graph} {r['acc_graph']:.3f}  k=0 {r['acc_baseline']:.3f}  "
        f"zeroed edges {r['acc_zeroed_edges']:.3f}", flush=True))
    os.makedirs(s.out, exist_ok=True)
    _write(os.path.join(s.out, "experiment.json"), json.dumps(res, indent=1) + "\n")
    print(f"gap {res['mean_gap']:.3f}, paired one-sided p = {res['p_value']:.2e}")
    return 0


def cmd_eval(s):
    if not s.input:
        raise ValidationError("--input is required")
    try:
        thresholds = tuple(float(t) for t in str(s.thresholds).split(","))
    except ValueError:
        raise ValidationError(f"bad --thresholds {s.thresholds!r}") from None
    result = evaluate_records(read_records(s.input), thresholds, smooth=bool(s.bleu_smoothing))
    os.makedirs(s.out, exist_ok=True)
    _write(os.path.join(s.out, "metrics.json"), dump_metrics(result))
    print(json.dumps(result["metrics"], sort_keys=True))
    return 0


# -- parser ----------------------------------------------------------------------------------

def _graph_flags(p):
    p.add_argument("--k", type=int, help="neighbors per object (default 2, the published operating point)")
    p.add_argument("--nms-iou", help="box IoU at or above which a proposal is suppressed, or 'off' "
                                     "(default 0.99, the published operating point)")
    p.add_argument("--min-dist", type=float,
                   help="minimum centroid distance in meters for a neighbor (default 0.01 = 1 cm, "
                        "the published operating point)")


def build_parser():
    parser = argparse.ArgumentParser(prog="graphtok3d", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     epilog="Exit codes: 0 ok, 2 parse, 3 validation, 4 missing feature, "
                                            "5 training divergence. GRAPHTOK3D_THREADS caps worker threads.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value settings file; explicit flags take precedence")
        p.add_argument("--out", help="output directory (default: current directory)")
        p.add_argument("--seed", type=int, help="seed for all randomness (default 0)")

    p = sub.add_parser("build-graph", help="scene manifest -> graph.json + edge features")
    common(p)
    p.add_argument("--scene", help="scene manifest (JSON)")
    _graph_flags(p)
    p.add_argument("--dims", help="d_2d,d_v,d_e,d_model (default 1024,1024,512,64; encoder widths "
                                  "match the published 2D, 3D and relation encoders)")
    p.add_argument("--edge-features", help="3DGF edge-feature file replacing the geometric stand-in")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("tokenize", help="graph.json -> sequence.json (+ embeddings, prompt)")
    common(p)
    p.add_argument("--graph", help="graph.json from build-graph")
    p.add_argument("--layout", choices=LAYOUTS, help="triplet (default) or edge_only")
    p.add_argument("--dims", help="d_2d,d_v,d_e,d_model for fresh projections (default 1024,1024,512,64)")
    p.add_argument("--features-2d", help="3DGF per-object 2D features")
    p.add_argument("--features-3d", help="3DGF per-object 3D features")
    p.add_argument("--edge-features", help="3DGF edge features (default: the graph's own file)")
    p.add_argument("--checkpoint", help="3DGC projection checkpoint (default: fresh init from --seed)")
    p.add_argument("--query", help="user query; also writes prompt.json")
    p.add_argument("--target", help="assistant target, e.g. <OBJ001>")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("budget", help="token counts of the k-NN and complete-graph layouts")
    p.add_argument("--n", type=int, required=True, help="number of objects")
    p.add_argument("--k", type=int, default=2, help="neighbors per object (default 2)")
    p.add_argument("--out", help="also write budget.json here")
    p.set_defaults(func=cmd_budget)

    def toy_flags(p):
        common(p)
        p.add_argument("--k", type=int, help="neighbors per object (default 2)")
        p.add_argument("--lr", type=float, help="learning rate (default 3e-3)")
        p.add_argument("--epochs", type=int, help="epochs (default 5)")
        p.add_argument("--batch-size", type=int, help="batch size (default 16)")
        p.add_argument("--n-seeds", type=int, help="number of consecutive seeds from --seed (default 1)")
        p.add_argument("--n-train", type=int, help="training queries (default 1000)")
        p.add_argument("--n-eval", type=int, help="evaluation queries (default 500)")
        p.add_argument("--n-objects", type=int, help="objects per synthetic scene (default 8)")
        p.add_argument("--n-classes", type=int, help="class vocabulary size (default 6)")
        p.add_argument("--dims", dest="toy_dims", help="d_2d,d_v,d_e,d_model (default 32,32,24,32)")

    p = sub.add_parser("train-toy", help="train the grounding head on synthetic relational scenes")
    toy_flags(p)
    p.add_argument("--optimizer", choices=("adam", "sgd"), help="default adam")
    p.add_argument("--layout", choices=LAYOUTS, help="triplet (default) or edge_only")
    p.add_argument("--nms-iou", help="default 0.99")
    p.add_argument("--min-dist", type=float, help="default 0.01")
    p.add_argument("--noisy", action="store_true", default=None,
                   help="add duplicated proposals, as a predicted segmentation would")
    p.add_argument("--report", choices=("none", "plot"), help="'plot' also writes report.svg")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("experiment", help="paired-seed k-NN edges vs no edges comparison")
    toy_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("eval", help="JSONL predictions -> metrics.json")
    common(p)
    p.add_argument("--input", help="JSONL with grounding or caption records")
    p.add_argument("--thresholds", help="IoU thresholds (default 0.25,0.5)")
    p.add_argument("--bleu-smoothing", action="store_true", default=None,
                   help="add-one smoothing for 2- to 4-gram BLEU precisions (default off)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    func = args.func
    try:
        settings = _resolve(args)
        return func(settings)
    except GraphTokError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ParseError.exit_code


if __name__ == "__main__":
    sys.exit(main())
