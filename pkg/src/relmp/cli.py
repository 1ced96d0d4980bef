"""Command-line surface: graph building, FLOPs sweeps, verification, training.

Five subcommands over the library — ``build-graph``, ``bench-flops``,
``verify``, ``train-kg``, ``eval``. Every command is deterministic given
identical inputs, flags, and seed; outputs are plain text (TSV/CSV/JSON) and
land only inside the directory named by ``--out``.

Configuration precedence is flags > config file > defaults. The config file
is INI-style with one section per command (``[train-kg]``), keys matching the
flag names with underscores. Whatever wins is echoed into the output
directory as ``resolved_config.ini`` so a run can be reproduced from its
artifacts alone.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 data error.

``--threads N`` pins the BLAS pool size through environment variables. They
must be set before numpy first loads, so this module imports the numeric
stack lazily inside the command bodies; the pin is only effective for a fresh
process (the normal CLI case), not when `main` is called in-process after
numpy is already imported. ``--threads 1`` makes reruns bit-identical.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

from .errors import (ConfigError, ContractError, DataError, GraphError,
                     NumericError, ShapeError)

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_DATA = 3

_THREAD_ENV = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
               "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS")

_TRUE_STATES = {"1": True, "yes": True, "true": True, "on": True,
                "0": False, "no": False, "false": False, "off": False}

# Per-command option registry: key -> (type, default). `path` is a string
# that may stay None. Flags parse with default None so a missing flag falls
# through to the config file and then to these defaults.
_SPECS = {
    "build-graph": {
        "domain": (str, None), "input": ("path", None), "k_medium": (int, 0),
        "seed": (int, 0), "threads": (int, None), "f64": (bool, False),
        "out": ("path", None),
    },
    "bench-flops": {
        "k_max": (int, 24),
        "seed": (int, 0), "threads": (int, None), "f64": (bool, False),
        "out": ("path", None),
    },
    "verify": {
        "suite": (str, "all"), "transforms": (int, 100),
        "inject_fault": (bool, False),
        "seed": (int, 0), "threads": (int, None), "f64": (bool, False),
        "out": ("path", None),
    },
    "train-kg": {
        "epochs": (int, 30), "lr": (float, 5e-3), "batch_size": (int, 16),
        "num_layers": (int, 6), "channels": (int, 32),
        "scorer_hidden": (int, 64), "negatives": (int, 32),
        "scorer_features": (str, "concat_product"), "anneal": (bool, True),
        "train": ("path", None), "valid": ("path", None),
        "test": ("path", None), "people": (int, 100), "data_seed": (int, 0),
        "seed": (int, 0), "threads": (int, None), "f64": (bool, False),
        "out": ("path", None),
    },
    "eval": {
        "model_dir": ("path", None), "split": (str, "test"),
        "train": ("path", None), "valid": ("path", None),
        "test": ("path", None), "people": (int, 100), "data_seed": (int, 0),
        "seed": (int, 0), "threads": (int, None), "f64": (bool, False),
        "out": ("path", None),
    },
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relmp",
        description="Multi-relational graphs, gated message passing, and an "
                    "exact FLOPs cost model.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="random seed (default 0)")
        p.add_argument("--threads", type=int, default=None,
                       help="BLAS thread cap; 1 guarantees bit-identical reruns")
        p.add_argument("--f64", action="store_const", const=True, default=None,
                       help="run tensors in float64")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--config", default=None,
                       help="INI config file; flags override its values")

    p = sub.add_parser("build-graph",
                       help="build an edge list + relation registry from an input file")
    p.add_argument("--domain", choices=("image", "protein", "kg"), default=None)
    p.add_argument("--input", default=None, help="input file for the domain")
    p.add_argument("--k-medium", dest="k_medium", type=int, default=None,
                   help="K for image medium-range neighbors (default 0: none)")
    common(p)

    p = sub.add_parser("bench-flops",
                       help="sweep analytic layer costs over relation counts")
    p.add_argument("--k-max", dest="k_max", type=int, default=None,
                   help="sweep K = 1..k_max (default 24)")
    common(p)

    p = sub.add_parser("verify", help="run verification suites")
    p.add_argument("--suite", default=None,
                   choices=("all", "flops-exact", "gradcheck", "e3", "oracles"))
    p.add_argument("--transforms", type=int, default=None,
                   help="rigid motions for the e3 suite (default 100)")
    p.add_argument("--inject-fault", dest="inject_fault", action="store_const",
                   const=True, default=None,
                   help="test hook: perturb the per-relation linear cost "
                        "constant so flops-exact must fail")
    common(p)

    p = sub.add_parser("train-kg", help="train link prediction on a KG")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--num-layers", dest="num_layers", type=int, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--scorer-hidden", dest="scorer_hidden", type=int, default=None)
    p.add_argument("--negatives", type=int, default=None)
    p.add_argument("--scorer-features", dest="scorer_features", default=None,
                   choices=("concat_product", "concat"))
    p.add_argument("--no-anneal", dest="anneal", action="store_const",
                   const=False, default=None,
                   help="hold the learning rate constant instead of annealing")
    p.add_argument("--train", default=None,
                   help="training triplet TSV (default: bundled toy dataset)")
    p.add_argument("--valid", default=None, help="validation triplet TSV")
    p.add_argument("--test", default=None, help="test triplet TSV")
    p.add_argument("--people", type=int, default=None,
                   help="bundled toy dataset size (default 100)")
    p.add_argument("--data-seed", dest="data_seed", type=int, default=None,
                   help="bundled toy dataset seed (default 0)")
    common(p)

    p = sub.add_parser("eval", help="evaluate a trained KG model checkpoint")
    p.add_argument("--model-dir", dest="model_dir", default=None,
                   help="directory holding model.ckpt + model_config.json")
    p.add_argument("--split", default=None, choices=("valid", "test"))
    p.add_argument("--train", default=None,
                   help="training triplet TSV (default: bundled toy dataset)")
    p.add_argument("--valid", default=None, help="validation triplet TSV")
    p.add_argument("--test", default=None, help="test triplet TSV")
    p.add_argument("--people", type=int, default=None)
    p.add_argument("--data-seed", dest="data_seed", type=int, default=None)
    common(p)
    return parser


def _coerce(key, kind, raw):
    if kind is bool:
        state = _TRUE_STATES.get(str(raw).strip().lower())
        if state is None:
            raise ConfigError(f"config key {key}: not a boolean: {raw!r}")
        return state
    if kind == "path":
        return str(raw)
    try:
        return kind(raw)
    except ValueError as e:
        raise ConfigError(f"config key {key}: bad value {raw!r}") from e


def _resolve_config(command: str, args) -> dict:
    """flags > config-file section [command] > registry defaults."""
    spec = _SPECS[command]
    from_file = {}
    if args.config is not None:
        parser = configparser.ConfigParser()
        if not parser.read(args.config):
            raise DataError(f"{args.config}: cannot read config file")
        if parser.has_section(command):
            from_file = dict(parser[command])
        unknown = set(from_file) - set(spec)
        if unknown:
            raise ConfigError(
                f"{args.config}: unknown keys in [{command}]: {sorted(unknown)}")
    resolved = {}
    explicit = set()
    for key, (kind, default) in spec.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
            explicit.add(key)
        elif key in from_file:
            resolved[key] = _coerce(key, kind, from_file[key])
            explicit.add(key)
        else:
            resolved[key] = default
    resolved["_explicit"] = explicit
    return resolved


def _require(resolved: dict, command: str, *keys):
    for key in keys:
        if resolved[key] is None:
            raise ConfigError(
                f"{command} requires --{key.replace('_', '-')}")


def _prepare_out(resolved: dict, command: str) -> str:
    _require(resolved, command, "out")
    out = resolved["out"]
    os.makedirs(out, exist_ok=True)
    echo = configparser.ConfigParser()
    echo[command] = {k: "" if v is None else str(v)
                     for k, v in sorted(resolved.items())
                     if not k.startswith("_")}
    with open(os.path.join(out, "resolved_config.ini"), "w",
              encoding="utf-8") as f:
        echo.write(f)
    return out


def _apply_threads(count) -> None:
    if count is None:
        return
    if count < 1:
        raise ConfigError("--threads must be a positive integer")
    for var in _THREAD_ENV:
        os.environ[var] = str(count)


# -- commands ------------------------------------------------------------------------------


def cmd_build_graph(resolved: dict) -> int:
    _require(resolved, "build-graph", "domain", "input")
    out = _prepare_out(resolved, "build-graph")
    from .builders import (LONG_RELATIONS, MEDIUM_RELATION, PROTEIN_RELATIONS,
                           SHORT_RELATIONS, fact_graph, image_medium_edges,
                           image_short_edges, load_patch_grid,
                           load_protein_chain, load_triplets, protein_edges)
    from .graph import RelGraph, save_edge_list

    domain, path = resolved["domain"], resolved["input"]
    if domain == "image":
        grid = load_patch_grid(path)
        k = resolved["k_medium"]
        names = list(SHORT_RELATIONS)
        rows = image_short_edges(grid.height, grid.width)
        if k > 0:
            rows = rows + image_medium_edges(grid, k, relation=len(names))
            names.append(MEDIUM_RELATION)
        patches = grid.height * grid.width
        graph = RelGraph(patches, len(names), rows)
        registry = {
            "domain": "image", "height": grid.height, "width": grid.width,
            "channels": grid.channels, "relations": names,
            "long_range": {
                "relations": list(LONG_RELATIONS),
                "global_node": patches,
                "context_nodes": list(range(patches + 1, 2 * patches + 1)),
                "num_virtual_nodes": patches + 1,
            },
        }
        comments = [f"domain=image height={grid.height} width={grid.width}"]
    elif domain == "protein":
        chain = load_protein_chain(path)
        graph, names = protein_edges(chain)
        registry = {
            "domain": "protein", "num_residues": chain.length,
            "num_nodes": chain.length + 1, "relations": list(names),
            "virtual_nodes": [chain.length],
        }
        comments = [f"domain=protein residues={chain.length}"]
    else:
        data = load_triplets(path)
        if not data.train.triplets:
            raise DataError(f"{path}: no triplets")
        graph = fact_graph(data.train)
        registry = {
            "domain": "kg", "entities": data.entities,
            "relations": data.relations,
            "num_relations_with_inverses": data.num_relations,
            "inverse_offset": len(data.relations),
        }
        comments = [f"domain=kg entities={data.num_entities} "
                    f"triplets={len(data.train.triplets)}"]

    edges_path = os.path.join(out, "edges.tsv")
    registry_path = os.path.join(out, "registry.json")
    save_edge_list(edges_path, graph, comments=comments)
    with open(registry_path, "w", encoding="utf-8") as f:
        json.dump(registry, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {edges_path} ({graph.num_edges} edges)")
    print(f"wrote {registry_path}")
    return EXIT_OK


def cmd_bench_flops(resolved: dict) -> int:
    out = _prepare_out(resolved, "bench-flops")
    from .costmodel import sweep_csv, sweep_relation_counts

    rows = sweep_relation_counts(resolved["k_max"])
    csv_path = os.path.join(out, "bench.csv")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(sweep_csv(rows))
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_verify(resolved: dict) -> int:
    from . import costmodel, verify

    if resolved["inject_fault"]:
        costmodel.GRMP_PER_RELATION_LINEAR = 8
    names = verify.SUITES if resolved["suite"] == "all" else (resolved["suite"],)
    report = verify.run_suites(names, seed=resolved["seed"],
                               transforms=resolved["transforms"])
    report["inject_fault"] = bool(resolved["inject_fault"])
    text = json.dumps(report, indent=2)
    print(text)
    if resolved["out"] is not None:
        out = _prepare_out(resolved, "verify")
        report_path = os.path.join(out, "verify_report.json")
        with open(report_path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def _load_kg_data(resolved: dict):
    from .builders import load_triplets
    from .training import toy_kinship_kg

    if resolved["train"] is not None:
        return (load_triplets(resolved["train"], resolved["valid"],
                              resolved["test"]),
                {"train": resolved["train"], "valid": resolved["valid"],
                 "test": resolved["test"]})
    if resolved["valid"] is not None or resolved["test"] is not None:
        raise ConfigError("--valid/--test need --train as well")
    return (toy_kinship_kg(num_people=resolved["people"],
                           seed=resolved["data_seed"]),
            {"bundled_toy": {"people": resolved["people"],
                             "seed": resolved["data_seed"]}})


def cmd_train_kg(resolved: dict) -> int:
    out = _prepare_out(resolved, "train-kg")
    from .models import KGModelConfig
    from .tensor import save_checkpoint
    from .training import save_metric_history, train_kg

    data, data_desc = _load_kg_data(resolved)
    cfg = KGModelConfig(num_layers=resolved["num_layers"],
                        channels=resolved["channels"],
                        scorer_hidden=resolved["scorer_hidden"],
                        negatives=resolved["negatives"],
                        scorer_features=resolved["scorer_features"])
    params, history = train_kg(data, cfg, epochs=resolved["epochs"],
                               seed=resolved["seed"], lr=resolved["lr"],
                               batch_size=resolved["batch_size"],
                               anneal=resolved["anneal"])
    metrics_path = os.path.join(out, "metrics.csv")
    save_metric_history(metrics_path, history)
    ckpt_path = os.path.join(out, "model.ckpt")
    save_checkpoint(ckpt_path, params.tensors())
    model_cfg = {"num_entities": data.num_entities,
                 "num_relations": data.num_relations,
                 "num_layers": cfg.num_layers, "channels": cfg.channels,
                 "scorer_hidden": cfg.scorer_hidden,
                 "negatives": cfg.negatives,
                 "scorer_features": cfg.scorer_features,
                 "data": data_desc}
    config_path = os.path.join(out, "model_config.json")
    with open(config_path, "w", encoding="utf-8") as f:
        json.dump(model_cfg, f, indent=2, sort_keys=True)
        f.write("\n")
    for epoch, split, metric, value in history:
        if split == "test":
            print(f"test {metric} = {value}")
    print(f"wrote {metrics_path}")
    print(f"wrote {ckpt_path}")
    print(f"wrote {config_path}")
    return EXIT_OK


def cmd_eval(resolved: dict) -> int:
    _require(resolved, "eval", "model_dir")
    import numpy as np

    from .builders import fact_graph
    from .models import KGModelConfig, KGModelParams
    from .tensor import load_checkpoint
    from .training import kg_evaluate, known_tails, save_metric_history

    config_path = os.path.join(resolved["model_dir"], "model_config.json")
    ckpt_path = os.path.join(resolved["model_dir"], "model.ckpt")
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            stored = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{config_path}: cannot read model config ({e})")
    cfg = KGModelConfig(num_layers=stored["num_layers"],
                        channels=stored["channels"],
                        scorer_hidden=stored["scorer_hidden"],
                        negatives=stored["negatives"],
                        scorer_features=stored["scorer_features"])
    # when no data source is named, evaluate against the dataset the
    # checkpoint was trained on, as recorded next to it
    data_keys = ("train", "valid", "test", "people", "data_seed")
    if not (resolved["_explicit"] & set(data_keys)):
        recorded = stored.get("data", {})
        if "bundled_toy" in recorded:
            resolved["people"] = recorded["bundled_toy"]["people"]
            resolved["data_seed"] = recorded["bundled_toy"]["seed"]
        elif "train" in recorded:
            for key in ("train", "valid", "test"):
                resolved[key] = recorded.get(key)
    out = _prepare_out(resolved, "eval")
    data, _ = _load_kg_data(resolved)
    if (data.num_entities != stored["num_entities"]
            or data.num_relations != stored["num_relations"]):
        raise DataError(
            f"dataset has {data.num_entities} entities / "
            f"{data.num_relations} relations but the checkpoint was trained "
            f"on {stored['num_entities']} / {stored['num_relations']}")
    params = KGModelParams.init(np.random.default_rng(0), data.num_entities,
                                data.num_relations, cfg)
    weights = load_checkpoint(ckpt_path)
    tensors = params.tensors()
    if set(weights) != set(tensors):
        raise DataError(f"{ckpt_path}: checkpoint tensors do not match the model")
    for name, tensor in tensors.items():
        if tuple(weights[name].shape) != tensor.shape:
            raise DataError(f"{ckpt_path}: shape mismatch for {name}")
        tensor.data = weights[name].astype(tensor.data.dtype)

    store = data.valid if resolved["split"] == "valid" else data.test
    graph = fact_graph(data.train)
    known = known_tails([data.train, data.valid, data.test])
    metrics = kg_evaluate(params, graph, store, known)
    rows = [(0, resolved["split"], key, metrics[key])
            for key in ("mr", "mrr", "hits@1", "hits@3", "hits@10")]
    metrics_path = os.path.join(out, "metrics.csv")
    save_metric_history(metrics_path, rows)
    for _, split, metric, value in rows:
        print(f"{split} {metric} = {value}")
    print(f"wrote {metrics_path}")
    return EXIT_OK


_COMMANDS = {
    "build-graph": cmd_build_graph,
    "bench-flops": cmd_bench_flops,
    "verify": cmd_verify,
    "train-kg": cmd_train_kg,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        resolved = _resolve_config(args.command, args)
        _apply_threads(resolved["threads"])
        if resolved["f64"]:
            import numpy as np

            from .tensor import default_dtype
            with default_dtype(np.float64):
                return _COMMANDS[args.command](resolved)
        return _COMMANDS[args.command](resolved)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ContractError, GraphError, NumericError,
            ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
