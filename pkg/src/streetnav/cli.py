"""``streetnav`` command line: gen, run, train, eval, extract-eval, gradcheck, stats.

Every command resolves its effective settings as defaults < ``--config``
JSON < explicit flags, and writes a ``manifest.json`` recording them (plus
output checksums) next to its artifacts.  Feeding a manifest back through
``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Callable


from . import __version__
from .errors import ConfigError, StreetNavError

DEFAULTS: dict[str, dict[str, Any]] = {
    "gen": {
        "nodes": 20, "routes": 5, "seed": 0, "dim": 32, "regions": 4, "branching": 3, "turns": 2,
        "heading_mode": "random", "oneway_prob": 0.1, "out": "world",
    },
    "run": {
        "world": None, "policy": "oracle", "params": None, "tau": 0.8, "seed": 0, "rounds": 2,
        "max_steps": None, "jobs": 1, "noise_std": 0.0, "noise_seed": 0, "out": "run",
    },
    "train": {
        "world": None, "epochs": 50, "lr": 0.5, "lambda1": 0.5, "lambda2": 0.5, "seed": 0,
        "rounds": 2, "out": "train",
    },
    "eval": {"world": None, "traces": None, "out": "eval"},
    "extract-eval": {"instances": None, "world": None, "responses": None, "out": "extract-eval"},
    "gradcheck": {"seed": 0, "seeds": 20, "dim": 6, "eps": 1e-5, "lambda1": 0.5, "lambda2": 0.5, "out": "gradcheck"},
    "stats": {"records": None, "seed": 0, "out": "stats"},
}

GRAD_TOL = 1e-5


# -- plumbing ---------------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def resolve(command: str, args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then the ``--config`` file (a plain mapping or a manifest), then explicit flags."""
    cfg = dict(DEFAULTS[command])
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        doc = doc.get("effective", doc)
        unknown = set(doc) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown {command} settings in {args.config}: {sorted(unknown)}")
        cfg.update(doc)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def write_manifest(out: Path, command: str, cfg: dict, files: list[Path]) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "effective": cfg,
        "outputs": {str(f.relative_to(out)): _sha256(f) for f in sorted(files)},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_json(path: Path, doc: Any) -> Path:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _require(cfg: dict, key: str) -> Any:
    if cfg.get(key) in (None, "", []):
        raise ConfigError(f"--{key.replace('_', '-')} is required")
    return cfg[key]


# -- commands -----------------------------------------------------------------------------------


def cmd_gen(cfg: dict) -> int:
    from .worldgen import WorldConfig, generate_world

    wc = WorldConfig(
        nodes=cfg["nodes"], route_count=cfg["routes"], seed=cfg["seed"], feature_dim=cfg["dim"],
        regions_per_view=cfg["regions"], branching=cfg["branching"], landmarks_per_route=cfg["turns"],
        heading_mode=cfg["heading_mode"], oneway_prob=cfg["oneway_prob"],
    )
    world = generate_world(wc)
    out = Path(cfg["out"])
    world.save(out)
    files = [out / "graph.json", out / "observations.json", out / "instances.jsonl"]
    write_manifest(out, "gen", cfg, files)
    print(f"nodes={len(world.graph.nodes)} edges={len(world.graph.edges)} instances={len(world.instances)}")
    return 0


def _load_world(path: str):
    from .data import WorldBundle

    return WorldBundle.load(path)


def cmd_run(cfg: dict) -> int:
    from .agent import (
        LinearPolicy, OraclePolicy, RandomPolicy, RunConfig, build_components, init_agent_params,
        run_episodes, save_trace,
    )
    from .kernels import ParamBundle
    from .metrics import evaluate, message_errors

    world = _load_world(_require(cfg, "world"))
    run_cfg = RunConfig(max_steps=cfg["max_steps"], tau=cfg["tau"], seed=cfg["seed"], rounds=cfg["rounds"])
    if cfg["params"]:
        params = ParamBundle.load(cfg["params"])
    else:
        params = init_agent_params(world.feature_dim, run_cfg.out_dim, run_cfg.max_landmarks, cfg["seed"])
    components = build_components(world.feature_dim, params, run_cfg, cfg["noise_std"], cfg["noise_seed"])
    factories: dict[str, Callable] = {
        "oracle": OraclePolicy,
        "random": RandomPolicy,
        "linear": lambda: LinearPolicy(params),
    }
    if cfg["policy"] not in factories:
        raise ConfigError(f"unknown policy {cfg['policy']!r}")
    instances = sorted(world.instances, key=lambda i: i.id)
    traces = run_episodes(world, instances, components, factories[cfg["policy"]], run_cfg, cfg["jobs"])

    out = Path(cfg["out"])
    (out / "traces").mkdir(parents=True, exist_ok=True)
    files = []
    for trace, inst in zip(traces, instances):
        path = out / "traces" / f"{inst.id}.jsonl"
        save_trace(trace, path, world.graph, inst.goal)
        files.append(path)
    result = evaluate(list(zip(traces, instances)), world.graph)
    errors = [message_errors(t, i) for t, i in zip(traces, instances)]
    report = json.loads(result.to_json())
    report["messages"] = {
        "false_positives_per_episode": sum(e[0] for e in errors) / len(errors),
        "false_negatives_per_episode": sum(e[1] for e in errors) / len(errors),
        "messages_per_episode": sum(len(s.messages) for t in traces for s in t.steps) / len(traces),
    }
    files.append(_write_json(out / "metrics.json", report))
    write_manifest(out, "run", cfg, files)
    print(result.table(cfg["policy"]))
    m = report["messages"]
    print(f"messages/ep={m['messages_per_episode']:.3f} fp/ep={m['false_positives_per_episode']:.3f} "
          f"fn/ep={m['false_negatives_per_episode']:.3f}")
    return 0


def cmd_train(cfg: dict) -> int:
    from .agent import LossConfig, TrainConfig, train_policy

    worlds = [_load_world(w) for w in _require(cfg, "world")]
    tc = TrainConfig(
        epochs=cfg["epochs"], lr=cfg["lr"], seed=cfg["seed"], rounds=cfg["rounds"],
        loss=LossConfig(cfg["lambda1"], cfg["lambda2"]),
    )
    result = train_policy(worlds, tc)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    result.params.save(out / "params.json")
    files = [out / "params.json", _write_json(out / "losses.json", {"epoch_loss": result.losses})]
    write_manifest(out, "train", cfg, files)
    if result.losses:
        print(f"epochs={len(result.losses)} first_loss={result.losses[0]:.6f} final_loss={result.losses[-1]:.6f}")
    else:
        print("epochs=0 (parameters left at initialization)")
    return 0


def cmd_eval(cfg: dict) -> int:
    from .agent import load_trace
    from .metrics import evaluate

    world = _load_world(_require(cfg, "world"))
    trace_dir = Path(_require(cfg, "traces"))
    paths = sorted(trace_dir.glob("*.jsonl"))
    if not paths:
        raise ConfigError(f"no trace files under {trace_dir}")
    pairs = []
    for p in paths:
        trace = load_trace(p)
        pairs.append((trace, world.instance(trace.instance_id)))
    result = evaluate(pairs, world.graph)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "metrics.json"
    path.write_text(result.to_json() + "\n", encoding="utf-8")
    write_manifest(out, "eval", cfg, [path])
    print(result.table(trace_dir.name))
    return 0


def cmd_extract_eval(cfg: dict) -> int:
    from .data import load_instances
    from .extractor import extract_landmarks, prf1_table, read_provider_responses, score_corpus

    if cfg["instances"]:
        instances = load_instances(cfg["instances"])
        column = Path(cfg["instances"]).stem
    elif cfg["world"]:
        instances = _load_world(cfg["world"]).instances
        column = Path(cfg["world"]).name
    else:
        raise ConfigError("extract-eval needs --instances or --world")
    gold = {i.id: i.landmark_phrases() for i in instances}
    rows = {"rule-based": {column: score_corpus(
        (extract_landmarks(i.instruction).phrases, gold[i.id]) for i in instances)}}
    if cfg["responses"]:
        answers = read_provider_responses(cfg["responses"])
        rows["provider"] = {column: score_corpus(
            (answers[i.id].phrases if i.id in answers else (), gold[i.id]) for i in instances)}
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    report = {name: {c: vars(s) for c, s in by_col.items()} for name, by_col in rows.items()}
    path = _write_json(out / "report.json", report)
    write_manifest(out, "extract-eval", cfg, [path])
    print(prf1_table(rows, [column]))
    return 0


def cmd_gradcheck(cfg: dict) -> int:
    from .agent import LossConfig
    from .gradcheck import encoder_case, loss_case

    seeds = range(cfg["seed"], cfg["seed"] + cfg["seeds"])
    loss = LossConfig(cfg["lambda1"], cfg["lambda2"])
    enc = [encoder_case(s, dim=cfg["dim"], eps=cfg["eps"]) for s in seeds]
    lss = [loss_case(s, dim=cfg["dim"], eps=cfg["eps"], loss=loss) for s in seeds]
    report = {
        "encoder_max_rel_error": max(r.max_rel_error for r in enc),
        "loss_max_rel_error": max(r.max_rel_error for r in lss),
        "loss_value_gap": max(r.value_gap for r in lss),
        "tolerance": GRAD_TOL,
    }
    report["passed"] = report["encoder_max_rel_error"] < GRAD_TOL and report["loss_max_rel_error"] < GRAD_TOL
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = _write_json(out / "report.json", report)
    write_manifest(out, "gradcheck", cfg, [path])
    print(f"encoder max_rel_error={report['encoder_max_rel_error']:.3e} "
          f"loss max_rel_error={report['loss_max_rel_error']:.3e} "
          f"{'PASS' if report['passed'] else 'FAIL'}")
    return 0 if report["passed"] else 1


def cmd_stats(cfg: dict) -> int:
    from .data import dataset_stats, load_landmark_records, split_records

    records = load_landmark_records(_require(cfg, "records"))
    split = split_records(records, seed=cfg["seed"])
    report = {"stats": dataset_stats(records), "split_sizes": dict(zip(("train", "val", "test"), split.sizes()))}
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    files = [
        _write_json(out / "report.json", report),
        _write_json(out / "split.json", {"train": list(split.train), "val": list(split.val), "test": list(split.test)}),
    ]
    write_manifest(out, "stats", cfg, files)
    s = report["stats"]
    print(f"records={s['count']} avg_caption_words={s['avg_caption_words']:.2f} "
          f"split={split.sizes()[0]}/{split.sizes()[1]}/{split.sizes()[2]}")
    return 0


COMMANDS: dict[str, Callable[[dict], int]] = {
    "gen": cmd_gen,
    "run": cmd_run,
    "train": cmd_train,
    "eval": cmd_eval,
    "extract-eval": cmd_extract_eval,
    "gradcheck": cmd_gradcheck,
    "stats": cmd_stats,
}


# -- argument parsing -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streetnav", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON settings (or a manifest); explicit flags win")
        p.add_argument("--out", help="output directory")
        return p

    g = command("gen", "generate a synthetic world")
    g.add_argument("--nodes", type=int)
    g.add_argument("--routes", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--regions", type=int)
    g.add_argument("--branching", type=int)
    g.add_argument("--turns", type=int, help="interior turns per route")
    g.add_argument("--heading-mode", dest="heading_mode", choices=["random", "aligned"])
    g.add_argument("--oneway-prob", dest="oneway_prob", type=float)

    r = command("run", "run episodes and write traces")
    r.add_argument("--world")
    r.add_argument("--policy", choices=["oracle", "random", "linear"])
    r.add_argument("--params", help="trained parameter file for --policy linear")
    r.add_argument("--tau", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--rounds", type=int)
    r.add_argument("--max-steps", dest="max_steps", type=int)
    r.add_argument("--jobs", type=int)
    r.add_argument("--noise-std", dest="noise_std", type=float, help="logit noise of the landmark scorer")
    r.add_argument("--noise-seed", dest="noise_seed", type=int)

    t = command("train", "train the linear policy and encoder")
    t.add_argument("--world", nargs="+")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lambda1", type=float)
    t.add_argument("--lambda2", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--rounds", type=int)

    e = command("eval", "score saved traces")
    e.add_argument("--world")
    e.add_argument("--traces")

    x = command("extract-eval", "score landmark extraction against gold annotations")
    x.add_argument("--instances")
    x.add_argument("--world")
    x.add_argument("--responses", help="provider response JSONL to score alongside")

    c = command("gradcheck", "finite-difference check of encoder and loss gradients")
    c.add_argument("--seed", type=int)
    c.add_argument("--seeds", type=int)
    c.add_argument("--dim", type=int)
    c.add_argument("--eps", type=float)
    c.add_argument("--lambda1", type=float)
    c.add_argument("--lambda2", type=float)

    s = command("stats", "dataset statistics and 6:2:2 split")
    s.add_argument("--records")
    s.add_argument("--seed", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except (StreetNavError, ValueError, KeyError, OSError) as exc:
        print(f"streetnav {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
