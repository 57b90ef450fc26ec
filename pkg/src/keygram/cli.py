"""The `keygram` command-line interface.

Machine-readable results go to stdout (JSON unless --csv); diagnostics go
to stderr. Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .ablation import gates_csv, greedy_layer_search, scores_csv, summary_json
from .backbone import probe_gates, train
from .config import Config, config_hash, load_config
from .errors import KeygramError
from .hashing import MemoryAddress
from .memory import (
    RowUpdate,
    apply_updates,
    expand_capacity,
    expand_slots,
    init_memory,
    load,
    retrieve,
    save,
)
from .parser import (
    KeyGram,
    Lexicon,
    encode,
    extract_from_instruction,
    normalize,
    serialize_keygrams,
    validate_external,
)


def _config_from(args) -> Config:
    config = load_config(args.config) if args.config else Config()
    if getattr(args, "seed", None) is not None:
        from .config import with_seed
        config = with_seed(config, args.seed)
    return config


def _cmd_extract(args) -> int:
    lexicon = Lexicon.load(args.lexicon_dir) if args.lexicon_dir else None
    grams = extract_from_instruction(args.instruction, budget=args.budget,
                                     max_words=args.max_words, lexicon=lexicon)
    print(serialize_keygrams(grams))
    return 0


def _cmd_hash(args) -> int:
    words = normalize(args.phrase)
    if len(words) > args.max_words:
        raise KeygramError(f"phrase has {len(words)} words, limit {args.max_words}")
    gram = KeyGram(tuple(words))
    if args.memory:
        memory = load(args.memory)
        key = encode(gram, memory.max_words)
        specs = [memory.tables(args.layer, args.slot, head)[0].spec
                 for head in range(memory.heads)]
    else:
        from .hashing import make_hash_spec
        key = encode(gram, args.max_words)
        specs = [make_hash_spec(args.layer, args.slot, head, args.max_words,
                                args.capacity, args.seed or 0)
                 for head in range(args.heads)]
    from .hashing import hash_key
    for spec in specs:
        address = hash_key(key.ids, spec)
        print(json.dumps({"head": spec.head, "row": address.row, "P": spec.modulus}))
    return 0


def _cmd_init_memory(args) -> int:
    config = _config_from(args)
    seed = args.seed if args.seed is not None else config.train.seed
    memory = init_memory(
        layers=sorted(config.backbone.insert_layers),
        slots=config.memory.slots, heads=config.memory.heads,
        head_width=config.memory.head_width, capacity=config.memory.capacity,
        seed=seed, init_scale=config.memory.init_scale,
        max_words=config.parser.max_words)
    save(memory, args.out)
    print(json.dumps({
        "path": args.out, "layers": memory.layer_indices(), "slots": memory.slots,
        "heads": memory.heads, "head_width": memory.head_width,
        "capacity": memory.capacity, "seed": seed,
    }))
    return 0


def _cmd_lookup(args) -> int:
    memory = load(args.memory)
    parse = Path(args.grams).read_text("utf-8")
    grams = validate_external(parse, budget=memory.slots, max_words=memory.max_words)
    keys = [encode(g, memory.max_words) for g in grams.grams]
    vector = retrieve(keys, args.layer, memory)
    print(json.dumps({
        "layer": args.layer,
        "length": int(vector.size),
        "values": [float(x) for x in vector],
    }))
    return 0


def _cmd_expand(args) -> int:
    if (args.add_slots is None) == (args.add_generation is None):
        raise UsageError("pass exactly one of --add-slots / --add-generation")
    memory = load(args.memory)
    if args.add_slots is not None:
        expand_slots(memory, args.add_slots)
        action = {"added_slots": args.add_slots, "slots": memory.slots}
    else:
        try:
            slot, head = (int(x) for x in args.add_generation.split(","))
        except ValueError:
            raise UsageError("--add-generation wants 'slot,head'") from None
        expand_capacity(memory, slot, head)
        action = {"added_generation": [slot, head],
                  "generations": len(memory.tables(memory.layer_indices()[0], slot, head))}
    out = args.out or args.memory
    save(memory, out)
    print(json.dumps({"path": out, **action}))
    return 0


def _cmd_apply_updates(args) -> int:
    memory = load(args.memory)
    spec = json.loads(Path(args.updates).read_text("utf-8"))
    if not isinstance(spec, dict) or not isinstance(spec.get("updates"), list):
        raise KeygramError("updates file wants {\"updates\": [...]}")
    updates = []
    for entry in spec["updates"]:
        address = MemoryAddress(layer=entry["layer"], slot=entry["slot"],
                                head=entry["head"], generation=entry.get("generation", 0),
                                row=entry["row"])
        updates.append(RowUpdate(address, np.asarray(entry["delta"], dtype=np.float32)))
    apply_updates(memory, updates, learning_rate=args.lr)
    out = args.out or args.memory
    save(memory, out)
    print(json.dumps({"path": out, "applied": len(updates), "lr": args.lr}))
    return 0


def _cmd_train(args) -> int:
    config = _config_from(args)
    result = train(config, use_memory=not args.baseline)
    summary = {
        "seed": result.metrics["seed"],
        "config_hash": config_hash(config),
        "metrics": result.metrics,
    }
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
        with (out / "curve.csv").open("w") as f:
            f.write("step,loss,train_exact,test_exact\n")
            for point in result.curve:
                f.write(f"{point['step']},{point['loss']:.6f},"
                        f"{point['train']['exact']:.4f},{point['test']['exact']:.4f}\n")
        print(json.dumps({**summary, "out_dir": str(out)}))
    else:
        print(json.dumps(summary))
    return 0


def _cmd_ablate(args) -> int:
    config = _config_from(args)
    report = greedy_layer_search(config)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.csv").write_text(scores_csv(report))
        (out / "gates.csv").write_text(gates_csv(report))
        (out / "summary.json").write_text(summary_json(report))
        print(json.dumps({"out_dir": str(out),
                          "selected_layers": list(report.selected_layers),
                          "best_score": report.best_score}))
    else:
        print(summary_json(report))
    return 0


def _cmd_probe(args) -> int:
    config = _config_from(args)
    result = train(config, use_memory=True)
    probe = result.task.test[:256] or result.task.train[:256]
    profile = probe_gates(result.model, result.task, probe, result.bridge)
    if args.csv:
        print("layer,mean_gate,normalized_gate")
        for entry in profile:
            print(f"{entry['layer']},{entry['mean_gate']:.6f},"
                  f"{entry['normalized_gate']:.6f}")
    else:
        print(json.dumps({"layers": profile}))
    return 0


def _cmd_bench_lookup(args) -> int:
    sizes = [int(x) for x in args.sizes.split(",")] if args.sizes \
        else list(bench_mod.DEFAULT_SIZES)
    results = bench_mod.bench_lookup(
        sizes=sizes, trials=args.trials, slots=args.slots, heads=args.heads,
        head_width=args.head_width, seed=args.seed or 0)
    if args.csv:
        print(bench_mod.results_csv(results), end="")
    else:
        print(bench_mod.results_json(results))
    return 0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="keygram", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="instruction -> key-grams")
    p.add_argument("--instruction", required=True)
    p.add_argument("--budget", type=int, default=8)
    p.add_argument("--max-words", type=int, default=4)
    p.add_argument("--lexicon-dir")
    p.set_defaults(fn=_cmd_extract)

    p = sub.add_parser("hash", help="phrase -> per-head rows")
    p.add_argument("--phrase", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--slot", type=int, required=True)
    p.add_argument("--memory")
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--capacity", type=int, default=8192)
    p.add_argument("--max-words", type=int, default=4)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_hash)

    p = sub.add_parser("init-memory", help="create a memory file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_init_memory)

    p = sub.add_parser("lookup", help="retrieve a memory vector")
    p.add_argument("--memory", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--grams", required=True, help="JSON file {\"keywords\": [...]}")
    p.set_defaults(fn=_cmd_lookup)

    p = sub.add_parser("expand", help="grow slots or append a generation")
    p.add_argument("--memory", required=True)
    p.add_argument("--add-slots", type=int)
    p.add_argument("--add-generation", help="slot,head")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_expand)

    p = sub.add_parser("apply-updates", help="sparse row updates against a memory file")
    p.add_argument("--memory", required=True)
    p.add_argument("--updates", required=True, help="JSON file {\"updates\": [...]}")
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_apply_updates)

    p = sub.add_parser("train", help="train the toy model")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--baseline", action="store_true", help="train without memory")
    p.add_argument("--out-dir")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("ablate", help="greedy layer-placement search")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("probe", help="train, then emit the gate profile")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(fn=_cmd_probe)

    p = sub.add_parser("bench-lookup", help="latency quantiles vs table size")
    p.add_argument("--sizes", help="comma-separated ascending capacities")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--slots", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--head-width", type=int, default=16)
    p.add_argument("--seed", type=int)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(fn=_cmd_bench_lookup)

    return parser


def run_cli(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (KeygramError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
