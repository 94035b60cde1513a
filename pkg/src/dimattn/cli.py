"""Command-line driver: ``dimattn <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 verification failure.
Config files are JSON; every flag has a config-file equivalent and flags
override file values.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .core import DiminishConfig, DomainError, parse_diminish
from .decode import DecodeConfig, decode
from .metrics import corpus_bleu, coverage_entropy, instance_bundle, short_long_split, write_csv
from .seq2seq import TrainConfig, load_checkpoint, pretrain_then_finetune, save_checkpoint
from .synth import DELIMITER, CorpusFormatError, TaskSpec, generate, load_tsv, read_corpus_tokens, write_corpus

EXIT_OK, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


class UsageError(ValueError):
    pass


# --- configuration ------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    attention: DiminishConfig = field(default_factory=DiminishConfig)
    output_dir: str = "run"
    seed: int = 0
    data: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        for key in ("attention", "renormalize", "detach_p"):
            train.pop(key, None)
        return {
            "task": self.task.to_dict(),
            "train": train,
            "decode": self.decode.to_dict(),
            "attention": self.attention.to_dict(),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "data": dict(self.data),
        }


_SECTION_TYPES = {"task": TaskSpec, "train": TrainConfig, "decode": DecodeConfig}
_TRAIN_SKIP = {"attention"}


def _check_type(path: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
        want = "a boolean"
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
        want = "an integer"
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        want = "a number"
    elif isinstance(default, str):
        ok = isinstance(value, str)
        want = "a string"
    elif isinstance(default, tuple):
        ok = isinstance(value, (list, tuple))
        want = "a list"
    else:
        # optional fields default to None; accept numbers
        ok = value is None or (isinstance(value, (int, float)) and not isinstance(value, bool))
        want = "a number or null"
    if not ok:
        raise ConfigError(f"{path}: expected {want}, got {value!r}")


def _build_section(name: str, values: dict):
    cls = _SECTION_TYPES[name]
    if not isinstance(values, dict):
        raise ConfigError(f"{name}: expected an object")
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)} - (_TRAIN_SKIP if name == "train" else set())
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown field")
        _check_type(f"{name}.{key}", value, getattr(defaults, key))
    try:
        return cls(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def build_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected a JSON object")
    allowed = {"task", "train", "decode", "attention", "output_dir", "seed", "data"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{key}: unknown field")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    task_doc = dict(doc.get("task", {}))
    task_doc.setdefault("seed", seed)
    train_doc = dict(doc.get("train", {}))
    train_doc.setdefault("seed", seed)
    att = doc.get("attention", "standard")
    try:
        attention = parse_diminish(att) if isinstance(att, str) else parse_diminish(
            att.get("attention", "standard"), att.get("renormalize", False), att.get("detach_p", True)
        )
    except (ValueError, AttributeError) as exc:
        raise ConfigError(f"attention: {exc}") from None
    data = doc.get("data", {})
    if not isinstance(data, dict) or any(k not in ("train", "val", "test") for k in data):
        raise ConfigError("data: expected an object with train/val/test paths")
    output_dir = doc.get("output_dir", "run")
    if not isinstance(output_dir, str):
        raise ConfigError("output_dir: expected a string")
    cfg = ExperimentConfig(
        task=_build_section("task", task_doc),
        train=_build_section("train", train_doc),
        decode=_build_section("decode", doc.get("decode", {})),
        attention=attention,
        output_dir=output_dir,
        seed=seed,
        data=dict(data),
    )
    cfg.train.attention = attention
    return cfg


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"<file>: config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<file>: {path} is not valid JSON ({exc})") from None


def _set(doc: dict, dotted: str, value):
    if value is None:
        return
    node = doc
    parts = dotted.split(".")
    for key in parts[:-1]:
        node = node.setdefault(key, {})
    node[parts[-1]] = value


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def write_manifest(path: Path, command: str, config: dict, seed: Optional[int], outputs: Sequence[str]):
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "config": config,
        "seed": seed,
        "versions": {"dimattn": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "outputs": list(outputs),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")


# --- commands -----------------------------------------------------------------------------


def _pairs(instances):
    return [(i.source, i.target) for i in instances]


def cmd_train(args) -> int:
    doc = load_config(args.config)
    _set(doc, "seed", args.seed)
    _set(doc, "output_dir", args.output_dir)
    _set(doc, "attention", args.attention)
    _set(doc, "train.epochs", args.epochs)
    _set(doc, "train.lr", args.lr)
    _set(doc, "train.d", args.d)
    _set(doc, "task.kind", args.task)
    _set(doc, "data.train", args.train_file)
    cfg = build_config(doc)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if "train" in cfg.data:
        vocab, train_set, _ = load_tsv(cfg.data["train"])
        splits = {"train": train_set}
        for name in ("val", "test"):
            if name in cfg.data:
                splits[name] = load_tsv(cfg.data[name], vocab)[1]
    else:
        corpus = generate(cfg.task)
        vocab = corpus.vocab
        splits = {"train": corpus.train, "val": corpus.val, "test": corpus.test}
        for name, insts in splits.items():
            write_corpus(out / f"{name}.tsv", insts, vocab, corpus.meta)
    losses: List[tuple] = []
    params, _ = pretrain_then_finetune(
        cfg.train, _pairs(splits["train"]), len(vocab), log=lambda e, loss, val: losses.append((e, loss))
    )
    save_checkpoint(out / "checkpoint.json", params, vocab, cfg.to_dict())
    with open(out / "losses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for step, (_, loss) in enumerate(losses):
            writer.writerow([step, f"{loss:.8f}"])
    outputs = ["checkpoint.json", "losses.csv"] + ([] if "train" in cfg.data else ["train.tsv", "val.tsv", "test.tsv"])
    write_manifest(out / "manifest.json", "train", cfg.to_dict(), cfg.seed, outputs)
    print(f"trained {len(losses)} epochs, final loss {losses[-1][1]:.4f}; wrote {out}")
    return EXIT_OK


def _read_sources(path: str) -> List[List[str]]:
    """Source token lists from a corpus file (first column) or one source per line."""
    text = Path(path).read_text().splitlines()
    if any("\t" in line for line in text):
        return [src for src, _ in read_corpus_tokens(path)[1]]
    return [line.split() for line in text if line.strip() and not line.startswith("#")]


def _read_references(path: str):
    """(targets, sources or None) from a corpus file or a plain one-per-line file."""
    text = Path(path).read_text().splitlines()
    if any("\t" in line for line in text):
        rows = read_corpus_tokens(path)[1]
        return [t for _, t in rows], [s for s, _ in rows]
    return [line.split() for line in text if not line.startswith("#")], None


def cmd_decode(args) -> int:
    params, vocab, ck_config = load_checkpoint(args.checkpoint)
    doc = load_config(args.config)
    dec_doc = dict(doc.get("decode", ck_config.get("decode", {})))
    for key in ("mode", "width", "max_len", "alpha", "ngram_block", "min_len"):
        value = getattr(args, key)
        if value is not None:
            dec_doc[key] = value
    dcfg = _build_section("decode", dec_doc)
    att_spec = args.attention or doc.get("attention") or ck_config.get("attention", {}).get("attention", "standard")
    try:
        att = parse_diminish(att_spec)
    except ValueError as exc:
        raise ConfigError(f"attention: {exc}") from None
    sources = _read_sources(args.input)
    out = Path(args.output)
    dump = Path(args.attention_dump) if args.attention_dump else out.with_suffix(".attn.jsonl")
    with open(out, "w") as gen_fh, open(dump, "w") as att_fh:
        for index, tokens in enumerate(sources):
            try:
                ids = vocab.encode(tokens)
            except KeyError as exc:
                raise UsageError(f"vocabulary mismatch on input line {index + 1}: {exc.args[0]}") from None
            rec = decode(params, ids, dcfg, att)
            d = rec.to_dict(index, vocab)
            gen_fh.write(json.dumps({k: d[k] for k in (
                "index", "source_tokens", "output_tokens", "log_prob", "finished", "fallback")}) + "\n")
            att_fh.write(json.dumps({
                "index": index, "attention": att.spec(), "source_tokens": d["source_tokens"],
                "output_tokens": d["output_tokens"], "raw": d["raw"], "effective": d["effective"],
                "coverage": d["coverage"],
            }) + "\n")
    config = {"checkpoint": args.checkpoint, "input": args.input, "decode": dcfg.to_dict(), "attention": att.spec()}
    write_manifest(out.with_suffix(".manifest.json"), "decode", config, None, [str(out), str(dump)])
    print(f"decoded {len(sources)} inputs -> {out}, attention dump -> {dump}")
    return EXIT_OK


def _read_jsonl(path: str) -> List[dict]:
    rows = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise UsageError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from None
    return rows


def _mean_row(rows: List[dict], label: str) -> dict:
    out = {"index": label}
    for key in rows[0]:
        if key == "index":
            continue
        vals = [r[key] for r in rows if isinstance(r.get(key), (int, float)) and not math.isnan(r[key])]
        out[key] = float(np.mean(vals)) if vals else float("nan")
    return out


def cmd_eval(args) -> int:
    gens = _read_jsonl(args.generations)
    refs, ref_sources = _read_references(args.references)
    sources = _read_sources(args.sources) if args.sources else ref_sources
    if len(gens) != len(refs):
        raise UsageError(f"length mismatch: {len(gens)} generations vs {len(refs)} references")
    if sources is not None and len(sources) != len(gens):
        raise UsageError(f"length mismatch: {len(gens)} generations vs {len(sources)} sources")
    coverages = {}
    if args.attention_dump:
        for rec in _read_jsonl(args.attention_dump):
            coverages[rec["index"]] = rec["coverage"]
    rows = []
    for i, (gen, ref) in enumerate(zip(gens, refs)):
        cand = gen.get("output_tokens", gen.get("output"))
        if cand is None:
            raise UsageError(f"generation {i} has no output_tokens")
        src = sources[i] if sources is not None else None
        bundle = instance_bundle(cand, ref, src, coverages.get(gen.get("index", i)), args.delimiter, args.lead_k)
        rows.append({"index": i, "src_len": len(src) if src is not None else len(cand), **bundle.flat()})
    agg = _mean_row(rows, "mean")
    agg["bleu"] = corpus_bleu([g.get("output_tokens") for g in gens], refs, smooth=args.smooth)
    out_rows = rows + [agg]
    if sources is not None and len(rows) >= 2:
        short, long = short_long_split(rows, lambda half: half, length=lambda r: r["src_len"])
        out_rows.append(_mean_row(short, "short_half"))
        out_rows.append(_mean_row(long, "long_half"))
    write_csv(args.output, out_rows)
    config = {"generations": args.generations, "references": args.references, "sources": args.sources,
              "delimiter": args.delimiter, "lead_k": args.lead_k, "smooth": args.smooth}
    write_manifest(Path(args.output).with_suffix(".manifest.json"), "eval", config, None, [args.output])
    print(f"rouge1_f={agg['rouge1_f']:.4f} rougeL_f={agg['rougeL_f']:.4f} bleu={agg['bleu']:.4f} "
          f"rep2={agg.get('rep2', float('nan')):.4f} -> {args.output}")
    return EXIT_OK


def validate_attention_matrix(raw, index, tol: float = 1e-4) -> np.ndarray:
    try:
        A = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise UsageError(f"instance {index}: attention is not a numeric matrix") from None
    if A.ndim != 2 or A.shape[1] == 0:
        raise UsageError(f"instance {index}: attention must be a non-empty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)) or np.any(A < 0):
        raise UsageError(f"instance {index}: attention has negative or non-finite entries")
    sums = A.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        row = int(np.argmax(np.abs(sums - 1.0)))
        raise UsageError(f"instance {index}: row {row} sums to {sums[row]:.6f}, not 1")
    return A


def cmd_analyze_attn(args) -> int:
    try:
        att = parse_diminish(args.attention)
    except ValueError as exc:
        raise ConfigError(f"attention: {exc}") from None
    records = _read_jsonl(args.dump)
    metric_rows = []
    with open(args.output, "w") as fh:
        for pos, rec in enumerate(records):
            index = rec.get("index", pos)
            if "raw" not in rec:
                raise UsageError(f"instance {index}: record has no 'raw' matrix")
            A = validate_attention_matrix(rec["raw"], index)
            eff = att.effective_matrix(A)
            cov = eff.sum(axis=0)
            ent = coverage_entropy(cov) if cov.sum() > 0 else float("nan")
            fh.write(json.dumps({"index": index, "attention": att.spec(), "raw": A.tolist(),
                                 "effective": eff.tolist(), "coverage": cov.tolist(), "entropy": ent}) + "\n")
            raw_cov = A.sum(axis=0)
            metric_rows.append({"index": index, "states": A.shape[1], "steps": A.shape[0],
                                "entropy": ent, "raw_entropy": coverage_entropy(raw_cov),
                                "effective_total": float(cov.sum())})
    if args.metrics:
        write_csv(args.metrics, metric_rows + [_mean_row(metric_rows, "mean")] if metric_rows else metric_rows)
    write_manifest(Path(args.output).with_suffix(".manifest.json"), "analyze-attn",
                   {"dump": args.dump, "attention": att.spec()}, None, [args.output])
    mean_h = np.mean([r["entropy"] for r in metric_rows]) if metric_rows else float("nan")
    print(f"analyzed {len(records)} instances with {att.spec()}; mean entropy {mean_h:.4f}")
    return EXIT_OK


def cmd_greedy_demo(args) -> int:
    from .greedy import WeightedCoverageFunction, brute_force_maximize, greedy_maximize, load_instance

    if args.instance:
        try:
            f, m = load_instance(args.instance)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"bad instance file: {exc}") from None
    else:
        n, m = args.random
        if not 1 <= m <= n <= 24:
            raise UsageError("--random needs 1 <= m <= n <= 24")
        f = WeightedCoverageFunction.random(np.random.default_rng(args.seed), n, args.concepts)
    greedy = greedy_maximize(f, m, lazy=args.lazy)
    opt_set, opt = brute_force_maximize(f, m)
    ratio = 1.0 if opt == 0 else greedy.value / opt
    bound = 1.0 - 1.0 / math.e - 1e-9
    report = {
        "n": f.n, "m": m, "greedy_set": greedy.subset, "greedy_value": greedy.value, "trace": greedy.trace,
        "optimum_set": opt_set, "optimum_value": opt, "ratio": ratio, "bound": bound, "ok": ratio >= bound,
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK if ratio >= bound else EXIT_VERIFY


def cmd_verify(args) -> int:
    from .verify import report, run_all

    results = run_all(args.scale)
    print(report(results))
    failed = [r.name for r in results if not r.passed]
    print("all checks passed" if not failed else f"failed: {', '.join(failed)}")
    return EXIT_OK if not failed else EXIT_VERIFY


def _parse_seeds(text: str) -> List[int]:
    seeds = []
    for part in text.split(","):
        lo, sep, hi = part.partition("-")
        try:
            seeds.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
        except ValueError:
            raise UsageError(f"bad seed list {text!r}") from None
    return seeds


def cmd_experiment(args) -> int:
    from .experiments import ProbeConfig, directional_summary, layout_probe_experiment, repeat_trap_experiment

    cfg = ProbeConfig()
    if args.variants:
        cfg.variants = tuple(args.variants.split(";"))
    if "standard" not in cfg.variants:
        raise UsageError("variants must include 'standard' as the baseline")
    for v in cfg.variants:
        try:
            parse_diminish(v)
        except ValueError as exc:
            raise ConfigError(f"variants: {exc}") from None
    seeds = _parse_seeds(args.seeds)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = repeat_trap_experiment if args.probe == "repeat-trap" else layout_probe_experiment
    results = run(seeds, cfg, log=lambda msg: print(msg, flush=True))
    write_csv(out / "seeds.csv", [r.row() for r in results])
    summary = directional_summary(results)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out / "manifest.json", f"experiment {args.probe}", {**cfg.to_dict(), "seeds": seeds},
                   None, ["seeds.csv", "summary.json"])
    print(json.dumps(summary, indent=2))
    return EXIT_OK


# --- parser -------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dimattn", description="Diminishing attention toolkit")
    p.add_argument("--version", action="version", version=f"dimattn {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a seq2seq model on a synthetic task or a corpus file")
    t.add_argument("--config")
    t.add_argument("--output-dir")
    t.add_argument("--seed", type=int)
    t.add_argument("--attention", help="standard | dim:<g> | dydim:<g1>,<g2> | dim@<preset>")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--d", type=int)
    t.add_argument("--task", choices=("copy", "keyword", "repeat_trap"))
    t.add_argument("--train-file")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="decode sources with a checkpoint")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--input", required=True, help="corpus file or one whitespace-tokenized source per line")
    d.add_argument("--output", required=True, help="generations (JSON lines)")
    d.add_argument("--attention-dump", help="attention dump path (default: <output>.attn.jsonl)")
    d.add_argument("--config")
    d.add_argument("--attention")
    d.add_argument("--mode", choices=("greedy", "beam"))
    d.add_argument("--width", type=int)
    d.add_argument("--max-len", dest="max_len", type=int)
    d.add_argument("--alpha", type=float)
    d.add_argument("--ngram-block", dest="ngram_block", type=int)
    d.add_argument("--min-len", dest="min_len", type=int)
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="score generations against references")
    e.add_argument("--generations", required=True)
    e.add_argument("--references", required=True, help="corpus file (targets, sources) or one reference per line")
    e.add_argument("--sources")
    e.add_argument("--attention-dump")
    e.add_argument("--output", required=True)
    e.add_argument("--delimiter", default=DELIMITER)
    e.add_argument("--lead-k", dest="lead_k", type=int, default=3)
    e.add_argument("--smooth", action="store_true", help="add-one BLEU smoothing")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze-attn", help="apply dim/dydim offline to an attention dump")
    a.add_argument("--dump", required=True)
    a.add_argument("--attention", required=True)
    a.add_argument("--output", required=True)
    a.add_argument("--metrics")
    a.set_defaults(func=cmd_analyze_attn)

    g = sub.add_parser("greedy-demo", help="greedy vs brute-force submodular maximization")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--instance")
    src.add_argument("--random", nargs=2, type=int, metavar=("N", "M"))
    g.add_argument("--concepts", type=int, default=6)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--lazy", action="store_true")
    g.set_defaults(func=cmd_greedy_demo)

    v = sub.add_parser("verify", help="run the invariant and gradient suite")
    v.add_argument("--scale", type=float, default=1.0, help="fraction of the full randomized trial counts")
    v.set_defaults(func=cmd_verify)

    x = sub.add_parser("experiment", help="desk-scale directional probes")
    x.add_argument("probe", choices=("repeat-trap", "layout-probe"))
    x.add_argument("--seeds", default="0-9")
    x.add_argument("--variants", help="';'-separated attention specs, must include standard")
    x.add_argument("--output-dir", default="experiment")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (UsageError, CorpusFormatError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_USAGE
