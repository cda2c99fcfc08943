"""Command-line entry point: ``cmin <subcommand> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .data import SynthConfig, dataset_stats, gen_synthetic, load_dataset, save_dataset
from .interaction import write_attention
from .params import grad_check
from .train import (Checkpoint, ablate, build_model, evaluate, format_table, layer_sweep,
                    prediction_records, train)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    return cfg.with_overrides({k.strip(): v.strip() for k, v in overrides.items()}).validate()


def _emit(obj, out=None) -> None:
    text = json.dumps(obj, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_synth(args):
    fields = {f.name: f.type for f in dataclasses.fields(SynthConfig)}
    values = {}
    for kv in args.set or []:
        k, v = (s.strip() for s in kv.split("=", 1))
        if k not in fields:
            raise ValueError(f"unknown synth key {k!r}")
        values[k] = float(v) if fields[k] in ("float", float) else int(v)
    syn = gen_synthetic(SynthConfig(**values))
    save_dataset(args.out, {"train": syn.train, "test": syn.test})
    _emit({"train": len(syn.train), "test": len(syn.test), "out": str(args.out)})


def cmd_train(args):
    cfg = _config(args)
    ds = load_dataset(args.data, args.split, cap=cfg.cap)
    ck = train(cfg, ds)
    ck.save(args.out)
    _emit({"epochs": ck.epoch, "loss": ck.history, "checkpoint": str(args.out)})


def cmd_eval(args):
    ck = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.data, args.split, cap=ck.config.cap)
    _emit(evaluate(ck, ds).record(), args.out)


def cmd_predict(args):
    ck = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.data, args.split, cap=ck.config.cap)
    lines = [json.dumps(r, sort_keys=True) for r in prediction_records(ck.model(), ds, args.top_k)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_ablate(args):
    cfg = _config(args)
    tr = load_dataset(args.data, "train", cap=cfg.cap)
    te = load_dataset(args.data, args.split, cap=cfg.cap)
    table = ablate(cfg, tr, te)
    print(format_table(table))
    _emit({name: rep.record() for name, rep in table.items()}, args.out)


def cmd_sweep(args):
    cfg = _config(args)
    tr = load_dataset(args.data, "train", cap=cfg.cap)
    te = load_dataset(args.data, args.split, cap=cfg.cap)
    for l, r03, r05 in layer_sweep(cfg, tr, te, [int(x) for x in args.layers.split(",")]):
        _emit({"layers": l, "R@1,IoU=0.3": r03, "R@1,IoU=0.5": r05})


def cmd_gradcheck(args):
    cfg = _config(args)
    ds = load_dataset(args.data, args.split, cap=cfg.cap)
    ds = ds.subset(range(min(args.samples, len(ds))))
    model = build_model(cfg.replace(dtype="float64"), ds)
    batch = model.collate([model.sample(ds, q) for q in ds.queries])
    err = grad_check(lambda: model.loss(batch), model.params.trainable(), eps=args.eps)
    _emit({"max_relative_error": err, "parameters": model.params.trainable().size()})
    if err > args.tol:
        raise SystemExit(1)


def cmd_export_attention(args):
    ck = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.data, args.split, cap=ck.config.cap)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    maps = ck.model().attention_maps(ds)
    for q, w in zip(ds.queries, maps):
        write_attention(out / f"{q.query_id}.txt", w)
    _emit({"written": len(maps), "dir": str(out)})


def cmd_stats(args):
    root = Path(args.data)
    for split in sorted(p.stem for p in root.glob("*.jsonl")):
        _emit({"split": split, **dataset_stats(load_dataset(root, split))})


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cmin", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True, split="test"):
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--split", default=split)
        if config:
            p.add_argument("--config", help="key = value config file")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train and save a checkpoint")
    common(p, split="train")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    for name, fn, help_ in (("eval", cmd_eval, "R@n,IoU=m on a split"),
                            ("predict", cmd_predict, "ranked moments per query"),
                            ("export-attention", cmd_export_attention, "frame-to-word weight matrices")):
        p = sub.add_parser(name, help=help_)
        common(p, config=False)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--out", required=name == "export-attention")
        if name == "predict":
            p.add_argument("--top-k", type=int, default=5)
        p.set_defaults(fn=fn)

    p = sub.add_parser("ablate", help="full model against each single ablation")
    common(p)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep-layers", help="GCN depth sweep")
    common(p)
    p.add_argument("--layers", default="1,2,3,4,5")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    common(p)
    p.add_argument("--samples", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("stats", help="per-split dataset summary")
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_stats)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
