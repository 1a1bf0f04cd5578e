"""Command-line entry point: ``python -m pbpa <command>``.

Commands read a flat ``key = value`` run config (``#`` starts a comment).
Every metric is printed on its own line as ``<name> <fields...>`` so scripts
can grep for it; wall-clock timings only ever appear on lines starting with
``time``. Exit codes: 0 ok, 1 check failure, 2 config error, 3 I/O error,
4 digest mismatch, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import checks
from .errors import ContractError, FormatError, NumericError
from .geometry import PART_NAMES, pair_name
from .model import (
    Model,
    ModelConfig,
    inspect_attention,
    load_checkpoint,
    lr_at,
    mean_average_precision,
    plan_scene,
    save_checkpoint,
    train,
)
from .synthdata import CATALOGUE, GenConfig, generate_dataset, read_dataset

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_DIGEST, EXIT_NUMERIC = range(6)

PATH_KEYS = {"train_data": "train.pbpd", "test_data": "test.pbpd", "checkpoint": "model.pbpa", "report": ""}
EXTRA_KEYS = {"log_every": 100}


class ConfigError(ValueError):
    pass


class DigestError(RuntimeError):
    pass


def _defaults() -> dict:
    out = {}
    for f in fields(ModelConfig):
        out[f.name] = getattr(ModelConfig(), f.name)
    for f in fields(GenConfig):
        out.setdefault(f.name, getattr(GenConfig(), f.name))
    out.update(PATH_KEYS)
    out.update(EXTRA_KEYS)
    return out


DEFAULTS = _defaults()


def _parse_value(key: str, text: str):
    default = DEFAULTS[key]
    if isinstance(default, tuple):
        return tuple(int(v) for v in text.split(",") if v.strip())
    if isinstance(default, bool):
        if text.lower() not in ("true", "false", "1", "0"):
            raise ValueError(text)
        return text.lower() in ("true", "1")
    return type(default)(text)


class RunConfig:
    """Parsed run config: every known key, with defaults for missing ones."""

    def __init__(self, values: Optional[dict] = None, source: str = "<defaults>"):
        self.values = dict(DEFAULTS)
        self.explicit = set()
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"{source}: unknown key {k!r}")
            self.values[k] = v
            self.explicit.add(k)
        self.source = source

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: key {key!r} given twice")
            try:
                values[key] = _parse_value(key, val)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: bad value {val!r} for {key!r}") from None
        return cls(values, source)

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.parse(text, str(path))

    def __getitem__(self, key):
        return self.values[key]

    def model_config(self) -> ModelConfig:
        kw = {f.name: self.values[f.name] for f in fields(ModelConfig)}
        try:
            return ModelConfig(**kw)
        except ContractError as exc:
            raise ConfigError(f"{self.source}: {exc}") from None

    def gen_config(self) -> GenConfig:
        kw = {f.name: self.values[f.name] for f in fields(GenConfig)}
        try:
            return GenConfig(**kw)
        except ContractError as exc:
            raise ConfigError(f"{self.source}: {exc}") from None

    def echo(self, out) -> None:
        for k, v in self.values.items():
            shown = ",".join(map(str, v)) if isinstance(v, tuple) else v
            tag = "" if k in self.explicit else " (default)"
            print(f"config {k} = {shown}{tag}", file=out)


# --------------------------------------------------------------------------
# helpers


def _digest_array(d: bytes) -> np.ndarray:
    return np.frombuffer(d, dtype=np.uint8).astype(np.float64)


def _read_data(path: str, cfg: RunConfig, role: str):
    try:
        ds = read_dataset(path)
    except OSError as exc:
        raise OSError(f"cannot read {role} dataset {path}: {exc.strerror}") from None
    expected = cfg.gen_config().digest()
    if ds.cfg_digest != expected:
        raise DigestError(f"{role} dataset {path} was generated with a different config "
                          f"(digest {ds.cfg_digest.hex()[:12]}, config gives {expected.hex()[:12]})")
    return ds


def _load_model(cfg: RunConfig, path: str):
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint {path} not found")
    model, meta = load_checkpoint(path, cfg.model_config())
    expected = _digest_array(cfg.gen_config().digest())
    if "meta.digest" not in meta or not np.array_equal(meta["meta.digest"], expected):
        raise DigestError(f"checkpoint {path} was trained on data from a different config")
    return model, int(meta.get("meta.step", np.zeros(1))[0])


def _class_name(c: int) -> str:
    return CATALOGUE[c].name


def _candidate_name(j: int) -> str:
    from .geometry import PAIRS

    return pair_name(j) if j < len(PAIRS) else PART_NAMES[j - len(PAIRS)]


class _Tee:
    """Write metric lines to stdout and, optionally, a report file."""

    def __init__(self, path: str):
        self.lines = []
        self.path = path

    def __call__(self, line: str) -> None:
        print(line)
        self.lines.append(line)

    def close(self) -> None:
        if self.path:
            Path(self.path).write_text("\n".join(self.lines) + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = RunConfig.load(args.config)
    cfg.echo(sys.stdout)
    gcfg = cfg.gen_config()
    t0 = time.perf_counter()
    ds = generate_dataset(args.seed, args.n, gcfg, path=args.out)
    counts = ds.labels().sum(axis=0)
    print(f"scenes {len(ds)}")
    for c, n in enumerate(counts):
        print(f"positives {c} {_class_name(c)} {int(n)}")
    print(f"digest {gcfg.digest().hex()}")
    print(f"time gen {time.perf_counter() - t0:.3f}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    cfg.echo(sys.stdout)
    mcfg = cfg.model_config()
    ds = _read_data(cfg["train_data"], cfg, "train")
    if ds.n_classes != mcfg.n_classes:
        raise DigestError(f"train dataset has {ds.n_classes} classes, config says {mcfg.n_classes}")
    ckpt = args.checkpoint or cfg["checkpoint"]
    start = 0
    if args.resume:
        model, start = _load_model(cfg, ckpt)
        print(f"resume {start}")
    else:
        model = Model(mcfg)
    end = mcfg.steps if args.until is None else min(args.until, mcfg.steps)
    t0 = time.perf_counter()
    plans = [plan_scene(s, mcfg) for s in ds]
    every = max(1, int(cfg["log_every"]))
    step = start
    while step < end:
        stop = min(end, (step // every + 1) * every)
        trace = train(model, ds, plans, start_step=step, steps=stop - step)
        print(f"step {stop - 1} loss {float(trace[-1])!r} lr {lr_at(mcfg, stop - 1)!r}")
        step = stop
    extra = {"meta.digest": _digest_array(cfg.gen_config().digest()), "meta.step": np.array([float(end)])}
    save_checkpoint(ckpt, model, extra)
    print(f"checkpoint {ckpt} step {end}")
    print(f"time train {time.perf_counter() - t0:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config)
    cfg.echo(sys.stdout)
    model, _ = _load_model(cfg, args.checkpoint or cfg["checkpoint"])
    ds = _read_data(cfg["test_data"], cfg, "test")
    t0 = time.perf_counter()
    scores, _, _ = model.predict(ds)
    mp, aps = mean_average_precision(scores, ds.labels())
    out = _Tee(cfg["report"])
    for c, ap in enumerate(aps):
        out(f"class_ap {c} {float(ap)!r}")
    out(f"map {float(mp)!r}")
    out.close()
    print(f"time eval {time.perf_counter() - t0:.3f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    cfg = RunConfig.load(args.config)
    cfg.echo(sys.stdout)
    model, _ = _load_model(cfg, args.checkpoint or cfg["checkpoint"])
    ds = _read_data(cfg["test_data"], cfg, "test")
    if args.top < 1:
        raise ConfigError(f"--top must be >= 1, got {args.top}")
    t0 = time.perf_counter()
    rep = inspect_attention(model, ds, top=args.top)
    out = _Tee(cfg["report"])
    for c in range(model.cfg.n_classes):
        if c in rep.omitted:
            out(f"notice class {c} {_class_name(c)} has no positives; omitted")
            continue
        names = " ".join(_candidate_name(j) for j in rep.top[c])
        out(f"top_pairs {c} {_class_name(c)} {names}")
    out(f"attn_top1 {float(rep.top1)!r}")
    out(f"attn_top5 {float(rep.top5)!r}")
    out.close()
    print(f"time inspect {time.perf_counter() - t0:.3f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    failed = []

    def report(r):
        print(f"gradcheck {r.name} {r.error:.6e} {'ok' if r.passed else 'FAIL'}")
        if not r.passed:
            failed.append(r.name)

    checks.run_checks(args.only or None, report=report)
    print(f"time gradcheck {time.perf_counter() - t0:.3f}")
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pbpa", description="Pairwise body-part attention on synthetic scenes.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset file")
    g.add_argument("config", nargs="?")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train and write a checkpoint")
    t.add_argument("config")
    t.add_argument("--checkpoint", help="overrides the config's checkpoint path")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint's step")
    t.add_argument("--until", type=int, help="stop after this many total steps (schedule is unchanged)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="print per-class AP and mAP on the test set")
    e.add_argument("config", nargs="?")
    e.add_argument("--checkpoint")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of every op")
    c.add_argument("--scale", choices=["mini"], default="mini")
    c.add_argument("--only", nargs="*", choices=list(checks.CHECKS), help="run a subset of checks")
    c.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("inspect", help="most selected body-part pairs per class")
    i.add_argument("config", nargs="?")
    i.add_argument("--checkpoint")
    i.add_argument("--top", type=int, default=5)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DigestError as exc:
        print(f"digest mismatch: {exc}", file=sys.stderr)
        return EXIT_DIGEST
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
