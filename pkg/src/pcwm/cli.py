"""Command-line entry point: ``pcwm <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path


from .errors import ConfigError, PcwmError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("pcwm")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- run configuration -----------------------------------------------------------

@dataclass
class RunConfig:
    embed: dict = field(default_factory=dict)
    decoder: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    seed: int = 0
    workers: int = 1
    limit: int | None = None
    val_limit: int | None = None
    variants: int = 1

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        cfg = cls(**data)
        for name in ("embed", "decoder", "train"):
            if not isinstance(getattr(cfg, name), dict):
                raise ConfigError(f"{path}: '{name}' must be an object")
        for name in ("seed", "workers", "variants"):
            if not isinstance(getattr(cfg, name), int) or getattr(cfg, name) < 0:
                raise ConfigError(f"{path}: '{name}' must be a non-negative integer")
        return cfg

    def override(self, args) -> "RunConfig":
        for name in ("seed", "workers", "limit", "val_limit", "variants"):
            value = getattr(args, name, None)
            if value is not None:
                setattr(self, name, value)
        for name in ("epochs", "lr", "batch_size"):
            value = getattr(args, name, None)
            if value is not None:
                self.train[name] = value
        for name in ("alpha", "mode", "n_bits", "n_points"):
            value = getattr(args, name, None)
            if value is not None:
                self.embed[name] = value
        if "seed" not in self.train:
            self.train["seed"] = self.seed
        return self

    def embed_config(self):
        from .harness import EmbedConfig
        return EmbedConfig.from_dict(self.embed)

    def train_config(self):
        from .neural.trainer import TrainConfig
        return TrainConfig.from_dict(self.train)

    def decoder_config(self, n_bits: int):
        from .errors import ConfigMismatch
        from .neural.model import DecoderConfig
        try:
            return DecoderConfig.from_dict({"n_bits": n_bits, **self.decoder})
        except (ConfigMismatch, TypeError) as exc:
            raise ConfigError(str(exc)) from None


def _positive(name):
    def check(text):
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        if not (math.isfinite(value) and value > 0):
            raise argparse.ArgumentTypeError(f"{name} must be positive, got {text}")
        return value
    return check


def _count(name, minimum=1):
    def check(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {text!r}") from None
        if value < minimum:
            raise argparse.ArgumentTypeError(f"{name} must be >= {minimum}, got {value}")
        return value
    return check


def _bits(text):
    if not text or set(text) - {"0", "1"}:
        raise argparse.ArgumentTypeError(f"--bits must be a string of 0/1, got {text!r}")
    return text


# -- subcommands -----------------------------------------------------------------

def cmd_sample(args) -> int:
    from .geometry_io import load_mesh, normalize, sample_surface, write_cloud

    cloud = sample_surface(load_mesh(args.mesh), args.points, args.seed, Path(args.mesh).name)
    if not args.raw:
        cloud, _ = normalize(cloud)
    write_cloud(cloud, args.output)
    print(f"wrote {len(cloud)} points to {args.output}")
    return EXIT_OK


def cmd_embed(args) -> int:
    from .geometry_io import normalize, read_cloud, write_cloud
    from .watermark import embed

    cloud = read_cloud(args.cloud)
    if args.normalize:
        cloud, _ = normalize(cloud)
    wm, key = embed(cloud, args.bits, args.alpha, args.mode)
    write_cloud(wm, args.output)
    key.save(args.key)
    print(f"embedded {args.bits} ({key.mode.value}, alpha={key.alpha}) -> {args.output}, key {args.key}")
    return EXIT_OK


def cmd_extract(args) -> int:
    from .geometry_io import read_cloud
    from .watermark import EmbedKey, bits_str, extract

    print(bits_str(extract(read_cloud(args.cloud), EmbedKey.load(args.key))))
    return EXIT_OK


def cmd_attack(args) -> int:
    from .attacks import AttackSpec, apply_attack
    from .geometry_io import read_cloud, write_cloud

    if (args.spec is None) == (args.kind is None):
        raise UsageError("give exactly one of --spec or --kind")
    spec = AttackSpec.load(args.spec) if args.spec else AttackSpec(args.kind, {}, args.seed)
    if args.spec and args.seed is not None:
        spec = spec.with_seed(args.seed)
    out = apply_attack(read_cloud(args.cloud), spec)
    write_cloud(out, args.output)
    print(f"{spec.label}: {len(out)} points -> {args.output}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .geometry_io import read_cloud
    from .metrics import bit_accuracy, chamfer, iou_bits, psnr
    from .watermark import EmbedKey, as_bits, extract

    a, b = read_cloud(args.a), read_cloud(args.b)
    result = {"chamfer": chamfer(a, b), "psnr": psnr(a, b)}
    if (args.key is None) != (args.bits is None):
        raise UsageError("--key and --bits must be given together")
    if args.key:
        key = EmbedKey.load(args.key)
        truth = as_bits(args.bits)
        got = extract(b, key)
        acc = bit_accuracy(truth, got)
        result.update(accuracy=acc, ber=1.0 - acc, iou=iou_bits(truth, got),
                      extracted="".join(map(str, got)))
    for k, v in result.items():
        print(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}")
    return EXIT_OK


def _run_config(args) -> RunConfig:
    return RunConfig.load(getattr(args, "config", None)).override(args)


def cmd_train(args) -> int:
    from .harness import build_manifest, train_decoder
    from .neural.checkpoint import save_checkpoint

    rc = _run_config(args)
    ecfg, tcfg = rc.embed_config(), rc.train_config()
    dcfg = rc.decoder_config(ecfg.n_bits)
    manifest = build_manifest(args.dataset, ecfg.n_points, ecfg.n_bits, rc.seed, rc.workers)
    log_path = args.log or Path(args.output).with_suffix(".log.csv")
    ckpt, history = train_decoder(manifest, ecfg, dcfg, tcfg, log_path, rc.limit, rc.val_limit,
                                  rc.variants, rc.workers)
    save_checkpoint(ckpt, args.output)
    print(f"best val_acc {ckpt.best_val_acc:.4f} at epoch {ckpt.epoch}; "
          f"checkpoint {args.output}, log {log_path}")
    return EXIT_OK


def _load_ckpt(path, n_bits):
    from .neural.checkpoint import load_checkpoint
    ckpt = load_checkpoint(path)
    if ckpt.config.n_bits != n_bits:
        raise ConfigError(f"checkpoint decodes {ckpt.config.n_bits} bits, embedding uses {n_bits}")
    return ckpt


def _embed_from_checkpoint(rc: RunConfig, ckpt):
    """Embedding settings: run config first, then what the checkpoint was trained with."""
    stored = (ckpt.meta or {}).get("embed", {}) if ckpt is not None else {}
    merged = {**stored, **rc.embed}
    from .harness import EmbedConfig
    return EmbedConfig.from_dict(merged)


def cmd_evaluate(args) -> int:
    from .attacks import AttackSpec
    from .harness import build_manifest, default_attacks, ownership_roc, render_report, run_evaluation

    rc = RunConfig.load(args.key_config).override(args)
    ckpt = None
    if args.ckpt:
        from .neural.checkpoint import load_checkpoint
        ckpt = load_checkpoint(args.ckpt)
    ecfg = _embed_from_checkpoint(rc, ckpt)
    if ckpt is not None:
        ckpt = _load_ckpt(args.ckpt, ecfg.n_bits)
    attacks = default_attacks(rc.seed)
    if args.attacks:
        data = json.loads(Path(args.attacks).read_text())
        if not isinstance(data, list):
            raise ConfigError("--attacks file must hold a JSON list of attack specs")
        attacks = [AttackSpec.from_dict(d) for d in data]
    manifest = build_manifest(args.dataset, ecfg.n_points, ecfg.n_bits, rc.seed, rc.workers)
    bundle = run_evaluation(manifest, ecfg, ckpt, attacks, rc.seed, rc.limit, rc.workers)
    if ckpt is not None:
        bundle.roc, bundle.auc = ownership_roc(manifest, ecfg, ckpt, args.negatives, rc.seed,
                                               rc.limit, rc.workers)
    paths = render_report(bundle, args.output)
    print(Path(args.output, "gap_table.md").read_text(), end="")
    print(f"wrote {len(paths)} files to {args.output}; skipped {len(bundle.skipped)} clouds")
    return EXIT_OK


def cmd_roc(args) -> int:
    from .harness import build_manifest, ownership_roc, write_roc
    from .neural.checkpoint import load_checkpoint

    rc = RunConfig.load(args.key_config).override(args)
    ckpt = load_checkpoint(args.ckpt)
    ecfg = _embed_from_checkpoint(rc, ckpt)
    ckpt = _load_ckpt(args.ckpt, ecfg.n_bits)
    manifest = build_manifest(args.dataset, ecfg.n_points, ecfg.n_bits, rc.seed, rc.workers)
    roc, auc = ownership_roc(manifest, ecfg, ckpt, args.negatives, rc.seed, rc.limit, rc.workers)
    write_roc(roc, auc, args.output)
    print(f"AUC {auc:.4f}; wrote roc.csv and roc.svg to {args.output}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import write_dataset

    root = write_dataset(args.root, args.train, args.test, args.seed)
    print(f"wrote synthetic dataset to {root}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> Parser:
    p = Parser(prog="pcwm", description="Point-cloud watermarking toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    s = sub.add_parser("sample", help="sample a mesh surface into a point cloud")
    s.add_argument("mesh", help="OFF or PLY mesh")
    s.add_argument("--points", type=_count("--points"), default=1024)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--raw", action="store_true", help="skip normalization")
    s.add_argument("-o", "--output", required=True, help="output .pcb or .xyz")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("embed", help="embed a watermark")
    s.add_argument("cloud")
    s.add_argument("--bits", type=_bits, required=True, help="watermark, e.g. 101")
    s.add_argument("--alpha", type=_positive("--alpha"), default=2.0)
    s.add_argument("--mode", choices=("reference", "qim"), default="reference")
    s.add_argument("--normalize", action="store_true", help="normalize the input first")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--key", required=True, help="where to write the JSON key")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("extract", help="extract and print watermark bits")
    s.add_argument("cloud")
    s.add_argument("--key", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("attack", help="apply one attack")
    s.add_argument("cloud")
    s.add_argument("--spec", help="attack spec JSON file")
    s.add_argument("--kind", help="attack kind with default parameters")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("metrics", help="fidelity (and optionally recovery) metrics")
    s.add_argument("a", help="reference cloud")
    s.add_argument("b", help="compared cloud")
    s.add_argument("--key")
    s.add_argument("--bits", type=_bits)
    s.set_defaults(func=cmd_metrics)

    def common(s, config_flag="--config"):
        s.add_argument("--dataset", required=True, help="ModelNet-style root or a single mesh")
        s.add_argument(config_flag, dest="config" if config_flag == "--config" else "key_config",
                       help="run configuration JSON")
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=_count("--workers"))
        s.add_argument("--limit", type=_count("--limit"), help="use only the first N clouds per split")
        s.add_argument("--alpha", type=_positive("--alpha"))
        s.add_argument("--mode", choices=("reference", "qim"))
        s.add_argument("--n-bits", dest="n_bits", type=_count("--n-bits"))
        s.add_argument("--n-points", dest="n_points", type=_count("--n-points"))
        s.add_argument("-o", "--output", required=True)

    s = sub.add_parser("train", help="train the neural decoder")
    common(s)
    s.add_argument("--epochs", type=_count("--epochs", 0))
    s.add_argument("--lr", type=_positive("--lr"))
    s.add_argument("--batch-size", dest="batch_size", type=_count("--batch-size"))
    s.add_argument("--val-limit", dest="val_limit", type=_count("--val-limit"))
    s.add_argument("--variants", type=_count("--variants"), help="watermark patterns per training cloud")
    s.add_argument("--log", help="training log CSV (default: next to the checkpoint)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="run the attack benchmark and write a report")
    common(s, "--key-config")
    s.add_argument("--ckpt", help="decoder checkpoint (omit for SVD only)")
    s.add_argument("--attacks", help="JSON list of attack specs (default: full suite)")
    s.add_argument("--negatives", type=_count("--negatives"), default=1)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("roc", help="ownership-verification ROC")
    common(s, "--key-config")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--negatives", type=_count("--negatives"), default=1)
    s.set_defaults(func=cmd_roc)

    s = sub.add_parser("synth", help="write a synthetic ModelNet-style mesh tree")
    s.add_argument("root")
    s.add_argument("--train", type=_count("--train", 0), default=8)
    s.add_argument("--test", type=_count("--test", 0), default=2)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        sub.print_usage(sys.stderr)
        print(f"pcwm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PcwmError, OSError) as exc:
        print(f"pcwm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort handler
        log.debug("internal error", exc_info=True)
        print(f"pcwm {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
