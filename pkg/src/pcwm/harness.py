"""Dataset manifests, the embed -> attack -> extract pipeline, aggregation and reports."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as _rng
from .attacks import AttackSpec, apply_attack, attack_catalogue
from .errors import (
    ConfigError,
    EmptyDataset,
    EmptyScoreSet,
    EvaluationAborted,
    OverlapDetected,
    PcwmError,
)
from .geometry_io import load_mesh, normalize, sample_surface
from .metrics import MetricSample, roc_auc, roc_curve, sample_metrics
from .watermark import DEFAULT_ALPHA, DEFAULT_BITS, Mode, as_bits, embed, extract

log = logging.getLogger(__name__)

MESH_SUFFIXES = (".off", ".ply")
RESULT_COLUMNS = ["attack", "decoder", "n_samples", "acc_mean", "acc_std", "iou_mean", "iou_std",
                  "ber_mean", "ber_std", "chamfer_mean", "chamfer_std", "psnr_mean", "psnr_std"]
METRIC_FIELDS = ("accuracy", "iou", "ber", "chamfer", "psnr")
MAX_FAILURE_RATE = 0.10


def fmt(x: float) -> str:
    return f"{x:.6g}"


# -- manifest ----------------------------------------------------------------

@dataclass(frozen=True)
class EmbedConfig:
    mode: Mode = Mode.REFERENCE
    alpha: float = DEFAULT_ALPHA
    n_bits: int = DEFAULT_BITS
    n_points: int = 1024

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
        except ValueError:
            raise ConfigError(f"mode must be 'reference' or 'qim', got {self.mode!r}") from None
        if not (isinstance(self.alpha, (int, float)) and math.isfinite(self.alpha) and self.alpha > 0):
            raise ConfigError(f"alpha must be positive, got {self.alpha!r}")
        if not isinstance(self.n_bits, int) or self.n_bits < 1:
            raise ConfigError(f"n_bits must be a positive integer, got {self.n_bits!r}")
        if not isinstance(self.n_points, int) or self.n_points < self.n_bits:
            raise ConfigError(f"n_points must be an integer >= n_bits, got {self.n_points!r}")

    def to_dict(self) -> dict:
        return {**asdict(self), "mode": self.mode.value}

    @classmethod
    def from_dict(cls, data: dict) -> "EmbedConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown embed config keys: {sorted(unknown)}")
        return cls(**data)


def assign_watermark(relpath: str, n_bits: int, seed: int) -> str:
    """Deterministic per-file pattern: stable hash of (path, seed) mod 2**n."""
    value = _rng.stable_hash("watermark", relpath, int(seed)) % (1 << n_bits)
    return format(value, f"0{n_bits}b")


@dataclass
class Manifest:
    root: str
    train: list[str]
    test: list[str]
    watermarks: dict[str, str]
    seed: int
    n_points: int
    n_bits: int
    excluded: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise OverlapDetected(f"{len(overlap)} files are in both splits, e.g. {sorted(overlap)[0]}")

    def path(self, rel: str) -> Path:
        root = Path(self.root)
        return root if root.is_file() else root / rel

    def bits(self, rel: str) -> np.ndarray:
        return as_bits(self.watermarks[rel])

    def cloud(self, rel: str) -> np.ndarray:
        """Sampled and normalized cloud for a manifest entry."""
        mesh = load_mesh(self.path(rel))
        return normalize(sample_surface(mesh, self.n_points, self.seed, rel))[0]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Manifest":
        data = dict(data)
        data["excluded"] = [tuple(e) for e in data.get("excluded", [])]
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _scan(root: Path) -> tuple[list[str], list[str]]:
    train, test = [], []
    for path in sorted(root.rglob("*")):
        if path.suffix.lower() not in MESH_SUFFIXES or not path.is_file():
            continue
        rel = path.relative_to(root).as_posix()
        split = path.parent.name
        if split == "train":
            train.append(rel)
        elif split == "test":
            test.append(rel)
    return train, test


def build_manifest(root, n_points: int = 1024, n_bits: int = DEFAULT_BITS, seed: int = 0,
                   workers: int = 1, limit_per_split: int | None = None) -> Manifest:
    """Scan a ``class/{train,test}/*.off`` tree (or a single mesh file).

    Files that fail to parse or sample are excluded and listed in
    ``Manifest.excluded``.

    Raises:
        EmptyDataset: nothing usable was found.
        OverlapDetected: a file ended up in both splits.
    """
    root = Path(root)
    if root.is_file():
        train, test = [], [root.name]
    elif root.is_dir():
        train, test = _scan(root)
    else:
        raise EmptyDataset(f"dataset root {root} does not exist")
    if limit_per_split is not None:
        train, test = train[:limit_per_split], test[:limit_per_split]
    manifest = Manifest(str(root), [], [], {}, int(seed), int(n_points), int(n_bits))

    def check(rel):
        try:
            manifest.cloud(rel)
            return None
        except (PcwmError, OSError) as exc:
            return f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max(1, workers)) as pool:
        train_err = list(pool.map(check, train))
        test_err = list(pool.map(check, test))
    for names, errs, dest in ((train, train_err, manifest.train), (test, test_err, manifest.test)):
        for rel, err in zip(names, errs):
            if err is None:
                dest.append(rel)
            else:
                log.warning("excluding %s (%s)", rel, err)
                manifest.excluded.append((rel, err))
    if not manifest.train and not manifest.test:
        raise EmptyDataset(f"no usable meshes under {root}")
    manifest.watermarks = {rel: assign_watermark(rel, n_bits, seed)
                           for rel in manifest.train + manifest.test}
    Manifest.__post_init__(manifest)
    return manifest


def pattern_balance(manifest: Manifest) -> tuple[dict[str, int], float]:
    """Pattern counts and the chi-square statistic against a uniform assignment."""
    counts = {format(v, f"0{manifest.n_bits}b"): 0 for v in range(1 << manifest.n_bits)}
    for rel in manifest.train + manifest.test:
        counts[manifest.watermarks[rel]] += 1
    total = sum(counts.values())
    expected = total / len(counts)
    chi2 = sum((c - expected) ** 2 / expected for c in counts.values()) if total else 0.0
    return counts, chi2


# -- training data -------------------------------------------------------------

def watermarked_samples(manifest: Manifest, split: str, cfg: EmbedConfig, limit: int | None = None,
                        variants: int = 1, workers: int = 1):
    """Embed every cloud of a split; returns ``(samples, skipped)``.

    ``variants > 1`` adds further copies of each cloud carrying other
    (hash-derived) patterns, which gives the decoder several watermarks per
    shape to compare.
    """
    from .neural.trainer import Sample

    names = list(getattr(manifest, split))[:limit]

    def work(rel):
        cloud = manifest.cloud(rel)
        patterns = [manifest.watermarks[rel]]
        for v in range(1, variants):
            patterns.append(assign_watermark(f"{rel}#{v}", cfg.n_bits, manifest.seed))
        out = []
        for pattern in patterns:
            wm, _ = embed(cloud, pattern, cfg.alpha, cfg.mode)
            out.append(Sample(wm, as_bits(pattern), rel))
        return out

    samples, skipped = [], []
    with ThreadPoolExecutor(max(1, workers)) as pool:
        for rel, result in zip(names, pool.map(_guard(work), names)):
            if isinstance(result, str):
                skipped.append((rel, result))
            else:
                samples.extend(result)
    return samples, skipped


def _guard(fn):
    def wrapped(arg):
        try:
            return fn(arg)
        except (PcwmError, OSError) as exc:
            return f"{type(exc).__name__}: {exc}"
    return wrapped


def train_decoder(manifest: Manifest, cfg: EmbedConfig, decoder_cfg=None, train_cfg=None,
                  log_path=None, limit: int | None = None, val_limit: int | None = None,
                  variants: int = 1, workers: int = 1):
    """Train on the manifest's train split, validating on its test split."""
    from .neural.model import DecoderConfig
    from .neural.trainer import TrainConfig, train

    decoder_cfg = decoder_cfg or DecoderConfig(n_bits=cfg.n_bits)
    train_cfg = train_cfg or TrainConfig()
    if decoder_cfg.n_bits != cfg.n_bits:
        raise ConfigError("decoder n_bits differs from the embedding n_bits")
    train_set, _ = watermarked_samples(manifest, "train", cfg, limit, variants, workers)
    val_set, _ = watermarked_samples(manifest, "test", cfg, val_limit, 1, workers)
    ckpt, history = train(train_set, val_set, decoder_cfg, train_cfg, log_path)
    ckpt.meta.update({"embed": cfg.to_dict(), "n_train": len(train_set), "n_val": len(val_set)})
    return ckpt, history


# -- evaluation ----------------------------------------------------------------

@dataclass
class ResultRow:
    attack: str
    decoder: str
    n_samples: int
    mean: dict
    std: dict

    def csv_row(self) -> list:
        row = [self.attack, self.decoder, str(self.n_samples)]
        for name in METRIC_FIELDS:
            row += [fmt(self.mean[name]), fmt(self.std[name])]
        return row


@dataclass
class ReportBundle:
    rows: list[ResultRow]
    attacks: list[str]
    roc: tuple | None = None
    auc: float | None = None
    config: dict = field(default_factory=dict)
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def row(self, attack: str, decoder: str) -> ResultRow:
        for r in self.rows:
            if r.attack == attack and r.decoder == decoder:
                return r
        raise KeyError((attack, decoder))

    def gap(self, attack: str) -> float:
        return self.row(attack, "DL").mean["accuracy"] - self.row(attack, "SVD").mean["accuracy"]


def aggregate(attack: str, decoder: str, samples: list[MetricSample]) -> ResultRow:
    """Mean and population standard deviation of each metric."""
    if not samples:
        raise EmptyDataset(f"no samples for {attack}/{decoder}")
    mean, std = {}, {}
    for name in METRIC_FIELDS:
        values = np.array([getattr(s, name) for s in samples], dtype=np.float64)
        mean[name] = float(values.mean())
        std[name] = float(values.std())
    return ResultRow(attack, decoder, len(samples), mean, std)


def default_attacks(seed: int = 0) -> list[AttackSpec]:
    return [AttackSpec("clean", {}, seed, "clean")] + attack_catalogue(seed)


def _evaluate_cloud(manifest, rel, cfg, attacks, model, seed):
    cloud = manifest.cloud(rel)
    bits = manifest.bits(rel)
    wm, key = embed(cloud, bits, cfg.alpha, cfg.mode)
    attacked = [apply_attack(wm, spec.with_seed(_rng.derive_seed(seed, rel, spec.label)))
                for spec in attacks]
    svd = [sample_metrics(bits, extract(a, key), wm, a) for a in attacked]
    dl = None
    if model is not None:
        from .neural.model import predict_logits
        logits = predict_logits(model, attacked, batch_size=len(attacked))
        dl = [sample_metrics(bits, (z > 0).astype(np.uint8), wm, a) for z, a in zip(logits, attacked)]
    return svd, dl


def run_evaluation(manifest: Manifest, cfg: EmbedConfig, checkpoint=None, attacks=None,
                   seed: int = 0, limit: int | None = None, workers: int = 1) -> ReportBundle:
    """Evaluate both decoders over the test split.

    Each cloud is embedded, attacked with every spec (seed derived from the
    run seed, the file and the attack label) and decoded.  Clouds that raise
    a library error are skipped; more than 10% skipped aborts the run.
    """
    attacks = default_attacks(seed) if attacks is None else list(attacks)
    if not attacks:
        raise ConfigError("attack list is empty")
    labels = [a.label for a in attacks]
    if len(set(labels)) != len(labels):
        raise ConfigError("attack labels must be unique")
    model = None
    if checkpoint is not None:
        if checkpoint.config.n_bits != cfg.n_bits:
            raise ConfigError("checkpoint n_bits differs from the embedding n_bits")
        model = checkpoint.to_model()
        model.eval()
    names = manifest.test[:limit]
    if not names:
        raise EmptyDataset("test split is empty")

    work = _guard(lambda rel: _evaluate_cloud(manifest, rel, cfg, attacks, model, seed))
    with ThreadPoolExecutor(max(1, workers)) as pool:
        results = list(pool.map(work, names))

    skipped = [(rel, r) for rel, r in zip(names, results) if isinstance(r, str)]
    for rel, reason in skipped:
        log.warning("skipping %s: %s", rel, reason)
    if len(skipped) > MAX_FAILURE_RATE * len(names):
        raise EvaluationAborted(f"{len(skipped)} of {len(names)} clouds failed")
    good = [r for r in results if not isinstance(r, str)]

    rows = []
    for j, label in enumerate(labels):
        rows.append(aggregate(label, "SVD", [svd[j] for svd, _ in good]))
        if model is not None:
            rows.append(aggregate(label, "DL", [dl[j] for _, dl in good]))
    config = {"embed": cfg.to_dict(), "seed": seed, "n_test": len(names),
              "attacks": [a.to_dict() | {"label": a.label} for a in attacks]}
    return ReportBundle(rows, labels, config=config, skipped=skipped)


# -- ownership verification ------------------------------------------------------

def ownership_scores(probs, true_bits, gen: np.random.Generator, negatives_per_cloud: int = 1):
    """Positive and negative claim scores from per-bit probabilities.

    A claim ``w`` scores ``mean_i(p_i if w_i else 1 - p_i)``.  Positives claim
    the embedded pattern; negatives claim uniformly drawn different patterns.
    """
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(true_bits).astype(np.int64)
    n_bits = probs.shape[1]
    weights = 1 << np.arange(n_bits - 1, -1, -1)

    def score(p, w):
        return float(np.where(w == 1, p, 1.0 - p).mean())

    pos, neg = [], []
    for p, w in zip(probs, truth):
        pos.append(score(p, w))
        code = int((w * weights).sum())
        for _ in range(negatives_per_cloud):
            other = int(gen.integers((1 << n_bits) - 1))
            other += other >= code  # skip the true pattern
            neg.append(score(p, (other // weights) % 2))
    return np.array(pos), np.array(neg)


def ownership_roc(manifest: Manifest, cfg: EmbedConfig, checkpoint, negatives_per_cloud: int = 1,
                  seed: int = 0, limit: int | None = None, workers: int = 1):
    """ROC of the claimed-watermark score on clean watermarked test clouds.

    Returns ``((thresholds, tpr, fpr), auc)``.
    """
    from .neural.model import predict_logits

    samples, _ = watermarked_samples(manifest, "test", cfg, limit, 1, workers)
    if not samples:
        raise EmptyScoreSet("no test clouds to score")
    model = checkpoint.to_model()
    model.eval()
    logits = predict_logits(model, [s.cloud for s in samples])
    probs = 1.0 / (1.0 + np.exp(-logits))
    gen = _rng.stream(seed, "ownership_negatives")
    pos, neg = ownership_scores(probs, [s.bits for s in samples], gen, negatives_per_cloud)
    return roc_curve(pos, neg), roc_auc(pos, neg)


# -- reports ---------------------------------------------------------------------

def _md_table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def render_report(bundle: ReportBundle, out_dir) -> list[Path]:
    """Write CSV, markdown tables and SVG charts; returns the written paths."""
    if not bundle.attacks or not bundle.rows:
        raise ConfigError("report has no attacks")
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "results.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        writer.writerows(r.csv_row() for r in bundle.rows)
    written.append(path)

    decoders = sorted({r.decoder for r in bundle.rows}, key=lambda d: d != "SVD")
    has_dl = "DL" in decoders
    gap_rows = []
    for a in bundle.attacks:
        svd = bundle.row(a, "SVD").mean["accuracy"]
        row = [a, f"{svd:.3f}"]
        if has_dl:
            dl = bundle.row(a, "DL").mean["accuracy"]
            row += [f"{dl:.3f}", f"{dl - svd:+.3f}"]
        gap_rows.append(row)
    header = ["Attack", "SVD"] + (["DL", "Accuracy Gap"] if has_dl else [])
    path = out / "gap_table.md"
    path.write_text(_md_table(header, gap_rows))
    written.append(path)

    fid_rows = []
    for a in bundle.attacks:
        row = [a]
        for d in decoders:
            m = bundle.row(a, d).mean
            row += [f"{m['chamfer']:.4f}", f"{m['psnr']:.2f}", f"{m['ber']:.3f}"]
        fid_rows.append(row)
    header = ["Attack"] + [f"{c}_{d}" for d in decoders for c in ("Chamfer", "PSNR", "BER")]
    path = out / "fidelity_table.md"
    path.write_text(_md_table(header, fid_rows))
    written.append(path)

    fig, ax = plt.subplots(figsize=(10, 4))
    x = np.arange(len(bundle.attacks))
    width = 0.8 / len(decoders)
    for i, d in enumerate(decoders):
        acc = [bundle.row(a, d).mean["accuracy"] for a in bundle.attacks]
        ax.bar(x + (i - (len(decoders) - 1) / 2) * width, acc, width, label=d)
    ax.set_xticks(x, bundle.attacks, rotation=45, ha="right")
    ax.set_ylabel("bitwise accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    path = out / "accuracy.svg"
    fig.savefig(path, format="svg")
    plt.close(fig)
    written.append(path)

    if bundle.roc is not None:
        written += write_roc(bundle.roc, bundle.auc, out)
    return written


def write_roc(roc, auc: float, out_dir) -> list[Path]:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    thresholds, tpr, fpr = roc
    path = out / "roc.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "tpr", "fpr"])
        for t, a, b in zip(thresholds, tpr, fpr):
            writer.writerow(["inf" if np.isinf(t) else fmt(t), fmt(a), fmt(b)])
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(fpr, tpr, label=f"AUC = {auc:.3f}")
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right")
    fig.tight_layout()
    svg = out / "roc.svg"
    fig.savefig(svg, format="svg")
    plt.close(fig)
    return [path, svg]
