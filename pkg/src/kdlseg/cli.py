"""Command-line pipeline: phantom generation, preprocessing, feature
extraction, sample selection, dictionary training, segmentation and
evaluation, with reproducible flat-file configuration.

Every run writes its fully resolved configuration next to its outputs
(``<output>.config`` for file outputs, ``<dir>/<command>.config`` for
directory outputs); re-running the same command with ``--config`` on that
file reproduces the outputs. File writes go through a temp-and-rename, so
failed runs leave no partial outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from . import classify, dictionary, features, imaging, metrics, phantom, selection
from .fileio import FormatError, atomic_write
from .kernels import KernelSpec

ENV_THREADS = "KDLSEG_THREADS"


@dataclass
class RunConfig:
    gamma: float = 0.35
    atoms: int = 32
    t0: int = 3
    n_select: int = 1000
    max_iters: int = 20
    tol: float = 1e-4
    seed: int = 0
    sigma: float = 0.8
    radius: int = 2
    glcm_levels: int = 8
    scaling: bool = True
    eq10_printed: bool = False
    block_size: int = 4096
    threads: int | None = None

    def validate(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.atoms < 1 or self.t0 < 1 or self.t0 > self.atoms:
            raise ValueError(f"need 1 <= t0 <= atoms, got t0={self.t0} atoms={self.atoms}")
        if self.n_select < 1:
            raise ValueError(f"n_select must be >= 1, got {self.n_select}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.sigma <= 0 or self.radius < 1:
            raise ValueError(f"need sigma > 0 and radius >= 1")
        if self.glcm_levels < 2:
            raise ValueError(f"glcm_levels must be >= 2, got {self.glcm_levels}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        if self.threads is not None and self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        return self

    def resolved_threads(self):
        if self.threads is not None:
            return self.threads
        env = os.environ.get(ENV_THREADS)
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ValueError(f"bad {ENV_THREADS} value {env!r}") from None
        return os.cpu_count() or 1

    def kernel(self):
        return KernelSpec("rbf", self.gamma)

    def train_params(self):
        return dictionary.TrainParams(
            atoms=self.atoms,
            t0=self.t0,
            kernel=self.kernel(),
            max_iters=self.max_iters,
            tol=self.tol,
            seed=self.seed,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key, text):
    kind = _FIELD_TYPES[key]
    text = text.strip()
    if kind == "bool":
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"config key {key}: expected a boolean, got {text!r}")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    # threads: int | None
    return None if text.lower() == "none" else int(text)


def load_config(path, base=None):
    """Parse a flat ``key = value`` config file; unknown keys are errors."""
    config = base if base is not None else RunConfig()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            key = key.strip()
            if not eq:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            if key not in _FIELD_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                setattr(config, key, _parse_value(key, value))
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: {err}") from None
    return config


def write_config(path, config):
    lines = []
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if f.name == "threads":
            value = config.resolved_threads()
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}\n")
    with atomic_write(path) as handle:
        handle.write("".join(lines).encode())


def _add_config_flags(parser):
    parser.add_argument("--config", metavar="FILE", help="load settings from a config file")
    parser.add_argument("--gamma", type=float, help="RBF kernel width (default 0.35)")
    parser.add_argument("--atoms", type=int, help="dictionary atoms K (default 32)")
    parser.add_argument("--t0", type=int, help="sparsity bound (default 3)")
    parser.add_argument("--n", dest="n_select", type=int, help="selected samples per class")
    parser.add_argument("--max-iters", type=int, help="training iterations (default 20)")
    parser.add_argument("--tol", type=float, help="relative stop tolerance (default 1e-4)")
    parser.add_argument("--seed", type=int, help="RNG seed (default 0)")
    parser.add_argument("--sigma", type=float, help="Gaussian filter sigma (default 0.8)")
    parser.add_argument("--radius", type=int, help="Gaussian filter radius (default 2)")
    parser.add_argument("--glcm-levels", type=int, help="GLCM quantization levels (default 8)")
    parser.add_argument(
        "--scaling", action=argparse.BooleanOptionalAction, default=None,
        help="z-score features before the kernel (default on)",
    )
    parser.add_argument(
        "--eq10-printed", action=argparse.BooleanOptionalAction, default=None,
        help="use the printed (inverted) decision rule",
    )
    parser.add_argument("--block-size", type=int, help="streaming block size")
    parser.add_argument("--threads", type=int, help=f"worker threads (env {ENV_THREADS})")


def build_config(args):
    config = RunConfig()
    if args.config:
        config = load_config(args.config, config)
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(config, f.name, value)
    return config.validate()


def _fit_shared_scaler(config, *vector_blocks):
    if not config.scaling:
        return features.FeatureScaler.identity(vector_blocks[0].shape[1])
    return features.fit_scaler(np.concatenate(vector_blocks, axis=0))


def _load_models(config, normal_path, tumor_path):
    dict_normal = dictionary.load_model(normal_path)
    dict_tumor = dictionary.load_model(tumor_path)
    classify.check_compatible(dict_normal, dict_tumor)
    return dict_normal, dict_tumor


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(config, args):
    image = imaging.load_pgm(args.image)
    normalized = imaging.normalize_intensity(image)
    filtered = imaging.gaussian_filter(normalized, config.sigma, config.radius)
    if args.mask:
        mask = imaging.load_mask(args.mask)
        if mask.shape != image.shape:
            raise ValueError(f"{args.mask}: mask shape {mask.shape} vs image {image.shape}")
    else:
        mask = imaging.compute_brain_mask(filtered, args.mask_threshold)
    imaging.save_pgm(args.out_image, np.clip(filtered, 0.0, 255.0))
    imaging.save_pgm(args.out_mask, mask)
    write_config(args.out_image + ".config", config)
    return 0


def cmd_extract(config, args):
    if len(args.image) != len(args.mask):
        raise ValueError(f"{len(args.image)} images but {len(args.mask)} masks")
    if args.labels and len(args.labels) != len(args.image):
        raise ValueError(f"{len(args.image)} images but {len(args.labels)} label masks")
    blocks = []
    for i, (image_path, mask_path) in enumerate(zip(args.image, args.mask)):
        image = imaging.load_pgm(image_path)
        mask = imaging.load_mask(mask_path)
        labels = imaging.load_mask(args.labels[i]) if args.labels else None
        blocks.append(
            features.extract_features(image, mask, labels, config.glcm_levels)
        )
    merged = features.FeatureSet(
        np.concatenate([b.vectors for b in blocks], axis=0),
        np.concatenate([b.labels for b in blocks]),
    )
    features.save_features(args.out, merged)
    write_config(args.out + ".config", config)
    print(f"extracted {len(merged)} feature vectors -> {args.out}")
    return 0


def cmd_select(config, args):
    own = features.load_features(args.own)
    other = features.load_features(args.other)
    n = args.count if args.count is not None else config.n_select
    scaler = _fit_shared_scaler(config, own.vectors, other.vectors)
    indices = selection.select_samples(
        scaler.transform(own.vectors),
        scaler.transform(other.vectors),
        n,
        config.block_size,
    )
    features.save_features(args.out, own.subset(indices))
    selection.save_indices(args.indices, indices)
    write_config(args.out + ".config", config)
    print(f"selected {len(indices)} of {len(own)} vectors -> {args.out}")
    return 0


def cmd_train(config, args):
    normal = features.load_features(args.normal)
    tumor = features.load_features(args.tumor)
    scaler = _fit_shared_scaler(config, normal.vectors, tumor.vectors)
    own = normal if args.tissue == "normal" else tumor
    trained, report = dictionary.train(
        scaler.transform(own.vectors),
        config.train_params(),
        scaler=scaler,
        tissue=args.tissue,
    )
    dictionary.save_model(args.out, trained)
    write_config(args.out + ".config", config)
    errors = report.updated_errors or report.coding_errors
    print(
        f"trained {args.tissue} dictionary: K={trained.n_atoms} N={trained.n_samples} "
        f"iterations={report.iterations} final_error={errors[-1]:.6g} -> {args.out}"
    )
    return 0


def cmd_segment(config, args):
    image = imaging.load_pgm(args.image)
    mask = imaging.load_mask(args.mask)
    dict_normal, dict_tumor = _load_models(config, args.normal, args.tumor)
    result = classify.segment_slice(
        image,
        mask,
        dict_normal,
        dict_tumor,
        printed_rule=config.eq10_printed,
        block_size=config.block_size,
        threads=config.resolved_threads(),
        levels=config.glcm_levels,
    )
    imaging.save_pgm(args.out, result.tumor_mask)
    if args.err_prefix:
        imaging.save_volume(args.err_prefix + ".normal.kvol", result.error_normal[None])
        imaging.save_volume(args.err_prefix + ".tumor.kvol", result.error_tumor[None])
    write_config(args.out + ".config", config)
    print(
        f"classified {int(result.classified.sum())} pixels, "
        f"{int(result.tumor_mask.sum())} tumorous -> {args.out}"
    )
    return 0


def cmd_segment_volume(config, args):
    volume = imaging.load_volume(args.volume)
    mask_volume = imaging.load_volume(args.mask) > 0
    pairs = []
    for axis in ("x", "y", "z"):
        pair = _load_models(
            config, getattr(args, f"normal_{axis}"), getattr(args, f"tumor_{axis}")
        )
        pairs.append(pair)
    fused = classify.segment_volume(
        volume,
        mask_volume,
        pairs,
        printed_rule=config.eq10_printed,
        block_size=config.block_size,
        threads=config.resolved_threads(),
        levels=config.glcm_levels,
    )
    imaging.save_volume(args.out, fused.astype(np.float64))
    write_config(args.out + ".config", config)
    print(f"fused volume mask: {int(fused.sum())} tumor voxels -> {args.out}")
    return 0


def cmd_evaluate(config, args):
    pred = imaging.load_mask(args.pred)
    truth = imaging.load_mask(args.truth)
    eval_mask = imaging.load_mask(args.eval_mask) if args.eval_mask else None
    counts = metrics.confusion(pred, truth, eval_mask)
    values = metrics.all_metrics(counts)
    if args.out:
        metrics.write_metrics(args.out, values)
        write_config(args.out + ".config", config)
    if args.report:
        with atomic_write(args.report) as handle:
            handle.write(metrics.format_report(values, counts).encode())
    sys.stdout.write(metrics.format_machine(values))
    return 0


def cmd_phantom(config, args):
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        spec = phantom.sample_spec(args.size, args.size, config.seed, i)
        image, valid, truth = phantom.generate_phantom(spec)
        stem = os.path.join(args.out, f"{args.prefix}_{i:02d}")
        imaging.save_pgm(stem + ".image.pgm", image)
        imaging.save_pgm(stem + ".valid.pgm", valid)
        imaging.save_pgm(stem + ".truth.pgm", truth)
    write_config(os.path.join(args.out, "phantom.config"), config)
    print(f"wrote {args.count} phantom triples under {args.out}")
    return 0


def cmd_pipeline(config, args):
    runner = PipelineRunner(config, args)
    return runner.run()


class PipelineRunner:
    """phantom -> preprocess -> extract -> select -> train -> segment -> evaluate."""

    def __init__(self, config, args):
        self.config = config
        self.args = args
        self.out = args.out
        self.timings = []

    def _stage(self, name, fn):
        start = time.perf_counter()
        result = fn()
        self.timings.append((name, time.perf_counter() - start))
        return result

    def _dir(self, name):
        path = os.path.join(self.out, name)
        os.makedirs(path, exist_ok=True)
        return path

    def run(self):
        config, args = self.config, self.args
        os.makedirs(self.out, exist_ok=True)
        write_config(os.path.join(self.out, "config.txt"), config)

        cases = self._stage("phantom", self._generate)
        self._stage("preprocess", lambda: self._preprocess(cases))
        pools = self._stage("extract", lambda: self._extract(cases))
        selected = self._stage("select", lambda: self._select(pools))
        models = self._stage("train", lambda: self._train(selected))
        predictions = self._stage("segment", lambda: self._segment(cases, models))
        mean_values = self._stage("evaluate", lambda: self._evaluate(cases, predictions))

        print("stage timings:")
        for name, seconds in self.timings:
            print(f"  {name:<12} {seconds * 1000.0:10.0f} ms")
        print(f"mean metrics over {args.test_count} held-out phantoms:")
        sys.stdout.write(metrics.format_machine(mean_values))
        return 0

    def _case_names(self):
        train_names = [f"train_{i:02d}" for i in range(self.args.train_count)]
        test_names = [f"test_{i:02d}" for i in range(self.args.test_count)]
        return train_names, test_names

    def _generate(self):
        data_dir = self._dir("data")
        train_names, test_names = self._case_names()
        cases = {}
        for i, name in enumerate(train_names + test_names):
            spec = phantom.sample_spec(
                self.args.size, self.args.size, self.config.seed, i
            )
            image, valid, truth = phantom.generate_phantom(spec)
            stem = os.path.join(data_dir, name)
            imaging.save_pgm(stem + ".image.pgm", image)
            imaging.save_pgm(stem + ".valid.pgm", valid)
            imaging.save_pgm(stem + ".truth.pgm", truth)
            cases[name] = {
                "image": imaging.round_half_away(np.clip(image, 0.0, 255.0)),
                "valid": valid,
                "truth": truth,
            }
        return cases

    def _preprocess(self, cases):
        preproc_dir = self._dir("preproc")
        for name, case in cases.items():
            normalized = imaging.normalize_intensity(case["image"])
            filtered = imaging.gaussian_filter(
                normalized, self.config.sigma, self.config.radius
            )
            case["preproc"] = filtered
            imaging.save_pgm(
                os.path.join(preproc_dir, name + ".pgm"),
                np.clip(filtered, 0.0, 255.0),
            )

    def _extract(self, cases):
        features_dir = self._dir("features")
        train_names, _ = self._case_names()
        normal_blocks, tumor_blocks = [], []
        for name in train_names:
            case = cases[name]
            batch = features.extract_features(
                case["preproc"], case["valid"], case["truth"], self.config.glcm_levels
            )
            normal_blocks.append(batch.vectors[batch.labels == features.LABEL_NORMAL])
            tumor_blocks.append(batch.vectors[batch.labels == features.LABEL_TUMOR])
        pools = {
            "normal": np.concatenate(normal_blocks, axis=0),
            "tumor": np.concatenate(tumor_blocks, axis=0),
        }
        for tissue, vectors in pools.items():
            label = features.LABEL_NORMAL if tissue == "normal" else features.LABEL_TUMOR
            features.save_features(
                os.path.join(features_dir, tissue + ".kdf"),
                features.FeatureSet(vectors, np.full(len(vectors), label, np.uint8)),
            )
        return pools

    def _select(self, pools):
        selected_dir = self._dir("selected")
        config = self.config
        scaler = _fit_shared_scaler(config, pools["normal"], pools["tumor"])
        scaled = {t: scaler.transform(pools[t]) for t in pools}
        selected = {}
        for tissue, other in (("normal", "tumor"), ("tumor", "normal")):
            n = min(config.n_select, len(pools[tissue]))
            if n < config.n_select:
                print(f"note: {tissue} pool has only {n} vectors; selecting all")
            indices = selection.select_samples(
                scaled[tissue], scaled[other], n, config.block_size
            )
            raw = pools[tissue][indices]
            label = features.LABEL_NORMAL if tissue == "normal" else features.LABEL_TUMOR
            features.save_features(
                os.path.join(selected_dir, tissue + ".kdf"),
                features.FeatureSet(raw, np.full(len(raw), label, np.uint8)),
            )
            selection.save_indices(
                os.path.join(selected_dir, tissue + ".idx.txt"), indices
            )
            selected[tissue] = raw
        return selected

    def _train(self, selected):
        models_dir = self._dir("models")
        config = self.config
        scaler = _fit_shared_scaler(config, selected["normal"], selected["tumor"])
        models = {}
        for tissue in ("normal", "tumor"):
            trained, report = dictionary.train(
                scaler.transform(selected[tissue]),
                config.train_params(),
                scaler=scaler,
                tissue=tissue,
            )
            dictionary.save_model(os.path.join(models_dir, tissue + ".kdl"), trained)
            models[tissue] = trained
        return models

    def _segment(self, cases, models):
        masks_dir = self._dir("masks")
        config = self.config
        _, test_names = self._case_names()
        predictions = {}
        for name in test_names:
            case = cases[name]
            result = classify.segment_slice(
                case["preproc"],
                case["valid"],
                models["normal"],
                models["tumor"],
                printed_rule=config.eq10_printed,
                block_size=config.block_size,
                threads=config.resolved_threads(),
                levels=config.glcm_levels,
            )
            imaging.save_pgm(
                os.path.join(masks_dir, name + ".pred.pgm"), result.tumor_mask
            )
            predictions[name] = result.tumor_mask
        return predictions

    def _evaluate(self, cases, predictions):
        metrics_dir = self._dir("metrics")
        _, test_names = self._case_names()
        per_case = []
        for name in test_names:
            case = cases[name]
            counts = metrics.confusion(predictions[name], case["truth"], case["valid"])
            values = metrics.all_metrics(counts)
            metrics.write_metrics(
                os.path.join(metrics_dir, name + ".metrics"), values
            )
            per_case.append(values)
        mean_values = {
            name: float(np.mean([values[name] for values in per_case]))
            for name in metrics.METRIC_NAMES
        }
        metrics.write_metrics(os.path.join(metrics_dir, "mean.metrics"), mean_values)
        return mean_values


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kdlseg",
        description="kernel dictionary-learning texture segmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="normalize, denoise and mask an image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", help="externally supplied valid mask (skips mask computation)")
    p.add_argument("--mask-threshold", type=float, default=imaging.DEFAULT_MASK_FRACTION)
    p.add_argument("--out-image", required=True)
    p.add_argument("--out-mask", required=True)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("extract", help="extract 22-dim feature vectors to a KDF1 file")
    p.add_argument("--image", nargs="+", required=True)
    p.add_argument("--mask", nargs="+", required=True)
    p.add_argument("--labels", nargs="+", help="ground-truth masks giving class labels")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("select", help="greedy correlation-based sample selection")
    p.add_argument("--own", required=True, help="KDF1 file of the class to reduce")
    p.add_argument("--other", required=True, help="KDF1 file of the opposing class")
    p.add_argument("--count", type=int, help="override n_select from the config")
    p.add_argument("--out", required=True, help="KDF1 file for the selected subset")
    p.add_argument("--indices", required=True, help="plain-text index list")
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("train", help="train one kernel dictionary (KDL1 model)")
    p.add_argument("--normal", required=True, help="KDF1 file of normal-class vectors")
    p.add_argument("--tumor", required=True, help="KDF1 file of tumor-class vectors")
    p.add_argument("--tissue", choices=("normal", "tumor"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("segment", help="segment a preprocessed slice")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--normal", required=True, help="normal-class KDL1 model")
    p.add_argument("--tumor", required=True, help="tumor-class KDL1 model")
    p.add_argument("--out", required=True, help="output tumor mask PGM (tumor=255)")
    p.add_argument("--err-prefix", help="also write per-pixel error maps as KVOL")
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("segment-volume", help="three-axis segmentation with majority fusion")
    p.add_argument("--volume", required=True, help="KVOL intensity volume")
    p.add_argument("--mask", required=True, help="KVOL validity volume (nonzero = valid)")
    for axis in ("x", "y", "z"):
        p.add_argument(f"--normal-{axis}", required=True)
        p.add_argument(f"--tumor-{axis}", required=True)
    p.add_argument("--out", required=True, help="output KVOL mask with values {0,1}")
    p.set_defaults(fn=cmd_segment_volume)

    p = sub.add_parser("evaluate", help="Dice/Jaccard/sensitivity/specificity")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--eval-mask", help="restrict evaluation to this mask")
    p.add_argument("--out", help="machine-readable metric=value file")
    p.add_argument("--report", help="aligned plain-text report file")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("phantom", help="generate a synthetic benchmark directory")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--prefix", default="phantom")
    p.set_defaults(fn=cmd_phantom)

    p = sub.add_parser("pipeline", help="end-to-end phantom benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--train-count", type=int, default=8)
    p.add_argument("--test-count", type=int, default=4)
    p.add_argument("--size", type=int, default=96)
    p.set_defaults(fn=cmd_pipeline)

    for p in sub.choices.values():
        _add_config_flags(p)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = build_config(args)
        return args.fn(config, args)
    except (FormatError, ValueError, OSError, RuntimeError) as err:
        print(f"kdlseg {args.command}: error: {err}", file=sys.stderr)
        return 1


def run():
    raise SystemExit(main())


if __name__ == "__main__":
    run()
