"""Dataset ingestion, synthetic data generation, and pool bookkeeping.

Datasets hold flattened feature rows plus integer labels. Class indices are
0-based in memory and in binary storage; human-facing documents (CSV reports,
the annotation wire protocol) use 1-based indices, converted only at that
boundary.

The canonical on-disk format is a directory with a ``meta.json`` text document
and raw little-endian binary tensors (``features.bin``, ``labels.bin``,
``split_tags.bin``). ``.npz`` archives (plain ``features``/``labels`` keys or
the MedMNIST ``train_images``/... layout) and two-column CSV files are also
accepted for ingestion.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

SPLIT_TRAIN = 0
SPLIT_VAL = 1
SPLIT_TEST = 2
_SPLIT_NAMES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}
_SPLIT_CODES = {v: k for k, v in _SPLIT_NAMES.items()}

_META_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Immutable feature/label table with per-sample split tags.

    features: (N, D) real array, rows flattened in C order when the source
    was an image tensor. feature_shape records the pre-flattening shape,
    (D,) for vector data or (H, W, C) for images.
    """

    name: str
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    feature_shape: tuple
    split_tags: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features)
        labels = np.asarray(self.labels, dtype=np.int64)
        tags = np.asarray(self.split_tags, dtype=np.uint8)
        if feats.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {feats.shape}")
        n = feats.shape[0]
        if labels.shape != (n,):
            raise ValidationError(
                f"labels length {labels.shape} does not match {n} samples"
            )
        if tags.shape != (n,):
            raise ValidationError(
                f"split_tags length {tags.shape} does not match {n} samples"
            )
        if self.n_classes < 2:
            raise ValidationError(f"n_classes must be >= 2, got {self.n_classes}")
        if n > 0:
            if not np.all(np.isfinite(feats)):
                raise ValidationError("features contain non-finite values")
            if labels.min() < 0 or labels.max() >= self.n_classes:
                raise ValidationError(
                    f"labels must lie in [0, {self.n_classes - 1}], "
                    f"found range [{labels.min()}, {labels.max()}]"
                )
        if int(np.prod(self.feature_shape)) != feats.shape[1]:
            raise ValidationError(
                f"feature_shape {self.feature_shape} inconsistent with "
                f"D={feats.shape[1]}"
            )
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "split_tags", tags)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_image(self) -> bool:
        return len(self.feature_shape) == 3

    def split_ids(self, split: int) -> np.ndarray:
        return np.flatnonzero(self.split_tags == split)


@dataclass
class PoolPartition:
    """Disjoint labeled / unlabeled / held-out evaluation index sets.

    ``labels`` maps every labeled id to its class as provided by the oracle;
    the initial seed pool is labeled from dataset ground truth. In the usual
    active-learning regime the labeled pool starts much smaller than the
    unlabeled pool.
    """

    labeled_ids: np.ndarray
    unlabeled_ids: np.ndarray
    eval_ids: np.ndarray
    seed: int
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labeled_ids = np.asarray(sorted(self.labeled_ids), dtype=np.int64)
        self.unlabeled_ids = np.asarray(sorted(self.unlabeled_ids), dtype=np.int64)
        self.eval_ids = np.asarray(sorted(self.eval_ids), dtype=np.int64)
        lab = set(self.labeled_ids.tolist())
        unlab = set(self.unlabeled_ids.tolist())
        ev = set(self.eval_ids.tolist())
        if lab & unlab:
            raise ValidationError("labeled and unlabeled pools overlap")
        if (lab | unlab) & ev:
            raise ValidationError("evaluation ids overlap the training pools")
        if set(self.labels) != lab:
            raise ValidationError("label map keys must equal the labeled id set")

    @property
    def n_labeled(self) -> int:
        return len(self.labeled_ids)

    @property
    def n_unlabeled(self) -> int:
        return len(self.unlabeled_ids)

    def labeled_targets(self) -> np.ndarray:
        """Oracle-provided labels aligned with ``labeled_ids``."""
        return np.asarray([self.labels[int(i)] for i in self.labeled_ids],
                          dtype=np.int64)


def normalize_features(x: np.ndarray) -> np.ndarray:
    """Map 8-bit pixel data onto [-1, 1]; already-normalized data is returned
    unchanged, so the function is idempotent."""
    x = np.asarray(x)
    if np.issubdtype(x.dtype, np.integer):
        return x.astype(np.float32) / 127.5 - 1.0
    if x.size == 0:
        return x.astype(np.float32, copy=False)
    lo, hi = float(x.min()), float(x.max())
    if lo >= -1.0 - 1e-9 and hi <= 1.0 + 1e-9:
        return x
    if lo >= -1e-9 and hi <= 255.0 + 1e-6:
        return x / 127.5 - 1.0
    raise FormatError(
        f"features: cannot infer scale for float data in [{lo:g}, {hi:g}]"
    )


def make_synthetic(
    n_classes: int,
    per_class_count: int,
    class_means,
    class_covs,
    seed: int,
    name: str = "synthetic",
) -> Dataset:
    """Draw a 2-D labeled dataset from per-class Gaussians.

    ``class_covs`` may be one covariance matrix per class or a single scalar
    variance applied isotropically to all classes. Deterministic given seed.
    """
    if n_classes < 2:
        raise ValidationError(f"n_classes must be >= 2, got {n_classes}")
    if per_class_count < 0:
        raise ValidationError("per_class_count must be >= 0")
    means = np.asarray(class_means, dtype=np.float64)
    if means.shape != (n_classes, 2):
        raise ValidationError(
            f"class_means must have shape ({n_classes}, 2), got {means.shape}"
        )
    covs = np.asarray(class_covs, dtype=np.float64)
    if covs.ndim == 0:
        covs = np.stack([np.eye(2) * float(covs)] * n_classes)
    if covs.shape != (n_classes, 2, 2):
        raise ValidationError(
            f"class_covs must be scalar or shape ({n_classes}, 2, 2)"
        )
    chols = []
    for k, cov in enumerate(covs):
        try:
            chols.append(np.linalg.cholesky(cov))
        except np.linalg.LinAlgError:
            raise ValidationError(
                f"class_covs[{k}] is not positive-definite"
            ) from None

    rng = np.random.default_rng(seed)
    feats = np.empty((n_classes * per_class_count, 2), dtype=np.float64)
    labels = np.empty(n_classes * per_class_count, dtype=np.int64)
    for k in range(n_classes):
        eps = rng.standard_normal((per_class_count, 2))
        sl = slice(k * per_class_count, (k + 1) * per_class_count)
        feats[sl] = means[k] + eps @ chols[k].T
        labels[sl] = k
    tags = np.full(len(labels), SPLIT_TRAIN, dtype=np.uint8)
    return Dataset(name=name, features=feats, labels=labels,
                   n_classes=n_classes, feature_shape=(2,), split_tags=tags)


def unit_circle_means(n_classes: int, radius: float = 1.0,
                      phase: float = np.pi / 2) -> np.ndarray:
    """Class means spaced evenly on a circle, first one at ``phase``."""
    angles = phase + 2 * np.pi * np.arange(n_classes) / n_classes
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def split_pools(dataset: Dataset, initial_labeled: int, eval_fraction: float,
                seed: int) -> PoolPartition:
    """Carve labeled/unlabeled/evaluation pools out of a dataset.

    The evaluation set is drawn from the official test split when one exists,
    otherwise from the whole dataset; the remaining training samples form the
    active-learning pools. Uniform without replacement, deterministic given
    seed.
    """
    if not 0.0 <= eval_fraction <= 1.0:
        raise ValidationError(f"eval_fraction must be in [0, 1], got {eval_fraction}")
    if initial_labeled < 0:
        raise ValidationError("initial_labeled must be >= 0")
    rng = np.random.default_rng(seed)
    test_ids = dataset.split_ids(SPLIT_TEST)
    if len(test_ids) > 0:
        n_eval = int(round(eval_fraction * len(test_ids)))
        eval_ids = np.sort(rng.choice(test_ids, size=n_eval, replace=False))
        pool_ids = dataset.split_ids(SPLIT_TRAIN)
    else:
        all_ids = np.arange(dataset.n_samples)
        n_eval = int(round(eval_fraction * dataset.n_samples))
        eval_ids = np.sort(rng.choice(all_ids, size=n_eval, replace=False))
        pool_ids = np.setdiff1d(all_ids, eval_ids)
    if initial_labeled > len(pool_ids):
        raise ValidationError(
            f"initial_labeled={initial_labeled} exceeds the {len(pool_ids)} "
            "available training samples"
        )
    labeled_ids = np.sort(rng.choice(pool_ids, size=initial_labeled, replace=False))
    unlabeled_ids = np.setdiff1d(pool_ids, labeled_ids)
    labels = {int(i): int(dataset.labels[i]) for i in labeled_ids}
    return PoolPartition(labeled_ids=labeled_ids, unlabeled_ids=unlabeled_ids,
                         eval_ids=eval_ids, seed=seed, labels=labels)


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write the canonical directory format (meta.json + raw binaries)."""
    os.makedirs(path, exist_ok=True)
    feats = dataset.features
    dtype = "<f8" if feats.dtype == np.float64 else "<f4"
    meta = {
        "format_version": _META_VERSION,
        "name": dataset.name,
        "n_classes": dataset.n_classes,
        "n_samples": dataset.n_samples,
        "feature_shape": list(dataset.feature_shape),
        "feature_dtype": dtype,
        "byte_order": "little",
        "split_sizes": {name: int(np.sum(dataset.split_tags == code))
                        for name, code in _SPLIT_NAMES.items()},
    }
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    feats.astype(dtype).tofile(os.path.join(path, "features.bin"))
    dataset.labels.astype("<i8").tofile(os.path.join(path, "labels.bin"))
    dataset.split_tags.astype(np.uint8).tofile(os.path.join(path, "split_tags.bin"))


def _load_directory(path: str) -> Dataset:
    meta_path = os.path.join(path, "meta.json")
    if not os.path.exists(meta_path):
        raise FormatError(f"meta.json: missing in {path}")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    for key in ("name", "n_classes", "n_samples", "feature_shape", "feature_dtype"):
        if key not in meta:
            raise FormatError(f"meta.json: missing field '{key}'")
    shape = tuple(meta["feature_shape"])
    n = int(meta["n_samples"])
    d = int(np.prod(shape))
    feats = np.fromfile(os.path.join(path, "features.bin"),
                        dtype=meta["feature_dtype"])
    if feats.size != n * d:
        raise FormatError(
            f"features.bin: expected {n * d} values, found {feats.size}"
        )
    labels = np.fromfile(os.path.join(path, "labels.bin"), dtype="<i8")
    if labels.size != n:
        raise ValidationError(
            f"labels.bin: length {labels.size} does not match {n} samples"
        )
    tags_path = os.path.join(path, "split_tags.bin")
    if os.path.exists(tags_path):
        tags = np.fromfile(tags_path, dtype=np.uint8)
        if tags.size != n:
            raise FormatError(f"split_tags.bin: length {tags.size} != {n}")
    else:
        tags = np.full(n, SPLIT_TRAIN, dtype=np.uint8)
    feats = normalize_features(feats.reshape(n, d))
    k = int(meta["n_classes"])
    if n > 0 and labels.max() >= k:
        raise ValidationError(
            f"labels.bin: label {labels.max()} outside declared {k} classes"
        )
    return Dataset(name=meta["name"], features=feats, labels=labels,
                   n_classes=k, feature_shape=shape, split_tags=tags)


def _flatten_images(arr: np.ndarray, key: str) -> tuple[np.ndarray, tuple]:
    if arr.ndim == 2:
        return arr, (arr.shape[1],)
    if arr.ndim == 3:
        n, h, w = arr.shape
        return arr.reshape(n, h * w), (h, w, 1)
    if arr.ndim == 4:
        n, h, w, c = arr.shape
        return arr.reshape(n, h * w * c), (h, w, c)
    raise FormatError(f"{key}: unsupported array rank {arr.ndim}")


def _load_npz(path: str) -> Dataset:
    with np.load(path) as npz:
        keys = set(npz.files)
        name = os.path.splitext(os.path.basename(path))[0]
        if {"train_images", "train_labels"} <= keys:
            feats_parts, label_parts, tag_parts = [], [], []
            shape = None
            for split in ("train", "val", "test"):
                ikey, lkey = f"{split}_images", f"{split}_labels"
                if ikey not in keys:
                    continue
                if lkey not in keys:
                    raise FormatError(f"{lkey}: missing for present {ikey}")
                flat, s = _flatten_images(np.asarray(npz[ikey]), ikey)
                labels = np.asarray(npz[lkey]).reshape(-1)
                if labels.shape[0] != flat.shape[0]:
                    raise ValidationError(
                        f"{lkey}: length {labels.shape[0]} does not match "
                        f"{flat.shape[0]} images"
                    )
                if shape is None:
                    shape = s
                elif s != shape:
                    raise FormatError(f"{ikey}: shape {s} differs across splits")
                feats_parts.append(flat)
                label_parts.append(labels.astype(np.int64))
                tag_parts.append(np.full(flat.shape[0], _SPLIT_NAMES[split],
                                         dtype=np.uint8))
            feats = np.concatenate(feats_parts)
            labels = np.concatenate(label_parts)
            tags = np.concatenate(tag_parts)
        elif {"features", "labels"} <= keys:
            feats, shape = _flatten_images(np.asarray(npz["features"]), "features")
            labels = np.asarray(npz["labels"]).reshape(-1).astype(np.int64)
            if labels.shape[0] != feats.shape[0]:
                raise ValidationError(
                    f"labels: length {labels.shape[0]} does not match "
                    f"{feats.shape[0]} feature rows"
                )
            tags = np.full(feats.shape[0], SPLIT_TRAIN, dtype=np.uint8)
            if "split_tags" in keys:
                tags = np.asarray(npz["split_tags"]).reshape(-1).astype(np.uint8)
        else:
            raise FormatError(
                f"archive keys {sorted(keys)}: expected 'features'/'labels' "
                "or 'train_images'/'train_labels'"
            )
    feats = normalize_features(feats)
    k = int(labels.max()) + 1 if labels.size else 2
    return Dataset(name=name, features=feats, labels=labels, n_classes=k,
                   feature_shape=shape, split_tags=tags)


def _load_csv(path: str) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError("csv: empty file")
        cols = [c.strip() for c in header]
        if "label" not in cols:
            raise FormatError("csv: missing 'label' column")
        label_col = cols.index("label")
        split_col = cols.index("split") if "split" in cols else None
        feat_cols = [i for i in range(len(cols))
                     if i != label_col and i != split_col]
        feats, labels, tags = [], [], []
        for row in reader:
            if not row:
                continue
            feats.append([float(row[i]) for i in feat_cols])
            labels.append(int(row[label_col]))
            if split_col is None:
                tags.append(SPLIT_TRAIN)
            else:
                cell = row[split_col].strip()
                try:
                    tag = int(cell) if cell not in _SPLIT_NAMES else _SPLIT_NAMES[cell]
                except ValueError:
                    raise FormatError(f"split: unknown value '{cell}'") from None
                if tag not in _SPLIT_CODES:
                    raise FormatError(f"split: unknown value '{cell}'")
                tags.append(tag)
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and labels.min() >= 1:
        labels = labels - 1  # document convention is 1-based
    k = int(labels.max()) + 1 if labels.size else 2
    name = os.path.splitext(os.path.basename(path))[0]
    return Dataset(name=name, features=feats, labels=labels, n_classes=k,
                   feature_shape=(feats.shape[1],),
                   split_tags=np.asarray(tags, dtype=np.uint8))


def load_dataset(path: str, format: str = "array-archive") -> Dataset:
    """Load a dataset from disk.

    ``array-archive`` accepts the canonical directory format or an ``.npz``
    archive; ``csv`` reads delimited vector data (synthetic 2-D exports).
    """
    if not os.path.exists(path):
        raise ValidationError(f"dataset path does not exist: {path}")
    if format == "array-archive":
        if os.path.isdir(path):
            return _load_directory(path)
        return _load_npz(path)
    if format == "csv":
        return _load_csv(path)
    raise ValidationError(f"unknown dataset format '{format}'")


def parse_synthetic_spec(spec: str) -> Dataset:
    """Build a synthetic dataset from a ``synthetic:key=value,...`` string.

    Keys: k (classes), per_class, sigma, radius, seed, name.
    """
    body = spec.split(":", 1)[1] if spec.startswith("synthetic") else spec
    params = {"k": 3, "per_class": 400, "sigma": 0.45, "radius": 1.0,
              "seed": 7, "name": "synthetic"}
    if body:
        for item in body.split(","):
            if not item:
                continue
            if "=" not in item:
                raise ValidationError(f"synthetic spec item '{item}' is not key=value")
            key, val = item.split("=", 1)
            key = key.strip()
            if key not in params:
                raise ValidationError(f"unknown synthetic spec key '{key}'")
            params[key] = val if key == "name" else type(params[key])(val)
    k = int(params["k"])
    means = unit_circle_means(k, radius=float(params["radius"]))
    return make_synthetic(
        n_classes=k,
        per_class_count=int(params["per_class"]),
        class_means=means,
        class_covs=float(params["sigma"]) ** 2,
        seed=int(params["seed"]),
        name=str(params["name"]),
    )
