"""Dataset construction: synthetic subgroup-shifted blobs, CSV ingestion,
deterministic stratified splits, stratified mini-batches, and the
attribute-resampling baseline transform.

Every randomized operation is a pure function of its inputs and a seed,
so repeated invocation is bitwise stable.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int
    attribute: int


@dataclass
class Dataset:
    """Feature matrix X [n, d], labels y [n], binary attributes a [n]."""

    X: np.ndarray
    y: np.ndarray
    a: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=int)
        self.a = np.asarray(self.a, dtype=int)
        if self.X.ndim != 2:
            raise ValueError(f"X must be [n, d], got shape {self.X.shape}")
        n = self.X.shape[0]
        if self.y.shape != (n,) or self.a.shape != (n,):
            raise ValueError(
                f"inconsistent lengths: X has {n} rows, y {self.y.shape}, a {self.a.shape}"
            )
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.a.size and not np.isin(self.a, (0, 1)).all():
            raise ValueError("attributes must be binary (0 or 1)")
        if self.is_single_group:
            logger.info("dataset contains a single attribute group")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    @property
    def is_single_group(self) -> bool:
        return len(set(self.a.tolist())) < 2

    def group_counts(self) -> tuple[int, int]:
        return int(np.sum(self.a == 0)), int(np.sum(self.a == 1))

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.X[idx].copy(), self.y[idx].copy(), self.a[idx].copy(), self.num_classes)

    def samples(self) -> list[Sample]:
        return [Sample(self.X[i].copy(), int(self.y[i]), int(self.a[i])) for i in range(len(self))]

    @classmethod
    def from_samples(cls, samples: list[Sample], num_classes: int) -> "Dataset":
        X = np.stack([s.features for s in samples])
        y = np.array([s.label for s in samples])
        a = np.array([s.attribute for s in samples])
        return cls(X, y, a, num_classes)


@dataclass
class SyntheticConfig:
    n_samples: int = 2000
    feature_dim: int = 10
    num_classes: int = 3
    group_ratio: float = 0.5  # fraction of samples with attribute 0
    class_priors: np.ndarray | None = None  # [2, num_classes]; uniform if None
    class_means: np.ndarray | None = None  # [num_classes, feature_dim]; derived if None
    group_shift: np.ndarray | None = None  # explicit shift added to group-0 means
    group_shift_scale: float = 0.0  # |shift| in units of noise_std when group_shift is None
    noise_std: float = 1.0
    label_noise_rate: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_samples <= 0:
            raise ValueError(f"n_samples must be positive, got {self.n_samples}")
        if self.feature_dim <= 0 or self.num_classes <= 0:
            raise ValueError(
                f"degenerate config: feature_dim={self.feature_dim}, "
                f"num_classes={self.num_classes}"
            )
        if not (0.0 <= self.group_ratio <= 1.0):
            raise ValueError(f"group_ratio must lie in [0, 1], got {self.group_ratio}")
        if self.noise_std <= 0:
            raise ValueError(f"noise_std must be positive, got {self.noise_std}")
        if not (0.0 <= self.label_noise_rate < 1.0):
            raise ValueError(
                f"label_noise_rate must lie in [0, 1), got {self.label_noise_rate}"
            )


def _resolve_priors(cfg: SyntheticConfig) -> np.ndarray:
    if cfg.class_priors is None:
        return np.full((2, cfg.num_classes), 1.0 / cfg.num_classes)
    priors = np.asarray(cfg.class_priors, dtype=np.float64)
    if priors.shape != (2, cfg.num_classes):
        raise ValueError(
            f"class_priors must be [2, {cfg.num_classes}], got {priors.shape}"
        )
    if np.any(priors < 0) or np.any(np.abs(priors.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("class_priors rows must be nonnegative and sum to 1")
    return priors


def _resolve_means(cfg: SyntheticConfig) -> np.ndarray:
    if cfg.class_means is not None:
        means = np.asarray(cfg.class_means, dtype=np.float64)
        if means.shape != (cfg.num_classes, cfg.feature_dim):
            raise ValueError(
                f"class_means must be [{cfg.num_classes}, {cfg.feature_dim}], "
                f"got {means.shape}"
            )
        return means
    # Default layout: unit directions drawn from a seed-derived stream, scaled
    # so neighbouring classes overlap moderately at noise_std.
    sub = np.random.default_rng([cfg.seed, 0x6D])
    raw = sub.normal(size=(cfg.num_classes, cfg.feature_dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return raw * 2.0 * cfg.noise_std


def _resolve_shift(cfg: SyntheticConfig) -> np.ndarray:
    if cfg.group_shift is not None:
        shift = np.asarray(cfg.group_shift, dtype=np.float64)
        if shift.shape != (cfg.feature_dim,):
            raise ValueError(
                f"group_shift must have length {cfg.feature_dim}, got {shift.shape}"
            )
        return shift
    direction = np.ones(cfg.feature_dim) / np.sqrt(cfg.feature_dim)
    return direction * cfg.group_shift_scale * cfg.noise_std


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Gaussian blobs per (class, group); group 0's means carry the shift.

    Labels are then flipped independently at `label_noise_rate` to a
    uniformly random other class.  Fully deterministic given the seed.
    """
    cfg.validate()
    priors = _resolve_priors(cfg)
    means = _resolve_means(cfg)
    shift = _resolve_shift(cfg)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_samples

    attrs = np.where(rng.random(n) < cfg.group_ratio, 0, 1)
    cum = np.cumsum(priors, axis=1)
    draws = rng.random(n)
    labels = np.empty(n, dtype=int)
    for a in (0, 1):
        mask = attrs == a
        labels[mask] = np.searchsorted(cum[a], draws[mask], side="right")
    labels = np.clip(labels, 0, cfg.num_classes - 1)

    X = means[labels] + rng.normal(0.0, cfg.noise_std, size=(n, cfg.feature_dim))
    X[attrs == 0] += shift

    if cfg.label_noise_rate > 0:
        flip = rng.random(n) < cfg.label_noise_rate
        if cfg.num_classes > 1:
            offsets = 1 + np.floor(rng.random(n) * (cfg.num_classes - 1)).astype(int)
            labels = np.where(flip, (labels + offsets) % cfg.num_classes, labels)
    return Dataset(X, labels, attrs, cfg.num_classes)


# -- tabular files ---------------------------------------------------------------


@dataclass
class TableSchema:
    """Column roles for a delimited table with a header row."""

    features: list[str]
    label: str
    attribute: str
    label_map: dict[str, int] | None = None
    attribute_map: dict[str, int] | None = None


class TableFormatError(ValueError):
    pass


def _map_categories(raw: list[str], declared: dict[str, int] | None, role: str):
    """Map raw category strings to indices; returns (indices, mapping or None).

    Numeric-looking columns pass through unmapped.  Inferred mappings sort
    categories lexicographically for reproducibility.
    """
    try:
        return [int(v) for v in raw], None
    except ValueError:
        pass
    if declared is not None:
        out = []
        for i, v in enumerate(raw):
            if v not in declared:
                raise TableFormatError(
                    f"row {i + 1}: unknown {role} category '{v}'; "
                    f"declared categories are {sorted(declared)}"
                )
            out.append(declared[v])
        return out, dict(declared)
    cats = sorted(set(raw))
    mapping = {c: i for i, c in enumerate(cats)}
    return [mapping[v] for v in raw], mapping


def load_table(path, schema: TableSchema, num_classes: int | None = None):
    """Parse a comma-separated table into a Dataset.

    Returns (dataset, mappings) where mappings holds the label/attribute
    category dictionaries actually used (empty when columns were numeric).
    Persist them with `save_mapping` for reproducibility.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = list(schema.features) + [schema.label, schema.attribute]
        missing = [c for c in needed if c not in header]
        if missing:
            raise TableFormatError(f"missing column(s) {missing}; header was {header}")
        feats, raw_labels, raw_attrs = [], [], []
        for i, row in enumerate(reader, start=1):
            vals = []
            for c in schema.features:
                try:
                    vals.append(float(row[c]))
                except (TypeError, ValueError):
                    raise TableFormatError(
                        f"row {i}: unparseable number '{row[c]}' in column '{c}'"
                    ) from None
            feats.append(vals)
            raw_labels.append(row[schema.label])
            raw_attrs.append(row[schema.attribute])
    if not feats:
        raise TableFormatError(f"no data rows in {path}")
    labels, label_map = _map_categories(raw_labels, schema.label_map, "label")
    attrs, attr_map = _map_categories(raw_attrs, schema.attribute_map, "attribute")
    bad_attr = [v for v in set(attrs) if v not in (0, 1)]
    if bad_attr:
        raise TableFormatError(
            f"attribute values must be binary after mapping, got {sorted(set(attrs))}"
        )
    if num_classes is None:
        num_classes = (len(label_map) if label_map else max(labels) + 1)
    ds = Dataset(np.array(feats), np.array(labels), np.array(attrs), num_classes)
    mappings = {}
    if label_map:
        mappings["label"] = label_map
    if attr_map:
        mappings["attribute"] = attr_map
    return ds, mappings


def save_mapping(mappings: dict[str, dict[str, int]], path) -> None:
    """Write category mappings as `role.category = index` lines."""
    with open(path, "w") as fh:
        for role in sorted(mappings):
            for cat, idx in sorted(mappings[role].items()):
                fh.write(f"{role}.{cat} = {idx}\n")


def save_table(ds: Dataset, path) -> None:
    """Write a Dataset as CSV with full-precision floats (exact round trip)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        cols = [f"feature_{j}" for j in range(ds.feature_dim)] + ["label", "attr"]
        writer.writerow(cols)
        for i in range(len(ds)):
            writer.writerow(
                [repr(float(v)) for v in ds.X[i]] + [int(ds.y[i]), int(ds.a[i])]
            )


def default_schema(feature_dim: int) -> TableSchema:
    return TableSchema(
        features=[f"feature_{j}" for j in range(feature_dim)],
        label="label",
        attribute="attr",
    )


# -- splitting and batching --------------------------------------------------------


def _largest_remainder(quotas: np.ndarray, total: int, capacity: np.ndarray) -> np.ndarray:
    """Integer allocation hitting `total` exactly, within +1 of each floor."""
    alloc = np.floor(quotas).astype(int)
    alloc = np.minimum(alloc, capacity)
    order = np.argsort(-(quotas - np.floor(quotas)), kind="stable")
    i = 0
    while alloc.sum() < total and i < len(order) * 2:
        c = order[i % len(order)]
        if alloc[c] < capacity[c]:
            alloc[c] += 1
        i += 1
    return alloc


def split(ds: Dataset, ratios, seed: int, stratified: bool = True):
    """Deterministic (train, val, test) partition.

    Stratified mode preserves each (label, attribute) cell's proportions up
    to one sample; cells smaller than 3 go wholly to train with a logged
    warning.  Global val/test sizes are floor(ratio * N) over the
    allocatable samples, remainder to train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"need three positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1 within 1e-9, got sum {sum(ratios)}")
    n = len(ds)
    rng = np.random.default_rng([seed, 0x51])
    perm = rng.permutation(n)

    if stratified:
        keys = sorted({(int(ds.y[i]), int(ds.a[i])) for i in range(n)})
        cells = {k: [] for k in keys}
        for i in perm:
            cells[(int(ds.y[i]), int(ds.a[i]))].append(int(i))
    else:
        cells = {(0, 0): [int(i) for i in perm]}
        keys = [(0, 0)]

    train_idx, val_idx, test_idx = [], [], []
    alloc_keys = []
    for k in keys:
        if stratified and len(cells[k]) < 3:
            logger.warning(
                "cell (label=%s, attr=%s) has %d sample(s); placed wholly in train",
                k[0], k[1], len(cells[k]),
            )
            train_idx.extend(cells[k])
        else:
            alloc_keys.append(k)
    n_alloc = sum(len(cells[k]) for k in alloc_keys)
    sizes = np.array([len(cells[k]) for k in alloc_keys], dtype=float)
    target_val = int(np.floor(ratios[1] * n_alloc))
    target_test = int(np.floor(ratios[2] * n_alloc))
    val_alloc = _largest_remainder(ratios[1] * sizes, target_val, sizes.astype(int))
    rem_capacity = sizes.astype(int) - val_alloc
    test_alloc = _largest_remainder(ratios[2] * sizes, target_test, rem_capacity)
    for k, nv, nt in zip(alloc_keys, val_alloc, test_alloc):
        items = cells[k]
        val_idx.extend(items[:nv])
        test_idx.extend(items[nv : nv + nt])
        train_idx.extend(items[nv + nt :])
    return ds.take(sorted(train_idx)), ds.take(sorted(val_idx)), ds.take(sorted(test_idx))


def stratified_batches(
    ds: Dataset,
    batch_size: int,
    seed: int,
    epoch: int = 0,
    min_per_group: int = 2,
) -> list[np.ndarray]:
    """Index batches guaranteeing >= min_per_group samples of each group.

    Two group-wise shuffled streams are interleaved proportionally to the
    group sizes; the epoch is folded into the stream seed so each epoch
    reshuffles deterministically.  A final partial batch is kept only when
    it still satisfies the per-group minimum.
    """
    if min_per_group < 1:
        raise ValueError(f"min_per_group must be at least 1, got {min_per_group}")
    if batch_size < 2 * min_per_group:
        raise ValueError(
            f"batch_size {batch_size} cannot hold {min_per_group} of each group"
        )
    idx0 = np.flatnonzero(ds.a == 0)
    idx1 = np.flatnonzero(ds.a == 1)
    if idx0.size == 0 or idx1.size == 0:
        raise ValueError("stratified batching needs both attribute groups present")
    if min(idx0.size, idx1.size) < min_per_group:
        raise ValueError(
            f"smallest group has {min(idx0.size, idx1.size)} samples, "
            f"fewer than min_per_group={min_per_group}"
        )
    rng = np.random.default_rng([seed, epoch, 0xB4])
    stream0 = idx0[rng.permutation(idx0.size)]
    stream1 = idx1[rng.permutation(idx1.size)]
    n0, n1 = idx0.size, idx1.size
    total = n0 + n1
    # A full batch draws at least min_per_group from each stream, so the
    # smaller stream caps how many full batches a skewed dataset supports.
    n_full = min(total // batch_size, n0 // min_per_group, n1 // min_per_group)

    batches: list[np.ndarray] = []
    pos0 = pos1 = 0
    if n_full > 0:
        full_total = n_full * batch_size
        take0 = int(round(n0 * full_total / total))
        take0 = max(take0, n_full * min_per_group)
        take0 = min(take0, full_total - n_full * min_per_group)
        take0 = min(max(take0, full_total - n1), n0)
        base, extra = divmod(take0, n_full)
        for k in range(n_full):
            c0 = base + (1 if k < extra else 0)
            c1 = batch_size - c0
            batches.append(
                np.concatenate([stream0[pos0 : pos0 + c0], stream1[pos1 : pos1 + c1]])
            )
            pos0 += c0
            pos1 += c1
    rem0 = n0 - pos0
    rem1 = n1 - pos1
    if min_per_group <= rem0 and min_per_group <= rem1 and rem0 + rem1 <= batch_size:
        batches.append(np.concatenate([stream0[pos0:], stream1[pos1:]]))
    elif rem0 + rem1 > 0:
        logger.debug("dropping %d sample(s) that cannot form a stratified batch", rem0 + rem1)
    return batches


def resample_balanced(ds: Dataset, seed: int) -> Dataset:
    """Oversample the minority attribute group (with replacement) to parity."""
    n0, n1 = ds.group_counts()
    if n0 == 0 or n1 == 0:
        raise ValueError(f"cannot resample: group counts are {n0} and {n1}")
    rng = np.random.default_rng([seed, 0xE5])
    idx = np.arange(len(ds))
    if n0 != n1:
        minority = 0 if n0 < n1 else 1
        pool = np.flatnonzero(ds.a == minority)
        extra = rng.choice(pool, size=abs(n1 - n0), replace=True)
        idx = np.concatenate([idx, extra])
    return ds.take(rng.permutation(idx))
