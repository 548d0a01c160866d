"""Dataset containers, IDX/CSV parsing, rescaling, class filtering and splits."""

from __future__ import annotations

import csv
import gzip
import io
import json
import os
import struct
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    pass


class IdxFormatError(DataError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class RescaleStats:
    minimum: np.ndarray
    maximum: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        span = self.maximum - self.minimum
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (x - self.minimum) / safe, 0.0)
        # values beyond the fitted range are clipped to keep the [0, 1] contract
        return np.clip(out, 0.0, 1.0)

    def invert(self, u: np.ndarray) -> np.ndarray:
        return self.minimum + u * (self.maximum - self.minimum)

    def to_json(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: dict | None = None
    rescale: RescaleStats | None = field(default=None, compare=False)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.shape[0] != y.shape[0]:
            raise DataError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if x.size and (x.min() < -1e-9 or x.max() > 1 + 1e-9):
            raise DataError(f"features must lie in [0, 1]; found range [{x.min()}, {x.max()}]")
        x = x.copy()
        y = y.copy()
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def instance_shape(self) -> tuple[int, ...]:
        return self.features.shape[1:]

    @property
    def n_features(self) -> int:
        return int(np.prod(self.instance_shape))

    def subset(self, idx) -> "Dataset":
        return replace(self, features=self.features[idx], labels=self.labels[idx])

    def classes(self) -> list:
        return sorted(np.unique(self.labels).tolist())


# IDX

_IDX_TYPES = {0x08: "unsigned byte", 0x09: "signed byte", 0x0B: "short", 0x0C: "int",
              0x0D: "float", 0x0E: "double"}


def parse_idx(buf: bytes, rescale: bool = True) -> np.ndarray:
    """Decode an IDX container.

    Only the unsigned-byte payload type is accepted. With ``rescale`` the
    bytes are divided by 255, otherwise raw integer values are returned
    (as for label files).
    """
    if len(buf) < 4:
        raise IdxFormatError("truncated header", len(buf))
    if buf[0] != 0 or buf[1] != 0:
        raise IdxFormatError(f"malformed magic {buf[:2].hex()}", 0)
    dtype, rank = buf[2], buf[3]
    if dtype != 0x08:
        name = _IDX_TYPES.get(dtype, f"unknown 0x{dtype:02x}")
        raise IdxFormatError(f"unsupported payload type {name}", 2)
    header_end = 4 + 4 * rank
    if len(buf) < header_end:
        raise IdxFormatError("truncated dimension header", len(buf))
    dims = struct.unpack(f">{rank}I", buf[4:header_end])
    count = int(np.prod(dims, dtype=np.int64))
    need = header_end + count
    if len(buf) < need:
        raise IdxFormatError(f"truncated payload: expected {count} bytes, file ends", len(buf))
    if len(buf) > need:
        raise IdxFormatError("trailing bytes after payload", need)
    arr = np.frombuffer(buf, dtype=np.uint8, count=count, offset=header_end).reshape(dims)
    if rescale:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.int64)


def serialize_idx(arr: np.ndarray, rescaled: bool = True) -> bytes:
    a = np.asarray(arr)
    if rescaled:
        a = np.rint(a * 255.0)
    if a.size and (a.min() < 0 or a.max() > 255):
        raise DataError("values do not fit an unsigned-byte payload")
    a = a.astype(np.uint8)
    return bytes([0, 0, 0x08, a.ndim]) + struct.pack(f">{a.ndim}I", *a.shape) + a.tobytes()


def read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def load_idx_dataset(images_path, labels_path) -> Dataset:
    x = parse_idx(read_bytes(images_path))
    y = parse_idx(read_bytes(labels_path), rescale=False)
    return Dataset(x, y)


def load_mnist79(mnist_dir=None) -> Dataset:
    """Digits 7 and 9 from MNIST.

    Reads ``train-images-idx3-ubyte[.gz]`` / ``train-labels-idx1-ubyte[.gz]``
    from ``mnist_dir`` (or ``$DFL_MNIST_DIR``) when present; otherwise falls
    back to the bundled 1000-image subset (500 per class).
    """
    mnist_dir = mnist_dir or os.environ.get("DFL_MNIST_DIR")
    if mnist_dir:
        d = Path(mnist_dir)
        for suffix in ("", ".gz"):
            img, lab = d / f"train-images-idx3-ubyte{suffix}", d / f"train-labels-idx1-ubyte{suffix}"
            if img.exists() and lab.exists():
                return filter_classes(load_idx_dataset(img, lab), [7, 9])
    pkg = resources.files("dflocate.datasets")
    with resources.as_file(pkg / "mnist79-images-idx3-ubyte.gz") as img, \
            resources.as_file(pkg / "mnist79-labels-idx1-ubyte.gz") as lab:
        return load_idx_dataset(img, lab)


# CSV

def _numeric(cell: str, row: int, col: int) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"non-numeric cell {cell!r} at row {row}, column {col}") from None
    if not np.isfinite(v):
        raise DataError(f"non-finite cell {cell!r} at row {row}, column {col}")
    return v


def fit_rescale(x: np.ndarray) -> RescaleStats:
    flat = x.reshape(x.shape[0], -1)
    return RescaleStats(flat.min(axis=0), flat.max(axis=0))


def _parse_table(text: str, label_column: int | str = -1) -> tuple[np.ndarray, np.ndarray]:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise DataError("empty CSV")
    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header, rows = rows[0], rows[1:]
    width = len(rows[0]) if rows else 0
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"row {i + (1 if header else 0)} has {len(r)} cells, expected {width}")
    if isinstance(label_column, str):
        if header is None or label_column not in header:
            raise DataError(f"label column {label_column!r} not found")
        label_column = header.index(label_column)
    if label_column < 0:
        label_column += width
    if not 0 <= label_column < width:
        raise DataError(f"label column {label_column} out of range for width {width}")
    offset = 1 if header else 0
    table = np.array([[_numeric(c, i + offset, j) for j, c in enumerate(r)] for i, r in enumerate(rows)])
    y = table[:, label_column]
    x = np.delete(table, label_column, axis=1)
    if np.all(y == np.round(y)):
        y = y.astype(np.int64)
    return x, y


def parse_csv_dataset(text: str, label_column: int | str = -1, rescale: bool = True,
                      stats: RescaleStats | None = None) -> Dataset:
    """Parse a rectangular numeric table.

    A first row containing any non-numeric cell is taken as a header. With
    ``rescale`` each feature column is min-max mapped to [0, 1] using ``stats``
    if given (e.g. fitted on the training file) or the table's own range.
    Constant columns map to 0.
    """
    x, y = _parse_table(text, label_column)
    scale = None
    if rescale:
        scale = stats or fit_rescale(x)
        x = scale.apply(x)
    return Dataset(x, y, rescale=scale)


def csv_train_test(text: str, test_fraction: float, seed: int,
                   label_column: int | str = -1) -> tuple[Dataset, Dataset]:
    """Split a raw table, then rescale both parts with the training range."""
    x, y = _parse_table(text, label_column)
    n = len(x)
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n))
    if not 0 < n_test < n:
        raise DataError(f"test fraction {test_fraction} leaves an empty part of {n} rows")
    tr, te = perm[: n - n_test], perm[n - n_test:]
    stats = fit_rescale(x[tr])
    return (Dataset(stats.apply(x[tr]), y[tr], rescale=stats),
            Dataset(stats.apply(x[te]), y[te], rescale=stats))


def load_csv_dataset(path, label_column=-1, rescale=True, stats=None) -> Dataset:
    return parse_csv_dataset(Path(path).read_text(), label_column, rescale, stats)


# manifests

def load_manifest(path) -> Dataset:
    """Load a dataset from a JSON manifest.

    Recognised keys: ``format`` ("idx", "csv", "mnist79", or a synthetic
    generator "two-class", "bump-sequences", "linear-regression"),
    ``images`` and ``labels`` (idx), ``path``, ``label_column``, ``rescale``
    (csv), ``dir`` (mnist79), ``n`` (synthetic), ``keep_classes``,
    ``relabel``, ``limit``, ``seed``.
    """
    path = Path(path)
    try:
        m = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    return dataset_from_manifest(m, base=path.parent)


def dataset_from_manifest(m: dict, base: Path | str = ".") -> Dataset:
    base = Path(base)
    fmt = m.get("format", "csv")

    def resolve(p):
        q = Path(p)
        q = q if q.is_absolute() else base / q
        if not q.exists():
            raise DataError(f"dataset file not found: {q}")
        return q

    if fmt == "idx":
        data = load_idx_dataset(resolve(m["images"]), resolve(m["labels"]))
    elif fmt == "csv":
        data = load_csv_dataset(resolve(m["path"]), m.get("label_column", -1), m.get("rescale", True))
    elif fmt == "mnist79":
        data = load_mnist79(resolve(m["dir"]) if m.get("dir") else None)
    elif fmt in ("two-class", "bump-sequences", "linear-regression"):
        from . import synthetic

        gen = {"two-class": synthetic.two_class, "bump-sequences": synthetic.bump_sequences,
               "linear-regression": synthetic.linear_regression}[fmt]
        kwargs = {"seed": m.get("seed", 0)}
        if "n" in m:
            kwargs["n"] = m["n"]
        data = gen(**kwargs)
    else:
        raise DataError(f"unknown dataset format {fmt!r}")
    if "keep_classes" in m:
        data = filter_classes(data, m["keep_classes"], m.get("relabel", False))
    if "limit" in m and m["limit"] < len(data):
        idx = np.random.default_rng(m.get("seed", 0)).permutation(len(data))[: m["limit"]]
        data = data.subset(np.sort(idx))
    return data


# subsetting

def filter_classes(data: Dataset, keep: Sequence, relabel: bool = False) -> Dataset:
    keep = list(keep)
    present = set(np.unique(data.labels).tolist())
    unknown = [c for c in keep if c not in present]
    if unknown:
        raise DataError(f"classes {unknown} not present in dataset")
    mask = np.isin(data.labels, keep)
    out = data.subset(mask)
    if relabel:
        mapping = {c: i for i, c in enumerate(keep)}
        labels = np.array([mapping[c] for c in out.labels.tolist()], dtype=np.int64)
        out = replace(out, labels=labels, class_names={i: str(c) for c, i in mapping.items()})
    return out


def split(data: Dataset, fractions: Sequence[float], seed: int) -> list[Dataset]:
    """Seeded shuffle, then consecutive chunks sized by ``fractions``."""
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions {fractions} must be nonnegative and sum to 1")
    n = len(data)
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.rint(np.cumsum([0.0] + fractions) * n).astype(int)
    bounds[-1] = n
    return [data.subset(perm[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    if not 2 <= k <= n:
        raise DataError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]
