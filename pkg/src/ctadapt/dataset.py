"""MedMNIST-style archives, distorted dataset copies, folds and domain-labelled batches.

Archives are ZIP files of NPY v1.0 members named ``{split}_images.npy`` and
``{split}_labels.npy`` for the splits ``train``, ``val`` and ``test``. Images
and labels are stored as ``uint8``; labels as an ``(N, 1)`` column like the
published MedMNIST files.
"""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .distortion import DistortionSpec, apply_distortion, spec_to_dict

SPLITS = ("train", "val", "test")
NUM_CLASSES = 11
LABEL_SENTINEL = -1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class ArchiveError(ValueError):
    """Base class for archive parsing problems."""


class MissingKeyError(ArchiveError):
    pass


class UnsupportedDtypeError(ArchiveError):
    pass


class MalformedHeaderError(ArchiveError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, H, W) uint8
    labels: np.ndarray  # (N,) uint8
    name: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels).reshape(-1)
        if self.images.ndim != 3:
            raise ValueError(f"images must be (N, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.images)

    def subset(self, idx, name: str | None = None) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx],
                              self.name if name is None else name)

    def unlabeled(self) -> "UnlabeledView":
        return UnlabeledView(self)


class UnlabeledView:
    """Target-domain wrapper: exposes images and counts every read of ``labels``."""

    def __init__(self, ds: LabeledDataset):
        self._ds = ds
        self.name = ds.name
        self.label_reads = 0

    @property
    def images(self) -> np.ndarray:
        return self._ds.images

    @property
    def labels(self) -> np.ndarray:
        self.label_reads += 1
        return self._ds.labels

    def __len__(self):
        return len(self._ds)


def concat(parts: Sequence[LabeledDataset], name: str) -> LabeledDataset:
    return LabeledDataset(np.concatenate([p.images for p in parts]),
                          np.concatenate([p.labels for p in parts]), name)


def to_unit(images) -> np.ndarray:
    """8-bit intensities to float64 in [0, 1]."""
    return np.asarray(images, dtype=np.float64) / 255.0


def quantize(img) -> np.ndarray:
    """Clamp to [0, 1] and round half up onto 0..255."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


# -- archive I/O --------------------------------------------------------------

def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), version=(1, 0),
                              allow_pickle=False)
    return buf.getvalue()


def _parse_npy(raw: bytes, key: str) -> np.ndarray:
    fp = io.BytesIO(raw)
    try:
        version = np.lib.format.read_magic(fp)
        if version != (1, 0):
            raise MalformedHeaderError(f"{key}: unsupported NPY version {version}")
        shape, fortran, dtype = np.lib.format.read_array_header_1_0(fp)
    except MalformedHeaderError:
        raise
    except (ValueError, SyntaxError) as exc:
        raise MalformedHeaderError(f"{key}: {exc}") from exc
    if dtype != np.dtype("u1"):
        raise UnsupportedDtypeError(f"{key}: dtype {dtype.str} (expected |u1)")
    count = int(np.prod(shape, dtype=np.int64))
    data = raw[fp.tell():]
    if len(data) != count:
        raise MalformedHeaderError(f"{key}: expected {count} data bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype=np.uint8).copy()
    return arr.reshape(shape, order="F" if fortran else "C")


def read_npz(path) -> dict[str, LabeledDataset]:
    """Load every split of a MedMNIST-style archive."""
    with zipfile.ZipFile(path) as zf:
        members = {n[:-4] if n.endswith(".npy") else n: n for n in zf.namelist()}
        out = {}
        for split in SPLITS:
            arrays = []
            for kind in ("images", "labels"):
                key = f"{split}_{kind}"
                if key not in members:
                    raise MissingKeyError(f"archive {path} has no '{key}' array")
                arrays.append(_parse_npy(zf.read(members[key]), key))
            images, labels = arrays
            out[split] = LabeledDataset(images, labels.reshape(len(labels)), split)
    return out


def write_npz(datasets: dict[str, LabeledDataset], path) -> None:
    """Write splits in fixed key order with fixed ZIP timestamps (byte-stable)."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for split in SPLITS:
            ds = datasets[split]
            for kind, arr in (("images", ds.images),
                              ("labels", np.asarray(ds.labels).reshape(-1, 1))):
                if arr.dtype != np.uint8:
                    raise UnsupportedDtypeError(f"{split}_{kind}: dtype {arr.dtype} (need uint8)")
                info = zipfile.ZipInfo(f"{split}_{kind}.npy", date_time=_ZIP_DATE)
                info.external_attr = 0o644 << 16
                zf.writestr(info, _npy_bytes(arr))


def content_digest(datasets: dict[str, LabeledDataset]) -> str:
    """SHA-256 over split order, shapes, dtypes and raw array bytes."""
    h = hashlib.sha256()
    for split in SPLITS:
        if split not in datasets:
            continue
        ds = datasets[split]
        for arr in (np.ascontiguousarray(ds.images), np.ascontiguousarray(ds.labels.reshape(-1))):
            h.update(f"{split}|{arr.dtype.str}|{arr.shape}|".encode())
            h.update(arr.tobytes())
    return h.hexdigest()


# -- distorted copies ---------------------------------------------------------

def derive_seed(master_seed: int, *keys: int) -> np.random.SeedSequence:
    """Independent stream per key path (``SeedSequence`` spawn keys)."""
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))


def generate_distorted_copies(ds: LabeledDataset, specs: Sequence[DistortionSpec],
                              master_seed: int, stream: int = 0) -> list[LabeledDataset]:
    """One 8-bit copy of ``ds`` per spec.

    Image ``i`` of copy ``j`` draws from ``derive_seed(master_seed, stream, j, i)``;
    ``stream`` separates the train/val/test splits of one archive.
    """
    unit = to_unit(ds.images)
    copies = []
    for j, spec in enumerate(specs):
        out = np.empty_like(ds.images)
        for i in range(len(ds)):
            rng = np.random.default_rng(derive_seed(master_seed, stream, j, i))
            out[i] = quantize(apply_distortion(unit[i], spec, rng))
        copies.append(LabeledDataset(out, ds.labels.copy(), spec.kind))
    return copies


# -- folds and batches --------------------------------------------------------

@dataclass(frozen=True)
class FoldSplit:
    assignments: np.ndarray
    k: int

    def fold(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """``(train_indices, held_out_indices)`` for fold ``i``."""
        if not 0 <= i < self.k:
            raise ValueError(f"fold {i} out of range for k={self.k}")
        return np.flatnonzero(self.assignments != i), np.flatnonzero(self.assignments == i)


def split_folds(n: int, k: int = 5, seed: int = 0) -> FoldSplit:
    if k < 2 or n < k:
        raise ValueError(f"need n >= k >= 2, got n={n}, k={k}")
    perm = np.random.default_rng(derive_seed(seed, 7)).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % k
    return FoldSplit(assignments, k)


@dataclass
class DomainBatch:
    inputs: np.ndarray   # (B, H, W) float64 in [0, 1]
    labels: np.ndarray   # (B,) int64; LABEL_SENTINEL on target rows
    domain: np.ndarray   # (B,) 0 = source, 1 = target
    weights: np.ndarray  # (B,) 1 - domain


def make_batches(source: LabeledDataset, target=None, batch_size: int = 64,
                 seed: int = 0, epoch: int = 0) -> Iterator[DomainBatch]:
    """Shuffled minibatches for one epoch.

    Without a target: consecutive slices of a source permutation, last one
    partial. With a target: half source, half target per batch, one batch
    per ``batch_size / 2`` source images; both streams wrap around their
    own permutation so every batch is full. Target labels are never read.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    n = len(source)
    src_perm = np.random.default_rng(derive_seed(seed, epoch, 0)).permutation(n)
    if target is None:
        for start in range(0, n, batch_size):
            idx = src_perm[start:start + batch_size]
            b = len(idx)
            yield DomainBatch(to_unit(source.images[idx]), source.labels[idx].astype(np.int64),
                              np.zeros(b), np.ones(b))
        return
    if batch_size % 2:
        raise ValueError("batch_size must be even when a target domain is present")
    half = batch_size // 2
    tgt_perm = np.random.default_rng(derive_seed(seed, epoch, 1)).permutation(len(target))
    n_batches = -(-n // half)
    for k in range(n_batches):
        pos = np.arange(k * half, (k + 1) * half)
        s_idx = src_perm[pos % n]
        t_idx = tgt_perm[pos % len(target)]
        inputs = np.concatenate((to_unit(source.images[s_idx]), to_unit(target.images[t_idx])))
        labels = np.concatenate((source.labels[s_idx].astype(np.int64),
                                 np.full(half, LABEL_SENTINEL, dtype=np.int64)))
        domain = np.concatenate((np.zeros(half), np.ones(half)))
        yield DomainBatch(inputs, labels, domain, 1.0 - domain)


# -- generation to disk -------------------------------------------------------

def write_distorted_archives(splits: dict[str, LabeledDataset], specs: Sequence[DistortionSpec],
                             master_seed: int, out_dir, subset: int | None = None) -> list[dict]:
    """Write ``{kind}.npz`` plus a ``{kind}.manifest.json`` per spec; return the manifests.

    ``subset`` keeps the first N images of every split. Split ``s`` of copy
    ``j`` uses stream ``SPLITS.index(s)``, so the splits draw independent noise.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if subset is not None:
        splits = {s: ds.subset(np.arange(min(subset, len(ds))), s) for s, ds in splits.items()}
    per_split = {s: generate_distorted_copies(splits[s], specs, master_seed, stream=k)
                 for k, s in enumerate(SPLITS)}
    manifests = []
    for j, spec in enumerate(specs):
        copy = {s: per_split[s][j] for s in SPLITS}
        write_npz(copy, out / f"{spec.kind}.npz")
        manifest = {"spec": spec_to_dict(spec), "master_seed": int(master_seed),
                    "copy_index": j, "counts": {s: len(copy[s]) for s in SPLITS},
                    "digest": content_digest(copy)}
        (out / f"{spec.kind}.manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        manifests.append(manifest)
    return manifests
