"""Synthetic spectrogram-like datasets with known spectral ground truth, and their file format.

A dataset directory holds ``meta`` (JSON text: bins, class table,
normalization stats), and per example ``exNNNN.spec`` (magic ``GNS1``, u32 F,
u32 T, float32 row-major, little-endian) plus ``exNNNN.lab`` (CSV
``frame_index,class_index``).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

SPEC_MAGIC = b"GNS1"
META_VERSION = 1
SILENCE = "sil"


@dataclass
class ClassSpec:
    """One synthetic class.

    ``bands`` is a list of (center_bin, half_width, intensity): rows
    ``center-half_width .. center+half_width`` are raised by ``intensity``.
    ``transient`` is (sharpness, intensity): broadband energy that drops from
    high to low at the segment midpoint.
    """

    name: str
    bands: list = field(default_factory=list)
    transient: tuple | None = None
    seg_len: tuple = (8, 16)

    def validate(self, bins: int) -> None:
        if not self.bands and self.transient is None:
            raise ConfigError(f"class {self.name!r} has no pattern")
        for center, width, intensity in self.bands:
            if center - width < 0 or center + width >= bins:
                raise ConfigError(
                    f"class {self.name!r}: band {center}±{width} outside [0, {bins})"
                )
            if not np.isfinite(intensity):
                raise ConfigError(f"class {self.name!r}: non-finite intensity")
        lo, hi = self.seg_len
        if not 1 <= lo <= hi:
            raise ConfigError(f"class {self.name!r}: bad segment length range {self.seg_len}")

    def band_rows(self) -> list[int]:
        rows = set()
        for center, width, _ in self.bands:
            rows.update(range(center - width, center + width + 1))
        return sorted(rows)

    def render(self, bins: int, length: int) -> np.ndarray:
        out = np.zeros((bins, length))
        for center, width, intensity in self.bands:
            out[center - width:center + width + 1, :] += intensity
        if self.transient is not None:
            sharpness, intensity = self.transient
            tau = np.arange(length) - (length - 1) / 2.0
            out += intensity / (1.0 + np.exp(sharpness * tau))[None, :]
        return out


@dataclass
class Example:
    spectrogram: np.ndarray  # (F, T) float64
    labels: np.ndarray  # (T,) int


@dataclass
class Dataset:
    examples: list[Example]
    class_names: list[str]  # index len(class_names) is silence
    mean: np.ndarray  # per-bin stats before z-normalization
    std: np.ndarray
    class_specs: list[ClassSpec] = field(default_factory=list)

    @property
    def bins(self) -> int:
        return len(self.mean)

    @property
    def silence_index(self) -> int:
        return len(self.class_names)

    @property
    def num_labels(self) -> int:
        return len(self.class_names) + 1

    def label_name(self, index: int) -> str:
        return SILENCE if index == self.silence_index else self.class_names[index]


def generate(
    class_specs,
    n_examples: int,
    bins: int,
    frames: int,
    noise_std: float,
    seed: int,
    silence_prob: float = 0.25,
    silence_len: tuple = (3, 8),
) -> Dataset:
    """Random concatenations of class segments and silence, plus noise, z-normalized per bin."""
    if not class_specs:
        raise ConfigError("need at least one class")
    if bins < 1 or frames < 1 or n_examples < 1:
        raise ConfigError("bins, frames and n_examples must be positive")
    for spec in class_specs:
        spec.validate(bins)
    silence = len(class_specs)
    raw = []
    for child in np.random.SeedSequence(seed).spawn(n_examples):
        rng = np.random.default_rng(child)
        x = np.zeros((bins, frames))
        labels = np.empty(frames, dtype=np.int64)
        t = 0
        while t < frames:
            if silence_prob > 0 and rng.random() < silence_prob:
                n = int(rng.integers(silence_len[0], silence_len[1] + 1))
                n = min(n, frames - t)
                labels[t:t + n] = silence
            else:
                k = int(rng.integers(len(class_specs)))
                lo, hi = class_specs[k].seg_len
                n = min(int(rng.integers(lo, hi + 1)), frames - t)
                x[:, t:t + n] = class_specs[k].render(bins, n)
                labels[t:t + n] = k
            t += n
        if noise_std > 0:
            x += rng.normal(0.0, noise_std, x.shape)
        raw.append(Example(x, labels))

    stacked = np.concatenate([ex.spectrogram for ex in raw], axis=1)
    mean = stacked.mean(axis=1)
    std = stacked.std(axis=1)
    std[std == 0] = 1.0
    for ex in raw:
        ex.spectrogram = (ex.spectrogram - mean[:, None]) / std[:, None]
    return Dataset(raw, [c.name for c in class_specs], mean, std, list(class_specs))


# -- file format ---------------------------------------------------------------

def write_spec(path, x: np.ndarray) -> None:
    x = np.asarray(x)
    f, t = x.shape
    with open(path, "wb") as fh:
        fh.write(SPEC_MAGIC + struct.pack("<II", f, t))
        fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def read_spec(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != SPEC_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}")
    if len(buf) < 12:
        raise FormatError(f"{path}: truncated header")
    f, t = struct.unpack_from("<II", buf, 4)
    if len(buf) != 12 + 4 * f * t:
        raise FormatError(f"{path}: expected {f}x{t} float32 payload, got {len(buf) - 12} bytes")
    return np.frombuffer(buf, dtype="<f4", offset=12).reshape(f, t).astype(np.float64)


def save_dataset(path, ds: Dataset) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    specs = {c.name: c for c in ds.class_specs}
    meta = {
        "format": "gradnap-dataset",
        "version": META_VERSION,
        "bins": ds.bins,
        "n_examples": len(ds.examples),
        "classes": [
            {"index": i, "name": n, "spec": asdict(specs[n]) if n in specs else None}
            for i, n in enumerate(ds.class_names)
        ],
        "silence_index": ds.silence_index,
        "mean": [float(v) for v in ds.mean],
        "std": [float(v) for v in ds.std],
    }
    (path / "meta").write_text(json.dumps(meta, indent=1) + "\n")
    for i, ex in enumerate(ds.examples):
        write_spec(path / f"ex{i:04d}.spec", ex.spectrogram)
        with open(path / f"ex{i:04d}.lab", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_index", "class_index"])
            w.writerows((t, int(c)) for t, c in enumerate(ex.labels))


def _read_labels(path, name: str, frames: int) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] == ["frame_index", "class_index"]:
        rows = rows[1:]
    if len(rows) != frames:
        raise DataError(f"{name}: label file has {len(rows)} rows, spectrogram has {frames} frames")
    labels = np.empty(frames, dtype=np.int64)
    for row in rows:
        t, c = int(row[0]), int(row[1])
        if not 0 <= t < frames:
            raise DataError(f"{name}: frame index {t} out of range")
        labels[t] = c
    return labels


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta_path = path / "meta"
    if not meta_path.is_file():
        raise DataError(f"{path}: no meta file (not a dataset directory)")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{meta_path}: {e}") from None
    if meta.get("format") != "gradnap-dataset":
        raise FormatError(f"{meta_path}: not a gradnap dataset")
    if meta.get("version") != META_VERSION:
        raise FormatError(
            f"{meta_path}: dataset version {meta.get('version')}, this reader supports {META_VERSION}"
        )
    names = [c["name"] for c in meta["classes"]]
    specs = []
    for c in meta["classes"]:
        if c.get("spec"):
            s = c["spec"]
            specs.append(ClassSpec(s["name"], [tuple(b) for b in s["bands"]],
                                   tuple(s["transient"]) if s["transient"] else None, tuple(s["seg_len"])))
    bins = meta["bins"]
    examples = []
    for i in range(meta["n_examples"]):
        name = f"ex{i:04d}"
        x = read_spec(path / f"{name}.spec")
        if x.shape[0] != bins:
            raise FormatError(f"{name}: {x.shape[0]} bins, meta says {bins}")
        lab_path = path / f"{name}.lab"
        if not lab_path.is_file():
            raise DataError(f"{name}: missing label file")
        labels = _read_labels(lab_path, name, x.shape[1])
        if labels.min() < 0 or labels.max() > len(names):
            raise DataError(f"{name}: class index outside 0..{len(names)}")
        examples.append(Example(x, labels))
    return Dataset(examples, names, np.array(meta["mean"]), np.array(meta["std"]), specs)
