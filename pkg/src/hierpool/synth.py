"""
Synthetic weakly labelled clips with a hidden strong reference.

Each clip is Gaussian background noise in `feature_dim` dimensions. Every
event adds its class mean vector to the frames it covers, and a clip's weak
label for a class is 1 exactly when at least one event of that class occurs.

On disk a dataset directory holds

- ``train.milp``, ``val.milp``, ``test.milp``: b"MILP", a version byte, then
  per clip u32 N, u32 D and N*D little-endian float32 values (row-major)
- ``metadata.jsonl``: one ``{"id", "weak_labels", "split"}`` object per clip,
  in the same order as the feature files
- ``strong_ref.tsv``: clip id, onset s, offset s, class name per event
- ``manifest.json``: class names, frame rate, generator config and the
  SHA-256 of every other file
"""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .evaluation import Event, read_events, write_events

SPLITS = ("train", "val", "test")
MAGIC = b"MILP"
VERSION = 1
DEFAULT_CLASSES = ("train_horn", "car_alarm", "ambulance_siren", "screaming")


@dataclass(frozen=True)
class SynthConfig:
    n_clips: int = 800
    split_fractions: tuple = (0.75, 0.125, 0.125)
    frames_per_clip: int = 125
    frame_rate_hz: float = 12.5
    feature_dim: int = 16
    n_classes: int = 4
    event_rate: float = 3.0
    min_duration: int = 10
    max_duration: int = 60
    separation: float = 2.0
    noise: float = 1.0
    distractor_rate: float = 0.0
    distractor_similarity: float = 0.7
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "split_fractions", tuple(float(f) for f in self.split_fractions))
        if self.n_clips < 0 or self.frames_per_clip < 1 or self.feature_dim < 1 or self.n_classes < 1:
            raise ValueError("clip, frame, feature and class counts must be positive")
        if len(self.split_fractions) != 3 or any(f < 0 for f in self.split_fractions) \
                or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split_fractions must be three non-negative numbers summing to 1")
        if not 1 <= self.min_duration <= self.max_duration:
            raise ValueError("need 1 <= min_duration <= max_duration")
        if self.max_duration > self.frames_per_clip:
            raise ValueError(f"event duration {self.max_duration} exceeds {self.frames_per_clip} frames")
        if not 0.0 <= self.distractor_similarity <= 1.0:
            raise ValueError("distractor_similarity must lie in [0, 1]")
        if self.noise < 0 or self.event_rate < 0 or self.distractor_rate < 0 or self.frame_rate_hz <= 0:
            raise ValueError("noise, event_rate and frame_rate_hz must be non-negative / positive")

    def split_sizes(self):
        n_train = round(self.n_clips * self.split_fractions[0])
        n_val = round(self.n_clips * self.split_fractions[1])
        return n_train, n_val, self.n_clips - n_train - n_val

    @property
    def class_names(self):
        return class_names(self.n_classes)


def class_names(n_classes):
    names = list(DEFAULT_CLASSES[:n_classes])
    names += [f"class_{k}" for k in range(len(names), n_classes)]
    return names


@dataclass(eq=False)
class ClipRecord:
    """One clip. `events` holds (class index, onset frame, offset frame), offset exclusive."""

    id: str
    split: str
    features: np.ndarray
    weak_labels: np.ndarray
    events: list = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, ClipRecord):
            return NotImplemented
        return (self.id == other.id and self.split == other.split
                and self.features.shape == other.features.shape
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.weak_labels, other.weak_labels)
                and sorted(self.events) == sorted(other.events))


def weak_labels_from_events(events, n_classes):
    labels = np.zeros(n_classes, dtype=np.uint8)
    for c, _, _ in events:
        labels[c] = 1
    return labels


def merge_events(events):
    """Merge overlapping or touching intervals of the same class."""
    merged = []
    for c, on, off in sorted(events):
        if merged and merged[-1][0] == c and on <= merged[-1][2]:
            merged[-1] = (c, merged[-1][1], max(merged[-1][2], off))
        else:
            merged.append((c, on, off))
    return merged


def make_clip(clip_id, features, events, n_classes, split="train"):
    """Clip record with weak labels derived from `events` by the bag rule."""
    events = merge_events((int(c), int(on), int(off)) for c, on, off in events)
    n = features.shape[0]
    for c, on, off in events:
        if not (0 <= c < n_classes and 0 <= on < off <= n):
            raise ValueError(f"event {(c, on, off)} does not fit a {n}-frame clip with {n_classes} classes")
    return ClipRecord(clip_id, split, np.asarray(features, dtype=np.float32),
                      weak_labels_from_events(events, n_classes), events)


@dataclass(eq=False)
class Dataset:
    clips: list
    class_names: list
    frame_rate_hz: float = 12.5
    config: dict = field(default_factory=dict)

    def split(self, name):
        return [c for c in self.clips if c.split == name]

    def arrays(self, name):
        """Stacked (features, weak labels) of one split: (B, N, D) float32 and (B, C) float64."""
        clips = self.split(name)
        if not clips:
            return None, None
        return (np.stack([c.features for c in clips]),
                np.stack([c.weak_labels for c in clips]).astype(float))

    def reference_events(self, name=None):
        out = []
        for clip in self.clips:
            if name is not None and clip.split != name:
                continue
            for c, on, off in clip.events:
                out.append(Event(clip.id, self.class_names[c], on / self.frame_rate_hz,
                                 off / self.frame_rate_hz))
        return out

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (list(self.class_names) == list(other.class_names)
                and self.frame_rate_hz == other.frame_rate_hz
                and len(self.clips) == len(other.clips)
                and all(a == b for a, b in zip(self.clips, other.clips)))


def generate(config=None):
    """
    Generate train/val/test clips. Deterministic for a given config.

    Returns
    -------
    Dataset
    """
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    means = rng.normal(size=(cfg.n_classes, cfg.feature_dim))
    means *= cfg.separation / np.linalg.norm(means, axis=1, keepdims=True)
    # unlabelled sounds that partly resemble one class each
    other = rng.normal(size=(cfg.n_classes, cfg.feature_dim))
    other *= cfg.separation / np.linalg.norm(other, axis=1, keepdims=True)
    sim = cfg.distractor_similarity
    distractors = sim * means + np.sqrt(1.0 - sim ** 2) * other
    sizes = cfg.split_sizes()
    splits = [s for s, k in zip(SPLITS, sizes) for _ in range(k)]
    n = cfg.frames_per_clip
    clips = []
    for k, split in enumerate(splits):
        feats = cfg.noise * rng.standard_normal((n, cfg.feature_dim))
        events = []
        for _ in range(rng.poisson(cfg.event_rate)):
            c = int(rng.integers(cfg.n_classes))
            dur = int(rng.integers(cfg.min_duration, cfg.max_duration + 1))
            on = int(rng.integers(0, n - dur + 1))
            events.append((c, on, on + dur))
        events = merge_events(events)
        for c, on, off in events:
            feats[on:off] += means[c]
        for _ in range(rng.poisson(cfg.distractor_rate)):
            c = int(rng.integers(cfg.n_classes))
            dur = int(rng.integers(cfg.min_duration, cfg.max_duration + 1))
            on = int(rng.integers(0, n - dur + 1))
            feats[on:on + dur] += distractors[c]
        clips.append(make_clip(f"clip_{k:05d}", feats, events, cfg.n_classes, split))
    return Dataset(clips, cfg.class_names, cfg.frame_rate_hz, asdict(cfg))


# --- files ------------------------------------------------------------------

def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_features(path, clips):
    with open(path, "wb") as f:
        f.write(MAGIC + bytes([VERSION]))
        for clip in clips:
            n, d = clip.features.shape
            f.write(struct.pack("<II", n, d))
            f.write(np.ascontiguousarray(clip.features, dtype="<f4").tobytes())


def read_features(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DatasetError(f"{path}: bad magic")
    if len(data) < 5 or data[4] != VERSION:
        raise DatasetError(f"{path}: unsupported version")
    out, pos = [], 5
    while pos < len(data):
        if pos + 8 > len(data):
            raise DatasetError(f"{path}: truncated clip header at byte {pos}")
        n, d = struct.unpack_from("<II", data, pos)
        pos += 8
        size = 4 * n * d
        if pos + size > len(data):
            raise DatasetError(f"{path}: truncated clip data at byte {pos}")
        out.append(np.frombuffer(data, dtype="<f4", count=n * d, offset=pos).reshape(n, d).astype(np.float32))
        pos += size
    return out


def write_dataset(dataset, path):
    """Write `dataset` into directory `path` (created if needed)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        write_features(root / f"{split}.milp", dataset.split(split))
    with open(root / "metadata.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for split in SPLITS:
            for clip in dataset.split(split):
                names = [dataset.class_names[c] for c in np.flatnonzero(clip.weak_labels)]
                f.write(json.dumps({"id": clip.id, "weak_labels": names, "split": split}) + "\n")
    ordered = [e for split in SPLITS for e in dataset.reference_events(split)]
    write_events(root / "strong_ref.tsv", ordered)
    files = ["metadata.jsonl", "strong_ref.tsv"] + [f"{s}.milp" for s in SPLITS]
    manifest = {
        "format": "milp-dataset",
        "version": VERSION,
        "class_names": list(dataset.class_names),
        "frame_rate_hz": dataset.frame_rate_hz,
        "config": dataset.config,
        "sha256": {name: _sha256(root / name) for name in files},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    return root


def read_dataset(path):
    """
    Read a dataset directory written by `write_dataset`.

    Raises
    ------
    DatasetError: On missing files, checksum mismatch, truncation or
        inconsistent metadata.
    """
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"{root}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{root}/manifest.json: {exc}") from None
    for name, digest in manifest.get("sha256", {}).items():
        if not (root / name).exists():
            raise DatasetError(f"{root}: missing {name}")
        if _sha256(root / name) != digest:
            raise DatasetError(f"{root}/{name}: checksum mismatch")
    names = manifest["class_names"]
    rate = float(manifest["frame_rate_hz"])
    index = {n: k for k, n in enumerate(names)}
    meta = []
    with open(root / "metadata.jsonl", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if line.strip():
                try:
                    meta.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"metadata.jsonl line {lineno}: {exc}") from None
    events = {}
    for ev in read_events(root / "strong_ref.tsv"):
        if ev.label not in index:
            raise DatasetError(f"strong_ref.tsv: unknown class {ev.label!r}")
        events.setdefault(ev.clip_id, []).append(
            (index[ev.label], int(round(ev.onset * rate)), int(round(ev.offset * rate))))
    clips = []
    for split in SPLITS:
        feats = read_features(root / f"{split}.milp")
        rows = [m for m in meta if m["split"] == split]
        if len(rows) != len(feats):
            raise DatasetError(f"{split}: {len(rows)} metadata rows but {len(feats)} feature records")
        for row, x in zip(rows, feats):
            clip = make_clip(row["id"], x, events.pop(row["id"], []), len(names), split)
            stated = sorted(index[n] for n in row["weak_labels"])
            if stated != np.flatnonzero(clip.weak_labels).tolist():
                raise DatasetError(f"{row['id']}: weak labels disagree with the strong reference")
            clips.append(clip)
    if events:
        raise DatasetError(f"strong_ref.tsv: events for unknown clips {sorted(events)[:5]}")
    seen = [c.id for c in clips]
    if len(set(seen)) != len(seen):
        raise DatasetError("clip ids repeat across splits")
    return Dataset(clips, names, rate, manifest.get("config", {}))
