"""
Post-processing of frame probabilities into events, and segment-based
scoring of detected events against a reference.

Scores are micro-averaged over fixed-length segments (one second by
default) and every class: per segment, substitutions are min(FN, FP),
deletions max(0, FN - FP) and insertions max(0, FP - FN).
"""

import csv
import io
import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .errors import DatasetError

Event = namedtuple("Event", "clip_id label onset offset")

_EPS = 1e-9


@dataclass(frozen=True)
class PostProcessConfig:
    threshold: float = 0.5
    median_filter_frames: int = 5
    min_event_frames: int = 3

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.median_filter_frames < 1 or self.median_filter_frames % 2 == 0:
            raise ValueError("median_filter_frames must be a positive odd integer")
        if self.min_event_frames < 1:
            raise ValueError("min_event_frames must be positive")


def binarize(scores, threshold):
    return np.asarray(scores) >= threshold


def median_filter_binary(active, window):
    """
    Median filter of a binary sequence along axis 0.

    Near the edges the window shrinks symmetrically so that it always has
    odd length and stays inside the sequence; the first and last frames are
    therefore left unchanged.
    """
    a = np.asarray(active, dtype=bool)
    n = a.shape[0]
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    if n == 0:
        return a.copy()
    half = window // 2
    idx = np.arange(n)
    radius = np.minimum(half, np.minimum(idx, n - 1 - idx))
    csum = np.concatenate([np.zeros((1,) + a.shape[1:], dtype=int), np.cumsum(a, axis=0)])
    lo = idx - radius
    hi = idx + radius + 1
    ones = csum[hi] - csum[lo]
    size = (2 * radius + 1).reshape((n,) + (1,) * (a.ndim - 1))
    return 2 * ones > size


def active_runs(active):
    """(start, stop) frame pairs of the True runs in a 1-D boolean sequence."""
    a = np.concatenate([[False], np.asarray(active, dtype=bool), [False]])
    edges = np.flatnonzero(a[1:] != a[:-1])
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def post_process(scores, cfg=None, frame_rate_hz=12.5, clip_id="", class_names=None):
    """
    Turn frame probabilities of one clip into detected events.

    Parameters
    ----------
    scores: array, shape (N, C)
        Frame probabilities.
    cfg: PostProcessConfig
    frame_rate_hz: float
        Frames per second, used to convert frame indices to seconds.
    clip_id: str
    class_names: list of str, optional
        Defaults to the class indices as strings.

    Returns
    -------
    events: list of Event
        Sorted by class, then onset.
    """
    cfg = cfg or PostProcessConfig()
    x = np.asarray(scores)
    if x.ndim != 2:
        raise ValueError("scores need shape (N, C)")
    names = list(class_names) if class_names is not None else [str(c) for c in range(x.shape[1])]
    active = median_filter_binary(binarize(x, cfg.threshold), cfg.median_filter_frames)
    events = []
    for c in range(x.shape[1]):
        for start, stop in active_runs(active[:, c]):
            if stop - start < cfg.min_event_frames:
                continue
            events.append(Event(clip_id, names[c], start / frame_rate_hz, stop / frame_rate_hz))
    return events


@dataclass(frozen=True)
class SegmentCounts:
    n_ref: int = 0
    n_sys: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0

    def __add__(self, other):
        return SegmentCounts(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self):
        return (self.n_ref, self.n_sys, self.tp, self.fp, self.fn,
                self.substitutions, self.deletions, self.insertions)

    def _rate(self, count):
        if self.n_ref == 0:
            raise ZeroDivisionError("error rates need at least one active reference segment")
        return count / self.n_ref

    @property
    def substitution_rate(self):
        return self._rate(self.substitutions)

    @property
    def deletion_rate(self):
        return self._rate(self.deletions)

    @property
    def insertion_rate(self):
        return self._rate(self.insertions)

    @property
    def error_rate(self):
        return self._rate(self.substitutions + self.deletions + self.insertions)

    @property
    def precision(self):
        return self.tp / self.n_sys if self.n_sys else 0.0

    @property
    def recall(self):
        return self.tp / self.n_ref if self.n_ref else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def summary(self):
        """Rates as a dict with keys sub, del, ins, er, pre, rec, f1."""
        return {"sub": self.substitution_rate, "del": self.deletion_rate,
                "ins": self.insertion_rate, "er": self.error_rate,
                "pre": self.precision, "rec": self.recall, "f1": self.f1}


def n_segments(duration, segment_seconds=1.0):
    return max(1, math.ceil(duration / segment_seconds - _EPS))


def segment_activity(events, labels, duration, segment_seconds=1.0):
    """Boolean (segments, classes) activity matrix for the events of one clip."""
    index = {lab: k for k, lab in enumerate(labels)}
    act = np.zeros((n_segments(duration, segment_seconds), len(labels)), dtype=bool)
    for ev in events:
        first = math.floor(ev.onset / segment_seconds + _EPS)
        last = math.ceil(ev.offset / segment_seconds - _EPS)
        act[max(first, 0):max(min(last, act.shape[0]), 0), index[ev.label]] = True
    return act


def count_segments(ref_act, sys_act):
    """SegmentCounts from reference and system activity matrices of equal shape."""
    ref = np.asarray(ref_act, dtype=bool)
    sys = np.asarray(sys_act, dtype=bool)
    tp_seg = (ref & sys).sum(axis=1)
    fn_seg = ref.sum(axis=1) - tp_seg
    fp_seg = sys.sum(axis=1) - tp_seg
    s = np.minimum(fn_seg, fp_seg)
    return SegmentCounts(
        n_ref=int(ref.sum()), n_sys=int(sys.sum()), tp=int(tp_seg.sum()),
        fp=int(fp_seg.sum()), fn=int(fn_seg.sum()), substitutions=int(s.sum()),
        deletions=int((fn_seg - s).sum()), insertions=int((fp_seg - s).sum()))


def _group(events):
    out = {}
    for ev in events:
        out.setdefault(ev.clip_id, []).append(ev)
    return out


def score(system, reference, clip_duration, segment_seconds=1.0, clips=None):
    """
    Segment-based micro-averaged counts of `system` against `reference`.

    Parameters
    ----------
    system, reference: iterable of Event
    clip_duration: float or dict
        Duration in seconds of every clip, or per clip id.
    segment_seconds: float
    clips: iterable of str, optional
        Clip ids to score. Defaults to every id in either list. Clips without
        any reference event still count insertions.

    Returns
    -------
    SegmentCounts
        Call `.summary()` for ER, F1 and the rest. ER raises
        ZeroDivisionError if no reference segment is active.
    """
    system, reference = list(system), list(reference)
    sys_by, ref_by = _group(system), _group(reference)
    if clips is None:
        clips = sorted(set(sys_by) | set(ref_by))
    else:
        clips = list(clips)
        unknown = (set(sys_by) | set(ref_by)) - set(clips)
        if unknown:
            raise ValueError(f"events refer to unknown clips: {sorted(unknown)[:5]}")
    labels = sorted({ev.label for ev in system} | {ev.label for ev in reference})
    total = SegmentCounts()
    for cid in clips:
        dur = clip_duration[cid] if isinstance(clip_duration, dict) else clip_duration
        ref = segment_activity(ref_by.get(cid, []), labels, dur, segment_seconds)
        sys = segment_activity(sys_by.get(cid, []), labels, dur, segment_seconds)
        total = total + count_segments(ref, sys)
    return total


def write_events(path_or_file, events):
    """Tab-separated rows: clip_id, onset seconds, offset seconds, class name."""
    rows = "".join(f"{e.clip_id}\t{e.onset:.6f}\t{e.offset:.6f}\t{e.label}\n" for e in events)
    if hasattr(path_or_file, "write"):
        path_or_file.write(rows)
    else:
        with open(path_or_file, "w", encoding="utf-8", newline="") as f:
            f.write(rows)


def read_events(path_or_file):
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file, encoding="utf-8") as f:
            text = f.read()
    events = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text), delimiter="\t"), 1):
        if not row:
            continue
        if len(row) != 4:
            raise DatasetError(f"line {lineno}: expected 4 tab-separated fields, got {len(row)}")
        try:
            onset, offset = float(row[1]), float(row[2])
        except ValueError:
            raise DatasetError(f"line {lineno}: onset/offset are not numbers") from None
        if not onset < offset:
            raise DatasetError(f"line {lineno}: onset must precede offset")
        events.append(Event(row[0], row[3], onset, offset))
    return events


# --- report -----------------------------------------------------------------

REPORT_COLUMNS = ("sub", "del", "ins", "er", "pre", "rec", "f1")


def relative_change(before, after):
    """Signed relative change in percent."""
    return 100.0 * (after - before) / before if before else float("nan")


def format_change(before, after):
    """e.g. 0.79 -> 0.76 gives '3.8%↓'."""
    change = relative_change(before, after)
    if math.isnan(change):
        return "n/a"
    arrow = "↑" if change > 0 else "↓" if change < 0 else "="
    return f"{abs(change):.1f}%{arrow}"


def apportion(parts, total, decimals=2):
    """
    Round `parts` to `decimals` so that they add up to `total` rounded the
    same way (largest remainder), which keeps Sub + Del + Ins = ER on print.
    """
    scale = 10 ** decimals
    target = round(total * scale)
    raw = [p * scale for p in parts]
    floors = [math.floor(r) for r in raw]
    short = target - sum(floors)
    order = sorted(range(len(raw)), key=lambda k: (floors[k] - raw[k], k))
    if short >= 0:
        for k in order[:short]:
            floors[k] += 1
    else:
        for k in reversed(order[short:]):
            floors[k] -= 1
    return [f / scale for f in floors]


def make_row(structure, pooling, metrics, per_seed_er=None):
    """
    Report row from one SegmentCounts or several (averaged over seeds).
    """
    if isinstance(metrics, SegmentCounts):
        metrics = [metrics]
    summaries = [m.summary() for m in metrics]
    row = {"structure": structure, "pooling": pooling}
    for key in REPORT_COLUMNS:
        row[key] = float(np.mean([s[key] for s in summaries]))
    row["er_per_seed"] = list(per_seed_er) if per_seed_er is not None else [s["er"] for s in summaries]
    return row


def _pair_changes(rows):
    singles = {r["pooling"]: r for r in rows if r["structure"] == "single"}
    changes = {}
    for r in rows:
        base = singles.get(r["pooling"])
        if r["structure"] != "single" and base is not None:
            changes[id(r)] = (relative_change(base["er"], r["er"]), relative_change(base["f1"], r["f1"]),
                              format_change(base["er"], r["er"]), format_change(base["f1"], r["f1"]))
    return changes


def report_tsv(rows):
    """Machine-readable report, full precision, one line per row."""
    header = ["structure", "pooling", *REPORT_COLUMNS, "er_change_pct", "f1_change_pct",
              "n_seeds", "er_per_seed"]
    changes = _pair_changes(rows)
    lines = ["\t".join(header)]
    for r in rows:
        ch = changes.get(id(r))
        fields = [r["structure"], r["pooling"], *(repr(r[k]) for k in REPORT_COLUMNS),
                  repr(ch[0]) if ch else "", repr(ch[1]) if ch else "",
                  str(len(r.get("er_per_seed", []))),
                  ",".join(f"{e:.4f}" for e in r.get("er_per_seed", []))]
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def format_report(rows, title=None):
    """
    Aligned text table: Sub./Del./Ins./ER to two decimals, Pre./Rec./F1 in
    percent to two decimals, and the change against the paired single row.
    """
    header = ["Structure", "Pooling", "Sub.", "Del.", "Ins.", "ER", "Pre.", "Rec.", "F1",
              "ER chg", "F1 chg", "ER per seed"]
    changes = _pair_changes(rows)
    table = [header]
    for r in rows:
        sub, dele, ins = apportion([r["sub"], r["del"], r["ins"]], r["er"])
        ch = changes.get(id(r))
        seeds = r.get("er_per_seed", [])
        table.append([
            r["structure"], r["pooling"], f"{sub:.2f}", f"{dele:.2f}", f"{ins:.2f}",
            f"{round(r['er'] * 100) / 100:.2f}", f"{100 * r['pre']:.2f}", f"{100 * r['rec']:.2f}",
            f"{100 * r['f1']:.2f}", ch[2] if ch else "", ch[3] if ch else "",
            " ".join(f"{e:.2f}" for e in seeds) if len(seeds) > 1 else ""])
    widths = [max(len(row[k]) for row in table) for k in range(len(header))]
    lines = [title] if title else []
    for k, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
