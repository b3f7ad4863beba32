"""
Single-versus-hierarchical comparison: train one scorer per grid cell,
detect events on the test split and score them.
"""

from dataclasses import replace

import numpy as np

from .errors import DatasetError
from .evaluation import PostProcessConfig, make_row, post_process, score
from .hierarchical import PoolingSpec
from .model import TrainConfig, predict_frames, train


def detect(dataset, frame_scores, split="test", pp=None):
    """Events detected from (B, N, C) frame scores of `split`."""
    clips = dataset.split(split)
    events = []
    for clip, x in zip(clips, frame_scores):
        events += post_process(x, pp, dataset.frame_rate_hz, clip.id, dataset.class_names)
    return events


def oracle_scores(dataset, split="test"):
    """Frame scores that are 1 exactly inside reference events."""
    clips = dataset.split(split)
    out = np.zeros((len(clips), clips[0].features.shape[0], len(dataset.class_names))) if clips else None
    for k, clip in enumerate(clips):
        for c, on, off in clip.events:
            out[k, on:off, c] = 1.0
    return out


def score_split(dataset, frame_scores, split="test", pp=None):
    """Returns (SegmentCounts, detected events)."""
    clips = dataset.split(split)
    if not clips:
        raise DatasetError(f"{split} split is empty")
    events = detect(dataset, frame_scores, split, pp)
    duration = clips[0].features.shape[0] / dataset.frame_rate_hz
    counts = score(events, dataset.reference_events(split), duration, clips=[c.id for c in clips])
    return counts, events


def evaluate_params(dataset, params, split="test", pp=None):
    feats, _ = dataset.arrays(split)
    if feats is None:
        raise DatasetError(f"{split} split is empty")
    return score_split(dataset, predict_frames(feats, params), split, pp)


def run_cell(dataset, config, pp=None):
    """Train one model and score it on the test split."""
    params, state = train(dataset, config)
    counts, events = evaluate_params(dataset, params, "test", pp)
    return params, state, counts, events


def compare_structures(make_dataset, seeds, fn="linear", base=None, pp=None, log=None):
    """
    Train flat and hierarchical pooling for each seed.

    Parameters
    ----------
    make_dataset: callable
        seed -> Dataset.
    seeds: list of int
    fn: pooling function name
    base: TrainConfig
        Template; seed and pooling are overwritten per run.

    Returns
    -------
    results: dict
        {"single": [SegmentCounts per seed], "hierarchical": [...]}
    """
    base = base or TrainConfig()
    results = {"single": [], "hierarchical": []}
    for seed in seeds:
        dataset = make_dataset(seed)
        for structure, plan in (("single", ()), ("hierarchical", None)):
            cfg = replace(base, seed=seed, pooling=PoolingSpec(fn, plan))
            _, state, counts, _ = run_cell(dataset, cfg, pp)
            results[structure].append(counts)
            if log is not None:
                log(f"seed {seed} {structure:12s} ER {counts.error_rate:.3f} F1 {counts.f1:.3f} "
                    f"epochs {state.epoch}")
    return results


def rows_from_results(results, fn):
    return [make_row(s, fn, results[s]) for s in ("single", "hierarchical") if results.get(s)]


__all__ = ["PostProcessConfig", "compare_structures", "detect", "evaluate_params", "oracle_scores",
           "rows_from_results", "run_cell", "score_split"]
