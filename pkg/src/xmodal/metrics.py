"""Trajectory prediction metrics: ADE / FDE over fixed horizons, best-sample
selection, and the success-rate curve over endpoint-error thresholds."""

from __future__ import annotations

import csv
import json

import numpy as np

from .autodiff import ShapeError

__all__ = [
    "HORIZONS_S",
    "horizon_step",
    "ade",
    "fde",
    "select_best",
    "success_rate",
    "sr_curve",
    "default_thresholds",
    "save_report",
    "load_report",
    "save_sr_csv",
]

HORIZONS_S = (1.0, 2.0, 3.0, 4.0)


def horizon_step(horizon_s, dt=0.4, n_steps=10):
    """Number of future steps covered by a horizon; fractional step counts
    round half-up (1 s at 0.4 s steps -> 3 steps)."""
    step = int(np.floor(horizon_s / dt + 0.5))
    if not 1 <= step <= n_steps:
        raise ShapeError(f"horizon {horizon_s}s maps to step {step}, outside 1..{n_steps}")
    return step


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise ShapeError(f"expected matching (steps, 2) trajectories, got {pred.shape} vs {gt.shape}")
    return pred, gt


def ade(pred, gt, step=None):
    """Average euclidean displacement over the first ``step`` future points."""
    pred, gt = _check_pair(pred, gt)
    step = pred.shape[0] if step is None else step
    if not 1 <= step <= pred.shape[0]:
        raise ShapeError(f"step {step} outside trajectory of length {pred.shape[0]}")
    return float(np.linalg.norm(pred[:step] - gt[:step], axis=1).mean())


def fde(pred, gt, step=None):
    """Euclidean displacement at the horizon's final point."""
    pred, gt = _check_pair(pred, gt)
    step = pred.shape[0] if step is None else step
    if not 1 <= step <= pred.shape[0]:
        raise ShapeError(f"step {step} outside trajectory of length {pred.shape[0]}")
    return float(np.linalg.norm(pred[step - 1] - gt[step - 1]))


def select_best(trajectories, gt):
    """Index of the sample with the lowest full-horizon ADE (ties to the
    lowest index)."""
    t = np.asarray(trajectories, dtype=np.float64)
    if t.ndim != 3 or t.shape[0] < 1:
        raise ShapeError(f"expected (N, steps, 2) samples, got {t.shape}")
    gt = np.asarray(gt, dtype=np.float64)
    ades = np.linalg.norm(t - gt[None], axis=2).mean(axis=1)
    return int(np.argmin(ades))


def success_rate(endpoint_errors, eps):
    """Fraction of targets whose endpoint error is within ``eps``."""
    errors = np.asarray(endpoint_errors, dtype=np.float64)
    if errors.size == 0:
        raise ShapeError("success rate of an empty error list is undefined")
    return float(np.mean(errors <= eps))


def sr_curve(endpoint_errors, thresholds):
    return np.array([success_rate(endpoint_errors, e) for e in thresholds])


def default_thresholds(modality):
    """Endpoint-error grid: meters for top-down, pixels for frontal."""
    if modality == "topdown":
        return np.round(np.arange(0, 51) * 0.1, 10)
    if modality == "frontal":
        return np.arange(0, 51) * 2.0
    raise ShapeError(f"unknown modality {modality!r}")


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def save_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def save_sr_csv(path, thresholds, rates) -> None:
    """Two-column CSV of the success-rate curve; values are written with
    shortest-round-trip floats, so rewriting a loaded curve is byte-stable."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    rates = np.asarray(rates, dtype=np.float64)
    if thresholds.shape != rates.shape:
        raise ShapeError(f"threshold/rate length mismatch: {thresholds.shape} vs {rates.shape}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "success_rate"])
        for t, r in zip(thresholds, rates):
            writer.writerow([repr(float(t)), repr(float(r))])
