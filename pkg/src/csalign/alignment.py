"""Euclidean alignment: whiten each subject's trials by the inverse
square root of the subject's mean trial covariance, so every subject's
second-order statistics land at the identity."""

from __future__ import annotations

import numpy as np

from .data import SubjectDataset, Trial
from .errors import SampleSizeError, StateError
from .linalg import inv_sqrt_psd

__all__ = ["euclidean_align", "mean_trial_covariance"]


def mean_trial_covariance(ds: SubjectDataset) -> np.ndarray:
    """Arithmetic mean of X_i X_i^T over the subject's trials (no mean
    centering)."""
    if len(ds) < 1:
        raise SampleSizeError(f"subject {ds.subject_id} has no trials")
    x = ds.signals()
    return np.einsum("ict,idt->cd", x, x) / len(ds)


def euclidean_align(ds: SubjectDataset, floor: float = 1e-10) -> SubjectDataset:
    """Replace each trial X by R^(-1/2) X where R is the subject's mean
    trial covariance. Labels and trial order are preserved; the returned
    dataset is flagged so the transform cannot be applied twice."""
    if ds.ea_applied:
        raise StateError(f"subject {ds.subject_id} is already aligned")
    r_bar = mean_trial_covariance(ds)
    w = inv_sqrt_psd(r_bar, floor=floor)
    aligned = [Trial(w @ t.signal, t.label) for t in ds.trials]
    return SubjectDataset(
        subject_id=ds.subject_id,
        trials=aligned,
        n_classes=ds.n_classes,
        ea_applied=True,
    )
