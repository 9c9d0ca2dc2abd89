"""Trial and subject-dataset containers shared by the pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeError

__all__ = ["Trial", "SubjectDataset"]


@dataclass(frozen=True)
class Trial:
    """One multichannel signal segment with an optional class label.

    ``signal`` is a (channels x samples) float64 matrix; ``label`` is a
    1-based class index or None for unlabeled trials.
    """

    signal: np.ndarray
    label: int | None = None

    def __post_init__(self):
        sig = np.asarray(self.signal, dtype=np.float64)
        if sig.ndim != 2 or sig.shape[0] < 1 or sig.shape[1] < 2:
            raise ShapeError(f"trial signal must be C x T with T >= 2, got {sig.shape}")
        if not np.all(np.isfinite(sig)):
            raise ShapeError("trial signal contains non-finite values")
        object.__setattr__(self, "signal", sig)


@dataclass
class SubjectDataset:
    """A subject's trial collection. All trials share channel count and
    trial length; labels, when present, lie in 1..n_classes."""

    subject_id: str
    trials: list[Trial]
    n_classes: int
    ea_applied: bool = False

    def __post_init__(self):
        if not self.trials:
            return
        c, t = self.trials[0].signal.shape
        for i, tr in enumerate(self.trials):
            if tr.signal.shape != (c, t):
                raise ShapeError(
                    f"trial {i} of subject {self.subject_id} has shape "
                    f"{tr.signal.shape}, expected {(c, t)}"
                )
            if tr.label is not None and not (1 <= tr.label <= self.n_classes):
                raise ShapeError(
                    f"trial {i} of subject {self.subject_id} has label "
                    f"{tr.label} outside 1..{self.n_classes}"
                )

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def channels(self) -> int:
        return self.trials[0].signal.shape[0]

    @property
    def samples(self) -> int:
        return self.trials[0].signal.shape[1]

    @property
    def labeled(self) -> bool:
        return bool(self.trials) and all(t.label is not None for t in self.trials)

    def signals(self) -> np.ndarray:
        """Stacked (n_trials x C x T) signal array."""
        return np.stack([t.signal for t in self.trials])

    def labels(self) -> np.ndarray:
        """1-based labels; raises if any trial is unlabeled."""
        if not self.labeled:
            raise ShapeError(f"subject {self.subject_id} has unlabeled trials")
        return np.array([t.label for t in self.trials], dtype=np.int64)

    def without_labels(self) -> "SubjectDataset":
        return SubjectDataset(
            subject_id=self.subject_id,
            trials=[Trial(t.signal, None) for t in self.trials],
            n_classes=self.n_classes,
            ea_applied=self.ea_applied,
        )
