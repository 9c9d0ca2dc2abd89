"""Deterministic synthetic multi-subject datasets with controllable
inter-subject shift, plus a frozen random-projection embedding that
stands in for a pretrained signal encoder.

Each class is a band-limited sinusoid template (class-specific frequency,
per-channel amplitude, and DC pattern, all scaled by the separation
knob); each subject applies its own orthogonal channel mixing and mean
offset, optionally shared within subject clusters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SubjectDataset, Trial
from .errors import ParameterError, PatchingError
from .selection import SubjectEmbedding

__all__ = ["SynthConfig", "generate", "stub_embed", "PATCH_LEN"]

PATCH_LEN = 200  # samples per embedding patch

# How strongly subject_shift translates into channel rotation / offset
# (the generator norm and the offset length per unit of subject_shift).
_ROT_SCALE = 1.2
_OFF_SCALE = 1.0


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 6
    trials_per_class: int = 40
    channels: int = 4
    samples: int = 400
    n_classes: int = 2
    class_separation: float = 1.0
    subject_shift: float = 1.0
    cluster_spec: tuple[tuple[int, ...], ...] | None = None
    intra_cluster_shift: float = 0.0
    noise_std: float = 0.5
    sample_rate: float = 200.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_subjects, self.trials_per_class, self.channels, self.samples) < 1:
            raise ParameterError("counts must be positive")
        if self.n_classes < 2:
            raise ParameterError("need at least 2 classes")
        if self.noise_std < 0 or self.class_separation < 0 or self.subject_shift < 0:
            raise ParameterError("scales must be non-negative")
        if self.cluster_spec is not None:
            flat = [s for cluster in self.cluster_spec for s in cluster]
            if len(flat) != len(set(flat)):
                raise ParameterError("cluster_spec assigns a subject twice")
            if any(not 0 <= s < self.n_subjects for s in flat):
                raise ParameterError("cluster_spec names an unknown subject index")

    def subject_ids(self) -> list[str]:
        width = max(2, len(str(self.n_subjects - 1)))
        return [f"s{i:0{width}d}" for i in range(self.n_subjects)]


def _skew(rng: np.random.Generator, c: int) -> np.ndarray:
    """Random skew-symmetric generator with unit Frobenius norm, so the
    rotation magnitude is controlled entirely by its scale factor."""
    a = rng.normal(0.0, 1.0, size=(c, c))
    a = 0.5 * (a - a.T)
    norm = np.linalg.norm(a)
    return a / norm if norm > 0 else a


def _unit(rng: np.random.Generator, c: int) -> np.ndarray:
    v = rng.normal(0.0, 1.0, size=c)
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def _cayley(a: np.ndarray) -> np.ndarray:
    """Orthogonal matrix from a skew-symmetric generator; the rotation
    angle grows with the generator norm and is the identity at zero."""
    eye = np.eye(a.shape[0])
    return np.linalg.solve((eye + a).T, (eye - a).T).T


def _class_templates(cfg: SynthConfig, rng: np.random.Generator):
    """Per-class (frequency, channel amplitude, channel DC) tuples; all
    class differences vanish when class_separation is zero."""
    k = cfg.n_classes
    spread = np.linspace(-0.5, 0.5, k) if k > 1 else np.zeros(1)
    freqs = 14.0 + 8.0 * cfg.class_separation * spread
    amps = 1.0 + cfg.class_separation * rng.uniform(-0.5, 0.5, size=(k, cfg.channels))
    dcs = cfg.class_separation * rng.normal(0.0, 0.5, size=(k, cfg.channels))
    return freqs, amps, dcs


def generate(cfg: SynthConfig) -> list[SubjectDataset]:
    """Class-balanced labeled datasets, one per subject, deterministic
    per seed. Subjects in the same cluster share their mixing transform
    up to ``intra_cluster_shift``."""
    template_rng = np.random.default_rng([cfg.seed, 101])
    freqs, amps, dcs = _class_templates(cfg, template_rng)
    t_axis = np.arange(cfg.samples) / cfg.sample_rate

    cluster_of: dict[int, int] = {}
    if cfg.cluster_spec is not None:
        for ci, members in enumerate(cfg.cluster_spec):
            for s in members:
                cluster_of[s] = ci
    base_skew: dict[int, np.ndarray] = {}
    base_off: dict[int, np.ndarray] = {}
    if cfg.cluster_spec is not None:
        for ci in range(len(cfg.cluster_spec)):
            crng = np.random.default_rng([cfg.seed, 202, ci])
            base_skew[ci] = cfg.subject_shift * _ROT_SCALE * _skew(crng, cfg.channels)
            base_off[ci] = cfg.subject_shift * _OFF_SCALE * _unit(crng, cfg.channels)

    datasets: list[SubjectDataset] = []
    for s, sid in enumerate(cfg.subject_ids()):
        srng = np.random.default_rng([cfg.seed, 303, s])
        if s in cluster_of:
            ci = cluster_of[s]
            scale = cfg.intra_cluster_shift
            skew = base_skew[ci] + scale * _ROT_SCALE * _skew(srng, cfg.channels)
            offset = base_off[ci] + scale * _OFF_SCALE * _unit(srng, cfg.channels)
        else:
            skew = cfg.subject_shift * _ROT_SCALE * _skew(srng, cfg.channels)
            offset = cfg.subject_shift * _OFF_SCALE * _unit(srng, cfg.channels)
        mix = _cayley(skew)

        trials: list[Trial] = []
        for k in range(cfg.n_classes):
            for _ in range(cfg.trials_per_class):
                phase = srng.uniform(0.0, 2.0 * np.pi)
                wave = np.sin(2.0 * np.pi * freqs[k] * t_axis + phase)
                base = amps[k][:, None] * wave[None, :] + dcs[k][:, None]
                base = base + cfg.noise_std * srng.normal(
                    0.0, 1.0, size=(cfg.channels, cfg.samples)
                )
                signal = mix @ base + offset[:, None]
                trials.append(Trial(signal, label=k + 1))
        datasets.append(
            SubjectDataset(subject_id=sid, trials=trials, n_classes=cfg.n_classes)
        )
    return datasets


def stub_embed(
    ds: SubjectDataset, embed_dim: int = 200, seed: int = 0, zero_pad: bool = False
) -> SubjectEmbedding:
    """Fixed seeded random linear projection of non-overlapping
     200-sample patches, mean-pooled per trial.

    The projection depends only on (channels, embed_dim, seed), so the
    same seed gives every subject the same frozen encoder. Trailing
    samples that do not fill a patch are dropped unless ``zero_pad``.
    """
    if len(ds) == 0:
        raise PatchingError(f"subject {ds.subject_id} has no trials")
    c, t = ds.channels, ds.samples
    n_patches = t // PATCH_LEN
    pad_to = t
    if zero_pad and t % PATCH_LEN:
        n_patches += 1
        pad_to = n_patches * PATCH_LEN
    if n_patches == 0:
        raise PatchingError(
            f"trial length {t} is shorter than one {PATCH_LEN}-sample patch; "
            "pass zero_pad=True to pad the signal"
        )
    rng = np.random.default_rng(seed)
    proj = rng.normal(0.0, 1.0 / np.sqrt(c * PATCH_LEN), size=(c * PATCH_LEN, embed_dim))
    x = ds.signals()
    if pad_to != t:
        x = np.concatenate(
            [x, np.zeros((x.shape[0], c, pad_to - t), dtype=np.float64)], axis=2
        )
    x = x[:, :, : n_patches * PATCH_LEN]
    # (M, n_patches, C * PATCH_LEN), channel-major within each patch
    patches = (
        x.reshape(x.shape[0], c, n_patches, PATCH_LEN)
        .transpose(0, 2, 1, 3)
        .reshape(x.shape[0], n_patches, c * PATCH_LEN)
    )
    vectors = (patches @ proj).mean(axis=1)
    return SubjectEmbedding(subject_id=ds.subject_id, vectors=vectors)
