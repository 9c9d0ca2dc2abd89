import numpy as np
import pytest

from csalign.alignment import euclidean_align, mean_trial_covariance
from csalign.data import SubjectDataset, Trial
from csalign.errors import StateError


def _random_dataset(seed, n_trials=50, c=4, t=64, subject_id="s0"):
    rng = np.random.default_rng(seed)
    mix = rng.normal(size=(c, c)) + 2.0 * np.eye(c)
    trials = [
        Trial(mix @ rng.normal(size=(c, t)), label=int(rng.integers(1, 3)))
        for _ in range(n_trials)
    ]
    return SubjectDataset(subject_id=subject_id, trials=trials, n_classes=2)


def test_orthonormal_single_trial_unchanged():
    # X X^T = I  ->  R = I  ->  trial unchanged
    c, t = 3, 12
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.normal(size=(t, t)))
    x = q[:, :c].T  # rows orthonormal
    ds = SubjectDataset("s0", [Trial(x)], n_classes=2)
    out = euclidean_align(ds)
    np.testing.assert_allclose(out.trials[0].signal, x, atol=1e-10)


def test_single_trial_whitening():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 64))
    ds = SubjectDataset("s0", [Trial(x)], n_classes=2)
    out = euclidean_align(ds)
    xt = out.trials[0].signal
    np.testing.assert_allclose(xt @ xt.T, np.eye(4), atol=1e-8)


def test_mean_covariance_is_identity_after_alignment():
    ds = _random_dataset(2)
    out = euclidean_align(ds)
    r = mean_trial_covariance(out)
    assert np.linalg.norm(r - np.eye(4)) < 1e-8


def test_effective_idempotence():
    ds = _random_dataset(3)
    once = euclidean_align(ds)
    again = euclidean_align(
        SubjectDataset("s0", once.trials, n_classes=2, ea_applied=False)
    )
    for a, b in zip(once.trials, again.trials):
        assert np.max(np.abs(a.signal - b.signal)) < 1e-6


def test_scale_equivariance():
    ds = _random_dataset(4)
    scaled = SubjectDataset(
        "s0", [Trial(7.5 * t.signal, t.label) for t in ds.trials], n_classes=2
    )
    out_a = euclidean_align(ds)
    out_b = euclidean_align(scaled)
    for a, b in zip(out_a.trials, out_b.trials):
        assert np.max(np.abs(a.signal - b.signal)) < 1e-10


def test_labels_and_order_preserved():
    ds = _random_dataset(5)
    out = euclidean_align(ds)
    assert [t.label for t in out.trials] == [t.label for t in ds.trials]
    assert out.subject_id == ds.subject_id
    assert out.ea_applied


def test_double_application_rejected():
    ds = _random_dataset(6)
    out = euclidean_align(ds)
    with pytest.raises(StateError):
        euclidean_align(out)


def test_rank_deficient_warns_but_aligns():
    rng = np.random.default_rng(7)
    base = rng.normal(size=(1, 32))
    x = np.vstack([base, base])  # duplicate channel -> singular covariance
    ds = SubjectDataset("s0", [Trial(x)], n_classes=2)
    with pytest.warns(RuntimeWarning):
        out = euclidean_align(ds)
    assert np.all(np.isfinite(out.trials[0].signal))


def test_input_dataset_untouched():
    ds = _random_dataset(8)
    before = ds.signals().copy()
    euclidean_align(ds)
    np.testing.assert_array_equal(ds.signals(), before)
    assert not ds.ea_applied
