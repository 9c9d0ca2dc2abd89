"""Empirical Cauchy-Schwarz divergence, conditional CS divergence, and
the closed-form CS divergence between Gaussians used as a test oracle.

The empirical estimators are built from Gaussian Gram matrices:

    D_cs = log(mean K_ss) + log(mean K_tt) - 2 log(mean K_st)

and the conditional variant combines four log terms of row-normalized
kernel ratios. Both are differentiable with respect to their sample
inputs through the autodiff graph; log arguments and row-sum
denominators are floored at 1e-12 so widely separated sets cannot
produce -inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NumericError, ParameterError, SampleSizeError, ShapeError
from .kernels import KernelConfig, gram_node

__all__ = [
    "DivergenceValue",
    "cs_divergence",
    "ccs_divergence",
    "cs_gaussian_closed_form",
    "cs_divergence_node",
    "ccs_divergence_node",
]

LOG_FLOOR = 1e-12
ZERO_TOL = 1e-9


@dataclass(frozen=True)
class DivergenceValue:
    """A divergence estimate with its context.

    ``value`` is clamped at zero from below; ``raw_value`` keeps the
    unclamped estimate (the conditional estimator can be slightly
    negative). ``clamped`` reports whether any internal floor was hit.
    """

    value: float
    raw_value: float
    n_source: int
    n_target: int
    sigma_feat: float
    sigma_out: float | None = None
    clamped: bool = False


def _check_samples(x: np.ndarray, name: str) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] < 2:
        raise SampleSizeError(f"{name} needs at least 2 samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ParameterError(f"{name} contains non-finite values")
    return x


def _canonical_pair(a: np.ndarray, b: np.ndarray) -> bool:
    """True when (a, b) should be swapped so that both argument orders
    run the identical computation (bit-exact symmetry)."""
    ka = (a.shape, a.tobytes())
    kb = (b.shape, b.tobytes())
    return kb < ka


def cs_divergence_node(
    s: ad.Node, t: ad.Node, cfg: KernelConfig, base_sigma: float
) -> ad.Node:
    """Differentiable empirical CS divergence for a fixed base bandwidth."""
    m_ss = ad.nmean(gram_node(s, s, cfg, base_sigma))
    m_tt = ad.nmean(gram_node(t, t, cfg, base_sigma))
    m_st = ad.nmean(gram_node(s, t, cfg, base_sigma))
    return (
        ad.clamped_log(m_ss, LOG_FLOOR)
        + ad.clamped_log(m_tt, LOG_FLOOR)
        - 2.0 * ad.clamped_log(m_st, LOG_FLOOR)
    )


def cs_divergence(s, t, cfg: KernelConfig = KernelConfig()) -> DivergenceValue:
    """Empirical CS divergence between two sample sets (rows = samples)."""
    s = _check_samples(s, "source")
    t = _check_samples(t, "target")
    if s.shape[1] != t.shape[1]:
        raise ShapeError(f"feature dimensions differ: {s.shape[1]} vs {t.shape[1]}")
    a, b = (t, s) if _canonical_pair(s, t) else (s, t)
    sigma = cfg.resolve_sigma(a, b)
    an, bn = ad.constant(a), ad.constant(b)
    m_aa = ad.nmean(gram_node(an, an, cfg, sigma))
    m_bb = ad.nmean(gram_node(bn, bn, cfg, sigma))
    m_ab = ad.nmean(gram_node(an, bn, cfg, sigma))
    means = (float(m_aa.value), float(m_bb.value), float(m_ab.value))
    raw = float(
        np.log(max(means[0], LOG_FLOOR))
        + np.log(max(means[1], LOG_FLOOR))
        - 2.0 * np.log(max(means[2], LOG_FLOOR))
    )
    clamped = any(m <= LOG_FLOOR for m in means) or raw < -ZERO_TOL
    return DivergenceValue(
        value=max(raw, 0.0),
        raw_value=raw,
        n_source=s.shape[0],
        n_target=t.shape[0],
        sigma_feat=sigma,
        clamped=clamped,
    )


def _conditional_term(
    den_a: ad.Node, den_b: ad.Node, k_pair: ad.Node, l_pair: ad.Node
) -> ad.Node:
    """One log term of the conditional estimator.

    All four Grams share the same number of rows (the domain indexing the
    outer sum); the denominator is the product of the row sums of
    ``den_a`` and ``den_b``, each floored at 1e-12.
    """
    num = ad.nsum(ad.mul(k_pair, l_pair), axis=1)
    ra = ad.clamp_min(ad.nsum(den_a, axis=1), LOG_FLOOR)
    rb = ad.clamp_min(ad.nsum(den_b, axis=1), LOG_FLOOR)
    ratio = ad.div(num, ad.mul(ra, rb))
    return ad.clamped_log(ad.nsum(ratio), LOG_FLOOR)


def ccs_divergence_node(
    zs: ad.Node,
    ys: ad.Node,
    zt: ad.Node,
    yt: ad.Node,
    feat_cfg: KernelConfig,
    out_cfg: KernelConfig,
    sigma_feat: float,
    sigma_out: float,
) -> ad.Node:
    """Differentiable conditional CS divergence for fixed bandwidths.

    Index convention: in every term j runs over the rows of the domain
    named first in the Gram superscript and i over the summed-out domain,
    so e.g. the source-target term sums kernel mass K_st[j, i] over
    target rows i for each source row j, normalized by that source row's
    within-source kernel mass times its cross mass.
    """
    k_s = gram_node(zs, zs, feat_cfg, sigma_feat)
    l_s = gram_node(ys, ys, out_cfg, sigma_out)
    k_t = gram_node(zt, zt, feat_cfg, sigma_feat)
    l_t = gram_node(yt, yt, out_cfg, sigma_out)
    k_st = gram_node(zs, zt, feat_cfg, sigma_feat)
    l_st = gram_node(ys, yt, out_cfg, sigma_out)
    k_ts = gram_node(zt, zs, feat_cfg, sigma_feat)
    l_ts = gram_node(yt, ys, out_cfg, sigma_out)

    # Within-domain terms: the denominator is the squared row sum of the
    # domain's own feature Gram.
    t1 = _conditional_term(k_s, k_s, k_s, l_s)
    t2 = _conditional_term(k_t, k_t, k_t, l_t)
    # Cross terms keep the printed asymmetry: rows over the source use
    # (within-source, source-target) row sums, rows over the target use
    # (target-source, within-target) row sums.
    t3 = _conditional_term(k_s, k_st, k_st, l_st)
    t4 = _conditional_term(k_ts, k_t, k_ts, l_ts)
    return t1 + t2 - t3 - t4


def ccs_divergence(
    zs,
    ys,
    zt,
    yt,
    feat_cfg: KernelConfig = KernelConfig(),
    out_cfg: KernelConfig = KernelConfig(),
) -> DivergenceValue:
    """Empirical conditional CS divergence between paired (feature,
    output) samples from two domains."""
    zs = _check_samples(zs, "source features")
    ys = _check_samples(ys, "source outputs")
    zt = _check_samples(zt, "target features")
    yt = _check_samples(yt, "target outputs")
    if zs.shape[0] != ys.shape[0]:
        raise ShapeError(
            f"source rows mismatch: {zs.shape[0]} features vs {ys.shape[0]} outputs"
        )
    if zt.shape[0] != yt.shape[0]:
        raise ShapeError(
            f"target rows mismatch: {zt.shape[0]} features vs {yt.shape[0]} outputs"
        )
    if zs.shape[1] != zt.shape[1]:
        raise ShapeError(f"feature dimensions differ: {zs.shape[1]} vs {zt.shape[1]}")
    if ys.shape[1] != yt.shape[1]:
        raise ShapeError(f"output dimensions differ: {ys.shape[1]} vs {yt.shape[1]}")
    n_src, n_tgt = zs.shape[0], zt.shape[0]
    if _canonical_pair(np.hstack([zs, ys]), np.hstack([zt, yt])):
        zs, ys, zt, yt = zt, yt, zs, ys
    sigma_feat = feat_cfg.resolve_sigma(zs, zt)
    sigma_out = out_cfg.resolve_sigma(ys, yt)
    node = ccs_divergence_node(
        ad.constant(zs),
        ad.constant(ys),
        ad.constant(zt),
        ad.constant(yt),
        feat_cfg,
        out_cfg,
        sigma_feat,
        sigma_out,
    )
    raw = float(node.value)
    return DivergenceValue(
        value=max(raw, 0.0),
        raw_value=raw,
        n_source=n_src,
        n_target=n_tgt,
        sigma_feat=sigma_feat,
        sigma_out=sigma_out,
        clamped=raw < 0.0,
    )


def _log_gaussian_density(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    d = x.size
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError("covariance sum is singular or not PD") from exc
    sign, logdet = np.linalg.slogdet(cov)
    diff = x - mean
    sol = np.linalg.solve(cov, diff)
    return float(-0.5 * (d * np.log(2.0 * np.pi) + logdet + diff @ sol))


def cs_gaussian_closed_form(mu1, cov1, mu2, cov2) -> float:
    """Exact CS divergence between two Gaussians.

    D = -2 log Z12 + log Z11 + log Z22 with
    Z_ab = N(mu_a; mu_b, cov_a + cov_b).
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape:
        raise ShapeError("mean/covariance shapes must match between the Gaussians")
    z12 = _log_gaussian_density(mu1, mu2, cov1 + cov2)
    z11 = _log_gaussian_density(mu1, mu1, 2.0 * cov1)
    z22 = _log_gaussian_density(mu2, mu2, 2.0 * cov2)
    return -2.0 * z12 + z11 + z22
