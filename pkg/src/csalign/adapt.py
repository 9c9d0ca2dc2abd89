"""Multi-source adaptation training: divergence-derived source weights,
feature-level and decision-level alignment losses, the scheduled total
loss, and an Adam training loop with cosine-annealed learning rate.

Bandwidths and source weights are refreshed once per epoch on
full-dataset features (a forward pass without gradients); mini-batch
losses reuse them so the loss surface stays stationary within an epoch.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .data import SubjectDataset
from .divergence import cs_divergence_node, ccs_divergence_node
from .errors import NumericError, ParameterError, SampleSizeError, ShapeError, StateError
from .kernels import KernelConfig, gram_node
from .linalg import stable_sigmoid
from .model import (
    BackboneConfig,
    Metrics,
    cross_entropy_node,
    evaluate,
    forward,
    forward_nodes,
    init_params,
    one_hot,
)

__all__ = [
    "ScheduleConfig",
    "TrainConfig",
    "LossBreakdown",
    "TrainResult",
    "BandwidthPlan",
    "schedule",
    "source_weights",
    "fla_loss",
    "dla_loss",
    "train",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScheduleConfig:
    """Loss balancing: alpha scales feature alignment and decays with the
    epoch, beta scales decision alignment and ramps up, crossing at the
    offset epoch."""

    alpha: float = 0.7
    beta: float = 1.4
    tau0: float = 100.0
    epochs: int = 300

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ParameterError("alpha and beta must be non-negative")
        if self.epochs < 1:
            raise ParameterError("epochs must be positive")


def schedule(tau: float, cfg: ScheduleConfig) -> tuple[float, float]:
    """(alpha_tau, beta_tau) at epoch ``tau``; overflow-free for any
    offset distance."""
    gate = stable_sigmoid(tau - cfg.tau0)
    return cfg.alpha * stable_sigmoid(cfg.tau0 - tau), cfg.beta * gate


def source_weights(divs: Mapping[str, float]) -> dict[str, float]:
    """Softmax of negated divergences over the selected sources, computed
    with max subtraction. Weights are positive and sum to one."""
    if not divs:
        raise SampleSizeError("no source divergences given")
    ids = list(divs)
    d = np.array([divs[k] for k in ids], dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ParameterError("divergences must be finite")
    scores = -d
    scores -= scores.max()
    w = np.exp(scores)
    w /= w.sum()
    return dict(zip(ids, w.tolist()))


@dataclass
class BandwidthPlan:
    """Per-pair base bandwidths resolved once per epoch on full-dataset
    features/logits. Keys: source id for source-target pairs, (id_a,
    id_b) in source order for source-source pairs."""

    feat_st: dict = field(default_factory=dict)
    feat_ss: dict = field(default_factory=dict)
    out_st: dict = field(default_factory=dict)
    out_ss: dict = field(default_factory=dict)


def fla_loss(
    source_feats: Mapping[str, ad.Node],
    target_feat: ad.Node,
    weights: Mapping[str, float],
    feat_cfg: KernelConfig,
    plan: BandwidthPlan | None = None,
) -> tuple[ad.Node, ad.Node]:
    """Feature-level alignment losses.

    Returns (weighted source-target CS divergence sum, mean pairwise
    source-source CS divergence); the pairwise term is zero for a single
    source.
    """
    ids = list(source_feats)
    if not ids:
        raise SampleSizeError("no source batches given")
    l_st = None
    for sid in ids:
        z = source_feats[sid]
        sigma = (
            plan.feat_st[sid]
            if plan is not None
            else feat_cfg.resolve_sigma(z.value, target_feat.value)
        )
        term = ad.mul(cs_divergence_node(z, target_feat, feat_cfg, sigma), weights[sid])
        l_st = term if l_st is None else ad.add(l_st, term)
    n = len(ids)
    if n < 2:
        return l_st, ad.constant(0.0)
    acc = None
    for i in range(n):
        for j in range(i + 1, n):
            za, zb = source_feats[ids[i]], source_feats[ids[j]]
            sigma = (
                plan.feat_ss[(ids[i], ids[j])]
                if plan is not None
                else feat_cfg.resolve_sigma(za.value, zb.value)
            )
            d = cs_divergence_node(za, zb, feat_cfg, sigma)
            acc = d if acc is None else ad.add(acc, d)
    return l_st, ad.mul(acc, 2.0 / (n * (n - 1)))


def dla_loss(
    source_batches: Mapping[str, tuple[ad.Node, ad.Node]],
    target_batch: tuple[ad.Node, ad.Node],
    weights: Mapping[str, float],
    feat_cfg: KernelConfig,
    out_cfg: KernelConfig,
    plan: BandwidthPlan | None = None,
) -> tuple[ad.Node, ad.Node]:
    """Decision-level alignment losses: same weighted-sum / pairwise-mean
    structure as the feature losses but over conditional CS divergences
    of (features, logits) pairs."""
    ids = list(source_batches)
    if not ids:
        raise SampleSizeError("no source batches given")
    zt, yt = target_batch
    l_st = None
    for sid in ids:
        zs, ys = source_batches[sid]
        if plan is not None:
            sf, so = plan.feat_st[sid], plan.out_st[sid]
        else:
            sf = feat_cfg.resolve_sigma(zs.value, zt.value)
            so = out_cfg.resolve_sigma(ys.value, yt.value)
        d = ccs_divergence_node(zs, ys, zt, yt, feat_cfg, out_cfg, sf, so)
        term = ad.mul(d, weights[sid])
        l_st = term if l_st is None else ad.add(l_st, term)
    n = len(ids)
    if n < 2:
        return l_st, ad.constant(0.0)
    acc = None
    for i in range(n):
        for j in range(i + 1, n):
            za, ya = source_batches[ids[i]]
            zb, yb = source_batches[ids[j]]
            if plan is not None:
                sf = plan.feat_ss[(ids[i], ids[j])]
                so = plan.out_ss[(ids[i], ids[j])]
            else:
                sf = feat_cfg.resolve_sigma(za.value, zb.value)
                so = out_cfg.resolve_sigma(ya.value, yb.value)
            d = ccs_divergence_node(za, ya, zb, yb, feat_cfg, out_cfg, sf, so)
            acc = d if acc is None else ad.add(acc, d)
    return l_st, ad.mul(acc, 2.0 / (n * (n - 1)))


@dataclass(frozen=True)
class TrainConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    feature_dim: int = 32
    hidden_widths: tuple[int, ...] = (64,)
    pool_factor: int = 4
    feat_kernel: KernelConfig = field(default_factory=KernelConfig)
    out_kernel: KernelConfig = field(default_factory=KernelConfig)
    fla_ss_conditional: bool = False  # literal conditional form of the SS term
    dla_on_probabilities: bool = False  # output kernel on softmax instead of logits
    cosine_anneal: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class LossBreakdown:
    """Per-epoch mean loss components and schedule values."""

    epoch: int
    l_cls: float
    l_fla_st: float
    l_fla_ss: float
    l_dla_st: float
    l_dla_ss: float
    l_total: float
    alpha_tau: float
    beta_tau: float
    lr: float
    target_acc: float | None
    wall_ms: float


@dataclass
class TrainResult:
    backbone: BackboneConfig
    params: dict[str, np.ndarray]
    log: list[LossBreakdown]
    weight_history: list[dict[str, float]]
    metrics: Metrics | None
    clamp_events: int


class _Adam:
    def __init__(self, params, beta1, beta2, eps):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * (g * g)
            params[k] = params[k] - lr * (self.m[k] / bc1) / (
                np.sqrt(self.v[k] / bc2) + self.eps
            )


class _Cycler:
    """Without-replacement batch index stream that reshuffles each time a
    permutation is exhausted (shorter datasets cycle)."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        out = np.empty(k, dtype=np.int64)
        filled = 0
        while filled < k:
            avail = self.n - self.pos
            grab = min(avail, k - filled)
            out[filled : filled + grab] = self.perm[self.pos : self.pos + grab]
            self.pos += grab
            filled += grab
            if self.pos == self.n:
                self.perm = self.rng.permutation(self.n)
                self.pos = 0
        return out


def _cs_value_at(
    a: np.ndarray, b: np.ndarray, cfg: KernelConfig, sigma: float
) -> tuple[float, bool]:
    """CS divergence at a fixed base bandwidth, plus a flag for whether
    any log floor was hit."""
    an, bn = ad.constant(a), ad.constant(b)
    m_aa = float(ad.nmean(gram_node(an, an, cfg, sigma)).value)
    m_bb = float(ad.nmean(gram_node(bn, bn, cfg, sigma)).value)
    m_ab = float(ad.nmean(gram_node(an, bn, cfg, sigma)).value)
    floor = 1e-12
    raw = (
        np.log(max(m_aa, floor))
        + np.log(max(m_bb, floor))
        - 2.0 * np.log(max(m_ab, floor))
    )
    clamped = min(m_aa, m_bb, m_ab) <= floor or raw < 0.0
    return max(float(raw), 0.0), clamped


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _resolve_plan(
    cfg: TrainConfig,
    feats: dict[str, np.ndarray],
    logits: dict[str, np.ndarray],
    source_ids: list[str],
    target_id: str,
    need_out: bool,
) -> BandwidthPlan:
    plan = BandwidthPlan()
    for sid in source_ids:
        plan.feat_st[sid] = cfg.feat_kernel.resolve_sigma(feats[sid], feats[target_id])
        if need_out:
            plan.out_st[sid] = cfg.out_kernel.resolve_sigma(
                logits[sid], logits[target_id]
            )
    for i in range(len(source_ids)):
        for j in range(i + 1, len(source_ids)):
            a, b = source_ids[i], source_ids[j]
            plan.feat_ss[(a, b)] = cfg.feat_kernel.resolve_sigma(feats[a], feats[b])
            if need_out:
                plan.out_ss[(a, b)] = cfg.out_kernel.resolve_sigma(logits[a], logits[b])
    return plan


def train(
    sources: Mapping[str, SubjectDataset] | list[SubjectDataset],
    target: SubjectDataset,
    cfg: TrainConfig,
) -> TrainResult:
    """Run the stage-2 adaptation loop.

    Target labels, when present, are used only to report per-epoch and
    final accuracy; the optimized losses never see them. Deterministic
    for a fixed seed and input order.
    """
    if isinstance(sources, list):
        sources = {ds.subject_id: ds for ds in sources}
    if not sources:
        raise SampleSizeError("need at least one source subject")
    source_ids = list(sources)
    all_ds = [*sources.values(), target]
    c, t_len, k = target.channels, target.samples, target.n_classes
    for ds in all_ds:
        if not ds.ea_applied:
            raise StateError(f"subject {ds.subject_id} is not aligned; run EA first")
        if (ds.channels, ds.samples, ds.n_classes) != (c, t_len, k):
            raise ShapeError(f"subject {ds.subject_id} has inconsistent shape")
        if len(ds) < 2:
            raise SampleSizeError(f"subject {ds.subject_id} has fewer than 2 trials")
    for sid in source_ids:
        if not sources[sid].labeled:
            raise ShapeError(f"source subject {sid} must be fully labeled")

    bcfg = BackboneConfig(
        channels=c,
        samples=t_len,
        feature_dim=cfg.feature_dim,
        n_classes=k,
        hidden_widths=tuple(cfg.hidden_widths),
        pool_factor=cfg.pool_factor,
        seed=cfg.seed,
    )
    params = init_params(bcfg)
    adam = _Adam(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    master = np.random.default_rng(cfg.seed)
    domain_order = [*source_ids, "__target__"]
    datasets = {**{s: sources[s] for s in source_ids}, "__target__": target}
    cyclers = {
        name: _Cycler(len(datasets[name]), np.random.default_rng(seed))
        for name, seed in zip(
            domain_order, master.integers(0, 2**63 - 1, size=len(domain_order))
        )
    }
    signals = {name: datasets[name].signals() for name in domain_order}
    onehots = {
        sid: one_hot(sources[sid].labels(), k) for sid in source_ids
    }
    eval_target = target.labeled
    epochs = cfg.schedule.epochs
    steps = max(1, math.ceil(max(len(ds) for ds in all_ds) / cfg.batch_size))

    history: list[LossBreakdown] = []
    weight_history: list[dict[str, float]] = []
    clamp_events = 0
    for tau in range(1, epochs + 1):
        t0 = time.perf_counter()
        alpha_tau, beta_tau = schedule(tau, cfg.schedule)
        need_fla = alpha_tau != 0.0
        need_dla = beta_tau != 0.0
        lr_tau = cfg.lr
        if cfg.cosine_anneal and epochs > 1:
            lr_tau = 0.5 * cfg.lr * (1.0 + math.cos(math.pi * (tau - 1) / epochs))

        feats: dict[str, np.ndarray] = {}
        outs: dict[str, np.ndarray] = {}
        for name in domain_order:
            f, z = forward(bcfg, params, signals[name])
            feats[name] = f
            outs[name] = _softmax_rows(z) if cfg.dla_on_probabilities else z
        divs = {}
        for sid in source_ids:
            sigma = cfg.feat_kernel.resolve_sigma(feats[sid], feats["__target__"])
            value, was_clamped = _cs_value_at(
                feats[sid], feats["__target__"], cfg.feat_kernel, sigma
            )
            divs[sid] = value
            if was_clamped:
                clamp_events += 1
                log.warning(
                    "epoch %d: divergence to target clamped for source %s", tau, sid
                )
        omega = source_weights(divs)
        weight_history.append(omega)
        plan = _resolve_plan(
            cfg,
            feats,
            outs,
            source_ids,
            "__target__",
            need_out=need_dla or cfg.fla_ss_conditional,
        )

        sums = np.zeros(6)  # cls, fla_st, fla_ss, dla_st, dla_ss, total
        for step_idx in range(steps):
            idx = {name: cyclers[name].take(cfg.batch_size) for name in domain_order}
            leaves = {key: ad.constant(val, op="param") for key, val in params.items()}
            feat_nodes: dict[str, ad.Node] = {}
            logit_nodes: dict[str, ad.Node] = {}
            for name in domain_order:
                fn, ln = forward_nodes(bcfg, leaves, signals[name][idx[name]])
                feat_nodes[name], logit_nodes[name] = fn, ln

            l_cls = None
            for sid in source_ids:
                ce = cross_entropy_node(logit_nodes[sid], onehots[sid][idx[sid]])
                term = ad.mul(ce, omega[sid])
                l_cls = term if l_cls is None else ad.add(l_cls, term)

            zero = ad.constant(0.0)
            src_feats = {sid: feat_nodes[sid] for sid in source_ids}
            if need_fla:
                if cfg.fla_ss_conditional:
                    l_fla_st, _ = fla_loss(
                        src_feats, feat_nodes["__target__"], omega, cfg.feat_kernel, plan
                    )
                    l_fla_ss = _conditional_ss(
                        {sid: (feat_nodes[sid], _out_node(logit_nodes[sid], cfg)) for sid in source_ids},
                        cfg,
                        plan,
                    )
                else:
                    l_fla_st, l_fla_ss = fla_loss(
                        src_feats, feat_nodes["__target__"], omega, cfg.feat_kernel, plan
                    )
            else:
                l_fla_st, l_fla_ss = zero, zero
            if need_dla:
                src_pairs = {
                    sid: (feat_nodes[sid], _out_node(logit_nodes[sid], cfg))
                    for sid in source_ids
                }
                tgt_pair = (
                    feat_nodes["__target__"],
                    _out_node(logit_nodes["__target__"], cfg),
                )
                l_dla_st, l_dla_ss = dla_loss(
                    src_pairs, tgt_pair, omega, cfg.feat_kernel, cfg.out_kernel, plan
                )
            else:
                l_dla_st, l_dla_ss = zero, zero

            l_total = ad.add(
                l_cls,
                ad.add(
                    ad.mul(ad.add(l_fla_st, l_fla_ss), alpha_tau),
                    ad.mul(ad.add(l_dla_st, l_dla_ss), beta_tau),
                ),
            )
            if not np.isfinite(l_total.value):
                raise NumericError(
                    f"non-finite loss at epoch {tau}, step {step_idx}"
                )
            grads = dict(
                zip(leaves.keys(), ad.gradients(l_total, list(leaves.values())))
            )
            adam.step(params, grads, lr_tau)
            sums += [
                float(l_cls.value),
                float(l_fla_st.value),
                float(l_fla_ss.value),
                float(l_dla_st.value),
                float(l_dla_ss.value),
                float(l_total.value),
            ]

        means = sums / steps
        target_acc = None
        if eval_target:
            target_acc = evaluate(bcfg, params, target).accuracy
        history.append(
            LossBreakdown(
                epoch=tau,
                l_cls=means[0],
                l_fla_st=means[1],
                l_fla_ss=means[2],
                l_dla_st=means[3],
                l_dla_ss=means[4],
                l_total=means[5],
                alpha_tau=alpha_tau,
                beta_tau=beta_tau,
                lr=lr_tau,
                target_acc=target_acc,
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
        )

    metrics = evaluate(bcfg, params, target) if eval_target else None
    return TrainResult(
        backbone=bcfg,
        params=params,
        log=history,
        weight_history=weight_history,
        metrics=metrics,
        clamp_events=clamp_events,
    )


def _out_node(logit_node: ad.Node, cfg: TrainConfig) -> ad.Node:
    return ad.softmax(logit_node) if cfg.dla_on_probabilities else logit_node


def _conditional_ss(
    source_batches: Mapping[str, tuple[ad.Node, ad.Node]],
    cfg: TrainConfig,
    plan: BandwidthPlan,
) -> ad.Node:
    """Literal conditional form of the source-source feature alignment
    term (config switch): mean pairwise conditional CS divergence."""
    ids = list(source_batches)
    n = len(ids)
    if n < 2:
        return ad.constant(0.0)
    acc = None
    for i in range(n):
        for j in range(i + 1, n):
            za, ya = source_batches[ids[i]]
            zb, yb = source_batches[ids[j]]
            d = ccs_divergence_node(
                za,
                ya,
                zb,
                yb,
                cfg.feat_kernel,
                cfg.out_kernel,
                plan.feat_ss[(ids[i], ids[j])],
                plan.out_ss[(ids[i], ids[j])],
            )
            acc = d if acc is None else ad.add(acc, d)
    return ad.mul(acc, 2.0 / (n * (n - 1)))
