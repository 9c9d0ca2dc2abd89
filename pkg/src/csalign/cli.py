"""Command-line pipeline: dataset synthesis, embedding, source
selection, adaptation training, evaluation, and divergence utilities.

Configuration precedence: built-in defaults < ``--config`` key=value
file < explicit flags. Every command echoes its fully resolved
configuration into the output directory so runs are reproducible.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .adapt import ScheduleConfig, TrainConfig, TrainResult, train
from .alignment import euclidean_align
from .data import SubjectDataset
from .divergence import ccs_divergence, cs_divergence
from .errors import ConfigError, CsalignError
from .kernels import DEFAULT_MEDIAN_SCALE, KernelConfig
from .model import evaluate, load_checkpoint, save_checkpoint
from .selection import mds_coordinates, select_sources
from .synth import SynthConfig, generate, stub_embed

__all__ = ["main"]


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(text).split(",") if x != "")

def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x != "")

def _parse_clusters(text: str) -> tuple[tuple[int, ...], ...]:
    return tuple(_parse_ints(group) for group in str(text).split("|") if group != "")

def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


_COERCERS = {
    int: int,
    float: float,
    str: str,
    bool: _parse_bool,
    "floats": _parse_floats,
    "ints": _parse_ints,
    "clusters": _parse_clusters,
}


def _resolve(args, spec: dict) -> dict:
    """Merge defaults, config-file values, and flags (flags win)."""
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = io.read_config_file(args.config)
    resolved = {}
    for key, (typ, default) in spec.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val
        elif key in file_cfg:
            try:
                resolved[key] = _COERCERS[typ](file_cfg[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"config key {key}={file_cfg[key]!r}: {exc}") from exc
        else:
            resolved[key] = default
    return resolved


def _echo(out_dir: Path, command: str, resolved: dict) -> None:
    entries = {"command": command}
    for key, value in resolved.items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, Path):
            value = str(value)
        entries[key] = value
    io.write_config_echo(out_dir / "resolved_config.cfg", entries)


def _kernel_config(resolved: dict) -> KernelConfig:
    return KernelConfig(
        bandwidth_mode=resolved["bandwidth_mode"],
        sigma=resolved["sigma"],
        multi_scales=resolved["multi_scales"],
        median_scale=resolved["median_scale"],
    )


_KERNEL_SPEC = {
    "bandwidth_mode": (str, "median"),
    "sigma": (float, None),
    "multi_scales": ("floats", (0.5, 1.0, 2.0)),
    "median_scale": (float, DEFAULT_MEDIAN_SCALE),
}


def _add_kernel_flags(parser) -> None:
    parser.add_argument("--bandwidth-mode", dest="bandwidth_mode",
                        choices=["fixed", "median", "multi"])
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--multi-scales", dest="multi_scales", type=_parse_floats)
    parser.add_argument("--median-scale", dest="median_scale", type=float)


def _require_out(args) -> Path:
    if args.out is None:
        raise ConfigError("--out is required for this command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- synth

_SYNTH_SPEC = {
    "n_subjects": (int, 6),
    "trials_per_class": (int, 40),
    "channels": (int, 4),
    "samples": (int, 400),
    "n_classes": (int, 2),
    "class_separation": (float, 1.0),
    "subject_shift": (float, 1.0),
    "clusters": ("clusters", None),
    "intra_cluster_shift": (float, 0.0),
    "noise_std": (float, 0.5),
    "sample_rate": (float, 200.0),
    "embed_dim": (int, 200),
    "seed": (int, 0),
}


def cmd_synth(args) -> int:
    resolved = _resolve(args, _SYNTH_SPEC)
    out = _require_out(args)
    cfg = SynthConfig(
        n_subjects=resolved["n_subjects"],
        trials_per_class=resolved["trials_per_class"],
        channels=resolved["channels"],
        samples=resolved["samples"],
        n_classes=resolved["n_classes"],
        class_separation=resolved["class_separation"],
        subject_shift=resolved["subject_shift"],
        cluster_spec=resolved["clusters"],
        intra_cluster_shift=resolved["intra_cluster_shift"],
        noise_std=resolved["noise_std"],
        sample_rate=resolved["sample_rate"],
        seed=resolved["seed"],
    )
    datasets = generate(cfg)
    embeddings = [
        stub_embed(ds, embed_dim=resolved["embed_dim"], seed=cfg.seed)
        for ds in datasets
    ]
    io.write_dataset(out, datasets, cfg.sample_rate, embeddings)
    _echo(out, "synth", resolved)
    print(f"{'subject':>8} {'trials':>7} {'C':>4} {'T':>6} {'K':>3}")
    for ds in datasets:
        print(
            f"{ds.subject_id:>8} {len(ds):>7} {ds.channels:>4} "
            f"{ds.samples:>6} {ds.n_classes:>3}"
        )
    return 0


# ---------------------------------------------------------------- embed

_EMBED_SPEC = {
    "data": (str, None),
    "embed_dim": (int, 200),
    "zero_pad": (bool, False),
    "seed": (int, 0),
}


def cmd_embed(args) -> int:
    resolved = _resolve(args, _EMBED_SPEC)
    if resolved["data"] is None:
        raise ConfigError("--data is required")
    datasets, _ = io.read_dataset(resolved["data"])
    embeddings = [
        stub_embed(
            ds,
            embed_dim=resolved["embed_dim"],
            seed=resolved["seed"],
            zero_pad=resolved["zero_pad"],
        )
        for ds in datasets
    ]
    out = Path(args.out) if args.out else Path(resolved["data"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_embeddings_csv(out / "embeddings.csv", embeddings)
    _echo(out, "embed", resolved)
    print(f"wrote embeddings for {len(embeddings)} subjects to {out / 'embeddings.csv'}")
    return 0


# ---------------------------------------------------------------- select

_SELECT_SPEC = {
    "data": (str, None),
    "target": (str, None),
    "q": (float, 50.0),
    "seed": (int, 0),
    **_KERNEL_SPEC,
}


def _load_embeddings(data_dir: Path, manifest: dict):
    path = data_dir / "embeddings.csv"
    if not path.exists():
        raise ConfigError(f"no embeddings.csv in {data_dir}; run the embed command")
    embeddings = io.read_embeddings_csv(path)
    by_id = {e.subject_id: e for e in embeddings}
    missing = [sid for sid in manifest["subjects"] if sid not in by_id]
    if missing:
        raise ConfigError(f"embeddings.csv has no rows for subject(s): {', '.join(missing)}")
    return [by_id[sid] for sid in manifest["subjects"]]


def cmd_select(args) -> int:
    resolved = _resolve(args, _SELECT_SPEC)
    if resolved["data"] is None or resolved["target"] is None:
        raise ConfigError("--data and --target are required")
    out = _require_out(args)
    data_dir = Path(resolved["data"])
    manifest = io.read_manifest(data_dir)
    if resolved["target"] not in manifest["subjects"]:
        raise ConfigError(f"target {resolved['target']!r} not in manifest subjects")
    embeddings = _load_embeddings(data_dir, manifest)
    kcfg = _kernel_config(resolved)
    result = select_sources(embeddings, resolved["target"], resolved["q"], kcfg)
    coords = mds_coordinates(result.distance_matrix)
    io.write_matrix_csv(out / "divergence_matrix.csv", result.subject_ids,
                        result.distance_matrix)
    io.write_selection_json(out / "selection.json", result)
    io.write_mds_csv(out / "mds.csv", result.subject_ids, coords)
    _echo(out, "select", resolved)
    print(
        f"target={result.target_id} q={result.percentile} delta={io.fmt(result.threshold)} "
        f"selected={','.join(result.selected)}"
        + (" (fallback)" if result.fallback_used else "")
    )
    return 0


# ---------------------------------------------------------------- train

_TRAIN_SPEC = {
    "data": (str, None),
    "target": (str, None),
    "selection": (str, None),
    "all_sources": (bool, False),
    "loso": (bool, False),
    "q": (float, 50.0),
    "alpha": (float, 0.7),
    "beta": (float, 1.4),
    "tau0": (float, 100.0),
    "epochs": (int, 300),
    "lr": (float, 1e-3),
    "batch": (int, 32),
    "feature_dim": (int, 32),
    "hidden_widths": ("ints", (64,)),
    "pool_factor": (int, 4),
    "fla_ss_conditional": (bool, False),
    "dla_on_probabilities": (bool, False),
    "no_cosine": (bool, False),
    "seed": (int, 0),
    **_KERNEL_SPEC,
}


def _train_config(resolved: dict) -> TrainConfig:
    kcfg = _kernel_config(resolved)
    return TrainConfig(
        schedule=ScheduleConfig(
            alpha=resolved["alpha"],
            beta=resolved["beta"],
            tau0=resolved["tau0"],
            epochs=resolved["epochs"],
        ),
        lr=resolved["lr"],
        batch_size=resolved["batch"],
        seed=resolved["seed"],
        feature_dim=resolved["feature_dim"],
        hidden_widths=tuple(resolved["hidden_widths"]),
        pool_factor=resolved["pool_factor"],
        feat_kernel=kcfg,
        out_kernel=kcfg,
        fla_ss_conditional=resolved["fla_ss_conditional"],
        dla_on_probabilities=resolved["dla_on_probabilities"],
        cosine_anneal=not resolved["no_cosine"],
    )


def _run_one_training(
    datasets: dict[str, SubjectDataset],
    target_id: str,
    source_ids: list[str],
    cfg: TrainConfig,
    out: Path,
) -> TrainResult:
    aligned = {sid: euclidean_align(datasets[sid]) for sid in (*source_ids, target_id)}
    result = train(
        {sid: aligned[sid] for sid in source_ids}, aligned[target_id], cfg
    )
    io.write_train_log_csv(out / "train_log.csv", result.log)
    save_checkpoint(out / "checkpoint.npz", result.backbone, result.params)
    weight_mean = {
        sid: float(np.mean([w[sid] for w in result.weight_history]))
        for sid in source_ids
    }
    report = {
        "target": target_id,
        "selected_sources": source_ids,
        "seed": cfg.seed,
        "epochs": cfg.schedule.epochs,
        "final_accuracy": None if result.metrics is None else result.metrics.accuracy,
        "final_kappa": None if result.metrics is None else result.metrics.kappa,
        "final_chance": None if result.metrics is None else result.metrics.chance,
        "confusion": None
        if result.metrics is None
        else result.metrics.confusion.tolist(),
        "weight_summary": {
            "final": result.weight_history[-1],
            "mean": weight_mean,
        },
        "clamp_events": result.clamp_events,
    }
    io.write_json(out / "report.json", report)
    return result


def _select_for_target(
    data_dir: Path, manifest: dict, target_id: str, q: float, kcfg: KernelConfig, out: Path
):
    embeddings = _load_embeddings(data_dir, manifest)
    result = select_sources(embeddings, target_id, q, kcfg)
    io.write_selection_json(out / "selection.json", result)
    return result.selected


def cmd_train(args) -> int:
    resolved = _resolve(args, _TRAIN_SPEC)
    if resolved["data"] is None:
        raise ConfigError("--data is required")
    out = _require_out(args)
    data_dir = Path(resolved["data"])
    datasets_list, manifest = io.read_dataset(data_dir)
    datasets = {ds.subject_id: ds for ds in datasets_list}
    cfg = _train_config(resolved)
    _echo(out, "train", resolved)

    if resolved["loso"]:
        rows = []
        for target_id in manifest["subjects"]:
            sub_out = out / f"loso_{target_id}"
            sub_out.mkdir(parents=True, exist_ok=True)
            source_ids = [s for s in manifest["subjects"] if s != target_id]
            if not resolved["all_sources"]:
                source_ids = _select_for_target(
                    data_dir, manifest, target_id, resolved["q"],
                    cfg.feat_kernel, sub_out,
                )
            result = _run_one_training(datasets, target_id, source_ids, cfg, sub_out)
            acc = result.metrics.accuracy if result.metrics else float("nan")
            kap = result.metrics.kappa if result.metrics else float("nan")
            rows.append((target_id, acc, kap))
            print(f"loso target={target_id} acc={acc:.4f} kappa={kap:.4f}")
        accs = np.array([r[1] for r in rows])
        kaps = np.array([r[2] for r in rows])
        with open(out / "loso_summary.csv", "w", encoding="utf-8") as fh:
            fh.write("target,accuracy,kappa\n")
            for target_id, acc, kap in rows:
                fh.write(f"{target_id},{io.fmt(acc)},{io.fmt(kap)}\n")
            fh.write(f"mean,{io.fmt(accs.mean())},{io.fmt(kaps.mean())}\n")
            fh.write(f"std,{io.fmt(accs.std(ddof=0))},{io.fmt(kaps.std(ddof=0))}\n")
        print(f"loso mean acc={accs.mean():.4f} +/- {accs.std(ddof=0):.4f}")
        return 0

    if resolved["target"] is None:
        raise ConfigError("--target is required unless --loso is set")
    target_id = resolved["target"]
    if target_id not in datasets:
        raise ConfigError(f"target {target_id!r} not in manifest subjects")
    if resolved["all_sources"]:
        source_ids = [s for s in manifest["subjects"] if s != target_id]
    elif resolved["selection"]:
        record = io.read_selection_json(resolved["selection"])
        if record.get("target") != target_id:
            raise ConfigError(
                f"selection record is for target {record.get('target')!r}, "
                f"not {target_id!r}"
            )
        source_ids = list(record["selected"])
    else:
        raise ConfigError("pass --selection <selection.json> or --all-sources")
    result = _run_one_training(datasets, target_id, source_ids, cfg, out)
    if result.metrics is not None:
        print(
            f"target={target_id} acc={result.metrics.accuracy:.4f} "
            f"kappa={result.metrics.kappa:.4f}"
        )
    return 0


# ---------------------------------------------------------------- eval

_EVAL_SPEC = {
    "data": (str, None),
    "target": (str, None),
    "checkpoint": (str, None),
}


def cmd_eval(args) -> int:
    resolved = _resolve(args, _EVAL_SPEC)
    for key in ("data", "target", "checkpoint"):
        if resolved[key] is None:
            raise ConfigError(f"--{key} is required")
    out = _require_out(args)
    datasets, manifest = io.read_dataset(resolved["data"])
    by_id = {ds.subject_id: ds for ds in datasets}
    if resolved["target"] not in by_id:
        raise ConfigError(f"target {resolved['target']!r} not in manifest subjects")
    bcfg, params = load_checkpoint(resolved["checkpoint"])
    ds = euclidean_align(by_id[resolved["target"]])
    metrics = evaluate(bcfg, params, ds)
    payload = {
        "target": resolved["target"],
        "accuracy": metrics.accuracy,
        "kappa": metrics.kappa,
        "chance": metrics.chance,
        "confusion": metrics.confusion.tolist(),
    }
    io.write_json(out / "eval.json", payload)
    _echo(out, "eval", resolved)
    print(f"accuracy={metrics.accuracy:.4f} kappa={metrics.kappa:.4f}")
    return 0


# ---------------------------------------------------------------- divergence

def _read_samples(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if line_no == 0:
                try:
                    [float(p) for p in parts]
                except ValueError:
                    continue  # header row
            rows.append([float(p) for p in parts])
    if not rows:
        raise ConfigError(f"{path}: no numeric rows")
    return np.asarray(rows, dtype=np.float64)


def cmd_divergence(args) -> int:
    resolved = _resolve(args, dict(_KERNEL_SPEC))
    kcfg = _kernel_config(resolved)
    a = _read_samples(args.file_a)
    b = _read_samples(args.file_b)
    if args.conditional:
        if not (args.outputs_a and args.outputs_b):
            raise ConfigError("--conditional requires --outputs-a and --outputs-b")
        ya = _read_samples(args.outputs_a)
        yb = _read_samples(args.outputs_b)
        value = ccs_divergence(a, ya, b, yb, kcfg, kcfg)
    else:
        value = cs_divergence(a, b, kcfg)
    print(f"divergence={io.fmt(value.value)}")
    print(f"raw={io.fmt(value.raw_value)}")
    print(f"sigma_feat={io.fmt(value.sigma_feat)}")
    if value.sigma_out is not None:
        print(f"sigma_out={io.fmt(value.sigma_out)}")
    print(f"n_source={value.n_source} n_target={value.n_target}")
    print(f"clamped={value.clamped}")
    if args.out:
        out = _require_out(args)
        io.write_json(
            out / "divergence.json",
            {
                "value": value.value,
                "raw": value.raw_value,
                "sigma_feat": value.sigma_feat,
                "sigma_out": value.sigma_out,
                "n_source": value.n_source,
                "n_target": value.n_target,
                "clamped": value.clamped,
            },
        )
        _echo(out, "divergence", resolved)
    return 0


# ---------------------------------------------------------------- parser

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value config file")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--out", type=Path, help="output directory")

    parser = argparse.ArgumentParser(
        prog="csalign",
        description="Kernel-divergence source selection and multi-source "
        "adaptation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--n-subjects", dest="n_subjects", type=int)
    p.add_argument("--trials-per-class", dest="trials_per_class", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--class-separation", dest="class_separation", type=float)
    p.add_argument("--subject-shift", dest="subject_shift", type=float)
    p.add_argument("--clusters", type=_parse_clusters,
                   help="cluster spec like 0,1,2|3,4,5")
    p.add_argument("--intra-cluster-shift", dest="intra_cluster_shift", type=float)
    p.add_argument("--noise-std", dest="noise_std", type=float)
    p.add_argument("--sample-rate", dest="sample_rate", type=float)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("embed", parents=[common], help="recompute stub embeddings")
    p.add_argument("--data", type=str)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--zero-pad", dest="zero_pad", action="store_const", const=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("select", parents=[common], help="select source subjects")
    p.add_argument("--data", type=str)
    p.add_argument("--target", type=str)
    p.add_argument("--q", type=float, help="percentile threshold")
    _add_kernel_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", parents=[common], help="run adaptation training")
    p.add_argument("--data", type=str)
    p.add_argument("--target", type=str)
    p.add_argument("--selection", type=str, help="selection.json path")
    p.add_argument("--all-sources", dest="all_sources", action="store_const", const=True)
    p.add_argument("--loso", action="store_const", const=True)
    p.add_argument("--q", type=float, help="percentile used by --loso selection")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tau0", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--hidden-widths", dest="hidden_widths", type=_parse_ints)
    p.add_argument("--pool-factor", dest="pool_factor", type=int)
    p.add_argument("--fla-ss-conditional", dest="fla_ss_conditional",
                   action="store_const", const=True)
    p.add_argument("--dla-on-probabilities", dest="dla_on_probabilities",
                   action="store_const", const=True)
    p.add_argument("--no-cosine", dest="no_cosine", action="store_const", const=True)
    _add_kernel_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--data", type=str)
    p.add_argument("--target", type=str)
    p.add_argument("--checkpoint", type=str)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("divergence", parents=[common],
                       help="divergence between two sample files")
    p.add_argument("file_a", type=str)
    p.add_argument("file_b", type=str)
    p.add_argument("--conditional", action="store_const", const=True, default=False)
    p.add_argument("--outputs-a", dest="outputs_a", type=str)
    p.add_argument("--outputs-b", dest="outputs_b", type=str)
    _add_kernel_flags(p)
    p.set_defaults(func=cmd_divergence)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CsalignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
