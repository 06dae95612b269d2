"""Command-line surface for the alignment pipeline.

Commands: synth, fit-teacher, train, eval, shift, bench-grad. Every
command takes --seed, --out and optionally --config (a JSON file whose
entries fill in flags that were not passed; explicit flags win, and
built-in defaults apply last). The effective configuration is written
next to the outputs as run_config.json, so each artifact records
exactly what produced it.

Exit codes: 0 success, 1 I/O or data error, 2 usage error, 3 numerical
divergence during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .divergences import DivergenceSpec
from .embeddings import (
    PairedDataset,
    UnpairedPool,
    l2_normalize_rows,
    load_embeddings,
    write_embeddings,
)
from .entropic_ot import grad_cost_profile, write_profile_csv
from .errors import DataError, DivergenceError, FormatError, ParameterError, SotalignError
from .evaluation import format_recall_table, retrieval_recall, write_recall_csv, zero_shot_classify
from .linear_teachers import fit_cca, fit_linear_contrastive, fit_procrustes, load_teacher, save_teacher
from .shift_metrics import total_ssw, write_shift_csv
from .synth import SynthConfig, generate_platonic
from .trainer import TrainConfig, load_aligner, save_aligner, train_sotalign, write_train_report


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults < config file < explicit flags."""
    cfg = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        file_cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
        unknown = sorted(set(file_cfg) - set(defaults))
        if unknown:
            raise ParameterError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _write_run_config(out_dir: Path, command: str, cfg: dict) -> None:
    payload = {"command": command, "config": cfg}
    (out_dir / "run_config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_side(path, normalize: bool):
    E = load_embeddings(path)
    return l2_normalize_rows(E) if normalize else E


SYNTH_DEFAULTS = {
    "latent_dim": 16,
    "d_x": 48,
    "d_y": 32,
    "n_pairs": 200,
    "n_unpaired": 5000,
    "n_heldout": 500,
    "noise_std": 0.3,
    "shift": 0.0,
    "identity_maps": False,
    "seed": 0,
    "out": "synth_out",
}


def cmd_synth(args) -> int:
    cfg = _resolve(args, SYNTH_DEFAULTS)
    out = _out_dir(cfg)
    data = generate_platonic(
        SynthConfig(
            latent_dim=cfg["latent_dim"],
            d_x=cfg["d_x"],
            d_y=cfg["d_y"],
            n_pairs=cfg["n_pairs"],
            n_unpaired=cfg["n_unpaired"],
            n_heldout=cfg["n_heldout"],
            noise_std=cfg["noise_std"],
            shift=cfg["shift"],
            identity_maps=cfg["identity_maps"],
            seed=cfg["seed"],
        )
    )
    for name, modality in (
        ("paired_x", "image"),
        ("paired_y", "text"),
        ("unpaired_x", "image"),
        ("unpaired_y", "text"),
        ("heldout_x", "image"),
        ("heldout_y", "text"),
    ):
        write_embeddings(getattr(data, name), out / f"{name}.semb", source="synthetic",
                         modality=modality)
    _write_run_config(out, "synth", cfg)
    print(f"wrote synthetic splits to {out}")
    return 0


TEACHER_DEFAULTS = {
    "kind": "cca",
    "paired_x": None,
    "paired_y": None,
    "d_prime": None,
    "lam": 0.1,
    "d_shared": 1024,
    "steps": 500,
    "lr": 1e-3,
    "normalize": True,
    "seed": 0,
    "out": "teacher_out",
}


def _fit_teacher_from_cfg(cfg: dict, paired: PairedDataset):
    if cfg["kind"] == "procrustes":
        return fit_procrustes(paired, d_prime=cfg["d_prime"])
    if cfg["kind"] == "cca":
        return fit_cca(paired, d_prime=cfg["d_prime"], lam=cfg["lam"])
    from .linear_teachers import ContrastiveConfig

    contrastive = ContrastiveConfig(n_steps=cfg["steps"], lr_max=cfg["lr"], seed=cfg["seed"])
    return fit_linear_contrastive(paired, d_shared=cfg["d_shared"], cfg=contrastive)


def cmd_fit_teacher(args) -> int:
    cfg = _resolve(args, TEACHER_DEFAULTS)
    if not cfg["paired_x"] or not cfg["paired_y"]:
        raise ParameterError("fit-teacher requires --paired-x and --paired-y")
    out = _out_dir(cfg)
    paired = PairedDataset(
        _load_side(cfg["paired_x"], cfg["normalize"]),
        _load_side(cfg["paired_y"], cfg["normalize"]),
    )
    teacher = _fit_teacher_from_cfg(cfg, paired)
    save_teacher(teacher, out / "teacher.bin")
    manifest = {
        "kind": teacher.kind,
        "d_prime": teacher.d_prime,
        "lam": cfg["lam"] if cfg["kind"] == "cca" else None,
        "d_x": int(teacher.w_x.shape[1]),
        "d_y": int(teacher.w_y.shape[1]),
        "n_pairs": paired.n,
    }
    (out / "teacher_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _write_run_config(out, "fit-teacher", cfg)
    print(f"fitted {teacher.kind} teacher (d'={teacher.d_prime}) to {out}")
    return 0


TRAIN_DEFAULTS = {
    "paired_x": None,
    "paired_y": None,
    "unpaired_x": None,
    "unpaired_y": None,
    "teacher": "cca",
    "teacher_file": None,
    "div": "klot",
    "alpha": 1e-4,
    "eps": 0.05,
    "eps_star": 0.01,
    "steps": 2000,
    "lr": 1e-4,
    "weight_decay": 1e-5,
    "d": 1024,
    "batch_paired": 10_000,
    "batch_unpaired": 11_000,
    "init": "gaussian",
    "lam": 0.1,
    "normalize": True,
    "seed": 0,
    "out": "train_out",
}


def cmd_train(args) -> int:
    cfg = _resolve(args, TRAIN_DEFAULTS)
    for key in ("paired_x", "paired_y", "unpaired_x", "unpaired_y"):
        if not cfg[key]:
            raise ParameterError(f"train requires --{key.replace('_', '-')}")
    out = _out_dir(cfg)
    paired = PairedDataset(
        _load_side(cfg["paired_x"], cfg["normalize"]),
        _load_side(cfg["paired_y"], cfg["normalize"]),
    )
    pool = UnpairedPool(
        _load_side(cfg["unpaired_x"], cfg["normalize"]),
        _load_side(cfg["unpaired_y"], cfg["normalize"]),
    )
    teacher = load_teacher(cfg["teacher_file"]) if cfg["teacher_file"] else None
    train_cfg = TrainConfig(
        alpha=cfg["alpha"],
        div=DivergenceSpec(cfg["div"], epsilon=cfg["eps"], epsilon_star=cfg["eps_star"]),
        n_steps=cfg["steps"],
        lr_max=cfg["lr"],
        weight_decay=cfg["weight_decay"],
        n_pair_batch=cfg["batch_paired"],
        n_unpaired_x=cfg["batch_unpaired"],
        n_unpaired_y=cfg["batch_unpaired"],
        d=cfg["d"],
        seed=cfg["seed"],
        init=cfg["init"],
    )
    teacher_kwargs = {"lam": cfg["lam"]} if cfg["teacher"] == "cca" else None
    report = train_sotalign(paired, pool, cfg["teacher"], train_cfg,
                            teacher=teacher, teacher_kwargs=teacher_kwargs)
    save_aligner(report.aligner, out / "aligner.bin")
    save_teacher(report.teacher, out / "teacher.bin")
    write_train_report(report, out / "train_report.csv")
    cfg["label"] = report.label
    _write_run_config(out, "train", cfg)
    print(f"{report.label}: {cfg['steps']} steps, final total loss {report.total[-1]:.6f}")
    return 0


EVAL_DEFAULTS = {
    "task": "retrieval",
    "images": None,
    "texts": None,
    "aligner": None,
    "gt": None,
    "ks": "1,5,10",
    "prototypes": None,
    "labels": None,
    "normalize": True,
    "seed": 0,
    "out": "eval_out",
}


def cmd_eval(args) -> int:
    cfg = _resolve(args, EVAL_DEFAULTS)
    out = _out_dir(cfg)
    if not cfg["images"]:
        raise ParameterError("eval requires --images")
    aligner = load_aligner(cfg["aligner"]) if cfg["aligner"] else None
    images = _load_side(cfg["images"], cfg["normalize"])
    z_img = aligner.project_x(images) if aligner else images.values

    if cfg["task"] == "retrieval":
        if not cfg["texts"]:
            raise ParameterError("retrieval eval requires --texts")
        texts = _load_side(cfg["texts"], cfg["normalize"])
        z_txt = aligner.project_y(texts) if aligner else texts.values
        gt = None
        if cfg["gt"]:
            raw = json.loads(Path(cfg["gt"]).read_text(encoding="utf-8"))
            gt = {int(k): [int(t) for t in v] for k, v in raw.items()}
        ks = [int(k) for k in str(cfg["ks"]).split(",") if k]
        report = retrieval_recall(z_img, z_txt, gt, ks)
        write_recall_csv(report, out / "recall_report.csv")
        _write_run_config(out, "eval", cfg)
        print(format_recall_table(report))
        return 0
    if cfg["task"] == "classify":
        if not cfg["prototypes"] or not cfg["labels"]:
            raise ParameterError("classify eval requires --prototypes and --labels")
        prototypes = _load_side(cfg["prototypes"], cfg["normalize"])
        z_proto = aligner.project_y(prototypes) if aligner else prototypes.values
        labels = json.loads(Path(cfg["labels"]).read_text(encoding="utf-8"))
        accuracy = zero_shot_classify(z_img, z_proto, labels)
        (out / "accuracy.csv").write_text(
            f"top1_accuracy_percent\n{accuracy!r}\n", encoding="utf-8"
        )
        _write_run_config(out, "eval", cfg)
        print(f"top-1 accuracy: {accuracy:.2f}%")
        return 0
    raise ParameterError(f"unknown eval task {cfg['task']!r}")


SHIFT_DEFAULTS = {
    "pool_x": None,
    "pool_y": None,
    "paired_x": None,
    "paired_y": None,
    "n_proj": 500,
    "p": 2.0,
    "seed": 0,
    "out": "shift_out",
}


def cmd_shift(args) -> int:
    cfg = _resolve(args, SHIFT_DEFAULTS)
    for key in ("pool_x", "pool_y", "paired_x", "paired_y"):
        if not cfg[key]:
            raise ParameterError(f"shift requires --{key.replace('_', '-')}")
    out = _out_dir(cfg)
    pool = UnpairedPool(load_embeddings(cfg["pool_x"]), load_embeddings(cfg["pool_y"]))
    paired = PairedDataset(load_embeddings(cfg["paired_x"]), load_embeddings(cfg["paired_y"]))
    report = total_ssw(pool, paired, n_proj=cfg["n_proj"], p=cfg["p"], seed=cfg["seed"])
    write_shift_csv(report, out / "shift_report.csv",
                    dataset_x=str(cfg["pool_x"]), dataset_y=str(cfg["pool_y"]))
    _write_run_config(out, "shift", cfg)
    print(f"ssw_x={report.ssw_x:.6f} ssw_y={report.ssw_y:.6f} total={report.total:.6f}")
    return 0


BENCH_DEFAULTS = {
    "n": 1024,
    "eps": 0.05,
    "iters": "100,1000",
    "seed": 0,
    "out": "bench_out",
}


def cmd_bench_grad(args) -> int:
    cfg = _resolve(args, BENCH_DEFAULTS)
    out = _out_dir(cfg)
    iter_counts = [int(t) for t in str(cfg["iters"]).split(",") if t]
    rows = grad_cost_profile(cfg["n"], cfg["eps"], iter_counts, seed=cfg["seed"])
    write_profile_csv(rows, out / "bench_grad.csv")
    _write_run_config(out, "bench-grad", cfg)
    for r in rows:
        print(
            f"T={r.iterations}: closed-form {r.closed_form_floats} floats, "
            f"unrolled {r.unrolled_floats} floats"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sotalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=str)
        p.add_argument("--config", type=str, help="JSON file with flag defaults")

    p = sub.add_parser("synth", help="generate synthetic two-modality embeddings")
    for flag in ("latent-dim", "d-x", "d-y", "n-pairs", "n-unpaired", "n-heldout"):
        p.add_argument(f"--{flag}", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--shift", type=float)
    p.add_argument("--identity-maps", action=argparse.BooleanOptionalAction)
    add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit-teacher", help="fit a linear teacher from paired embeddings")
    p.add_argument("--kind", choices=("procrustes", "cca", "contrastive"))
    p.add_argument("--paired-x", type=str)
    p.add_argument("--paired-y", type=str)
    p.add_argument("--d-prime", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--d-shared", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction)
    add_common(p)
    p.set_defaults(func=cmd_fit_teacher)

    p = sub.add_parser("train", help="train alignment layers")
    for flag in ("paired-x", "paired-y", "unpaired-x", "unpaired-y", "teacher-file"):
        p.add_argument(f"--{flag}", type=str)
    p.add_argument("--teacher", choices=("procrustes", "cca", "contrastive"))
    p.add_argument("--div", choices=("klot", "infonce", "cka"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--eps-star", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--batch-paired", type=int)
    p.add_argument("--batch-unpaired", type=int)
    p.add_argument("--init", choices=("gaussian", "teacher"))
    p.add_argument("--lam", type=float)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction)
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-shot retrieval or classification")
    p.add_argument("--task", choices=("retrieval", "classify"))
    for flag in ("images", "texts", "aligner", "gt", "ks", "prototypes", "labels"):
        p.add_argument(f"--{flag}", type=str)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction)
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("shift", help="distribution shift between pool and paired data")
    for flag in ("pool-x", "pool-y", "paired-x", "paired-y"):
        p.add_argument(f"--{flag}", type=str)
    p.add_argument("--n-proj", type=int)
    p.add_argument("--p", type=float)
    add_common(p)
    p.set_defaults(func=cmd_shift)

    p = sub.add_parser("bench-grad", help="gradient memory/time profile")
    p.add_argument("--n", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--iters", type=str)
    add_common(p)
    p.set_defaults(func=cmd_bench_grad)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (FormatError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SotalignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
