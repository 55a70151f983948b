"""Command-line entry point: ``cvmim <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import DatasetConfig, build_dataset, save_dataset
from .evaluation import (HEADS, EvalResults, evaluate, extract_embeddings, raw_embeddings,
                         retrieve_neighbors, single_shot_protocol, write_results)
from .losses import FUSION_MODES
from .train import CheckpointError, TrainConfig, Trainer, load_checkpoint

SUBCOMMANDS = ("gen-data", "train", "eval", "retrieve", "oracle", "gradcheck", "ablate-fusion")


class ConfigError(ValueError):
    pass


@dataclass
class EvalOptions:
    head: str = "temporal_conv"
    fractions: list[float] = field(default_factory=lambda: [1.0, 0.1])
    retrieval_queries: int = 200
    baselines: bool = True

    def __post_init__(self):
        if self.head not in HEADS:
            raise ConfigError(f"eval.head: unknown head {self.head!r}; choose from {HEADS}")


@dataclass
class RunConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    checkpoint_every: int = 0
    out: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


def _section(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Strict JSON config: every level rejects unknown fields."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    data = dict(data)
    sections = {"dataset": DatasetConfig, "train": TrainConfig, "eval": EvalOptions}
    parsed = {name: _section(cls, data.pop(name, {}), f"{source}: {name}")
              for name, cls in sections.items()}
    top = _section(RunConfig, data, source)
    for name, value in parsed.items():
        setattr(top, name, value)
    return top


def load_config(path: str | None, seed: int | None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = parse_config(p.read_text(), str(p))
    if seed is not None:
        cfg.seed = seed
    cfg.train.seed = cfg.seed
    return cfg


def _resolve_out(args, cfg: RunConfig) -> RunConfig:
    if args.out is not None:
        cfg.out = args.out
    if cfg.out is None:
        raise ConfigError("no output directory: pass --out or set \"out\" in the config")
    return cfg


def prepare_out(out: str, force: bool, cfg: RunConfig | None = None) -> Path:
    """Create ``out``, refusing a non-empty directory without ``force``; write config.json first."""
    path = Path(out)
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    if cfg is not None:
        (path / "config.json").write_text(cfg.to_json() + "\n")
    return path


# ----------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args) -> int:
    cfg = _resolve_out(args, load_config(args.config, args.seed))
    out = prepare_out(cfg.out, args.force, cfg)
    ds = build_dataset(cfg.dataset)
    save_dataset(ds, out / "dataset")
    S, V, T = ds.poses.shape[:3]
    print(f"wrote {S} sequences x {V} views x {T} frames (+{len(ds.aug_poses)} augmented) to {out / 'dataset'}")
    return 0


def _train_run(cfg: RunConfig, out: Path, resume: str | None = None) -> Trainer:
    if resume is not None:
        trainer = load_checkpoint(resume)
        trainer.config.iterations = cfg.train.iterations
    else:
        trainer = Trainer(build_dataset(cfg.dataset), cfg.train)
    log, timing = out / "train.log.jsonl", out / "timing.jsonl"
    step = cfg.checkpoint_every
    while trainer.iteration < cfg.train.iterations:
        target = cfg.train.iterations if step <= 0 else min(cfg.train.iterations,
                                                            (trainer.iteration // step + 1) * step)
        trainer.run(target, log_path=log, timing_path=timing)
        if step > 0 and trainer.iteration < cfg.train.iterations:
            trainer.save(out / f"checkpoint_{trainer.iteration:08d}")
    trainer.save(out / "checkpoint")
    return trainer


def cmd_train(args) -> int:
    cfg = _resolve_out(args, load_config(args.config, args.seed))
    if args.checkpoint and not (Path(args.checkpoint) / "manifest.json").is_file():
        raise CheckpointError(f"checkpoint not found: {args.checkpoint}")
    out = prepare_out(cfg.out, args.force, cfg)
    trainer = _train_run(cfg, out, args.checkpoint)
    with open(out / "train.log.jsonl") as fh:
        last = json.loads(fh.readlines()[-1])
    print(f"trained {trainer.iteration} iterations; final e_loss {last['e_loss']:.6f}; "
          f"checkpoint at {out / 'checkpoint'}")
    return 0


def _require_checkpoint(path: str | None) -> str:
    if not path or not (Path(path) / "manifest.json").is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return path


def cmd_eval(args) -> int:
    ckpt = _require_checkpoint(args.checkpoint)
    cfg = _resolve_out(args, load_config(args.config, args.seed))
    trainer = load_checkpoint(ckpt)
    cfg.dataset = trainer.dataset.config
    cfg.train = trainer.config
    out = prepare_out(cfg.out, args.force, cfg)
    ds = trainer.dataset
    emb = extract_embeddings(trainer.nets.encoder, ds)
    emb = type(emb)(emb.z_p, emb.z_v, name=trainer.config.objective)
    opts = cfg.eval
    res = evaluate(emb, ds, opts.head, cfg.seed, tuple(opts.fractions), opts.retrieval_queries)
    if opts.baselines:
        raw = evaluate(raw_embeddings(ds), ds, opts.head, cfg.seed, tuple(opts.fractions))
        res.single_shot.update(raw.single_shot)
        res.fully_supervised.update(raw.fully_supervised)
    write_results(res, out)
    for name, m in sorted(res.single_shot.items()):
        print(f"single-shot grand average [{name}]: {100 * m.grand_average:.2f}")
    for name, a in sorted(res.fully_supervised.items()):
        print(f"fully-supervised [{name}]: {100 * a:.2f}")
    if res.probes:
        print("probes: " + ", ".join(f"{k}={v:.3f}" for k, v in sorted(res.probes.items())))
    if res.uniformity:
        print(f"max KS vs U(0,1): {res.uniformity['max_ks']:.4f}")
    return 0


def cmd_retrieve(args) -> int:
    ckpt = _require_checkpoint(args.checkpoint)
    trainer = load_checkpoint(ckpt)
    emb = extract_embeddings(trainer.nets.encoder, trainer.dataset)
    hits = retrieve_neighbors(emb, tuple(args.query), args.space, args.k, args.metric)
    labels = trainer.dataset.labels
    for rank, ((s, t, v), d) in enumerate(hits, 1):
        print(json.dumps({"rank": rank, "sequence": s, "frame": t, "view": v, "distance": d,
                          "label": int(labels[s])}))
    return 0


def cmd_oracle(args) -> int:
    from .oracle import verify_propositions
    from .sandwich import gaussian_sandwich, sandwich_holds

    report = {"propositions": verify_propositions(args.trials, args.seed)}
    if args.samples > 0:
        sw = gaussian_sandwich(samples=args.samples, seed=args.seed)
        sw["checks"] = sandwich_holds(sw)
        report["gaussian_bounds"] = sw
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        out = prepare_out(args.out, args.force, None)
        (out / "config.json").write_text(json.dumps(vars_clean(args), indent=1, sort_keys=True) + "\n")
        (out / "oracle.json").write_text(text + "\n")
    print(text)
    p = report["propositions"]
    ok = p["prop1_max_residual"] <= 1e-12 and p["dpi_violations"] == 0 \
        and min(p["eq4_margins"].values()) >= -1e-12
    if "gaussian_bounds" in report:
        ok = ok and all(report["gaussian_bounds"]["checks"].values())
    return 0 if ok else 1


def cmd_gradcheck(args) -> int:
    from .checks import gradcheck_suite

    cases = gradcheck_suite(seed=args.seed if args.seed is not None else 0,
                            max_coords=None if args.all_coords else args.max_coords)
    for c in cases:
        print(json.dumps(c.as_dict(), sort_keys=True))
    return 0 if all(c.passed for c in cases) else 1


def cmd_ablate_fusion(args) -> int:
    cfg = _resolve_out(args, load_config(args.config, args.seed))
    out = prepare_out(cfg.out, args.force, cfg)
    ds = build_dataset(cfg.dataset)
    rows = []
    for mode in FUSION_MODES:
        tc = TrainConfig(**{**asdict(cfg.train), "fusion": mode})
        sub = out / mode
        sub.mkdir()
        trainer = Trainer(ds, tc)
        trainer.run(log_path=sub / "train.log.jsonl", timing_path=sub / "timing.jsonl")
        trainer.save(sub / "checkpoint")
        emb = extract_embeddings(trainer.nets.encoder, ds)
        m = single_shot_protocol(emb, ds, cfg.eval.head, cfg.seed)
        write_results(EvalResults(single_shot={mode: m}), sub)
        rows.append({"fusion": mode, "grand_average": m.grand_average,
                     "row_averages": m.row_averages.tolist()})
    (out / "fusion_ablation.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")
    print("fusion               single-shot grand average")
    for r in rows:
        print(f"{r['fusion']:<20} {100 * r['grand_average']:.2f}")
    spread = np.ptp([r["grand_average"] for r in rows])
    print(f"spread: {100 * spread:.2f} points")
    return 0


def vars_clean(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvmim", description="View-disentangled 2D pose representations.")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="run seed (overrides the config)")
        if out:
            sp.add_argument("--out", help="output directory (overrides the config)")
            sp.add_argument("--force", action="store_true", help="allow a non-empty output directory")

    sp = sub.add_parser("gen-data", help="generate and save the synthetic multi-view dataset")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train an encoder; writes checkpoints and train.log.jsonl")
    common(sp)
    sp.add_argument("--checkpoint", help="resume from this checkpoint directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint; writes results.json and results.csv")
    common(sp)
    sp.add_argument("--checkpoint", help="checkpoint directory")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("retrieve", help="nearest neighbours of one (sequence, frame, view)")
    sp.add_argument("--checkpoint", help="checkpoint directory")
    sp.add_argument("--query", type=int, nargs=3, required=True, metavar=("SEQ", "FRAME", "VIEW"))
    sp.add_argument("--space", choices=("pose", "view"), default="pose")
    sp.add_argument("-k", type=int, default=5)
    sp.add_argument("--metric", choices=("l2", "cosine"), default="l2")
    sp.set_defaults(func=cmd_retrieve)

    sp = sub.add_parser("oracle", help="exact information identities and Gaussian estimator bounds")
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--samples", type=int, default=10_000,
                    help="samples per correlation for the estimator bounds (0 skips them)")
    sp.add_argument("--out", help="optional output directory")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every network")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-coords", type=int, default=12, help="coordinates probed per tensor")
    sp.add_argument("--all-coords", action="store_true", help="probe every coordinate (slow)")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("ablate-fusion", help="train each fusion mode and compare single-shot accuracy")
    common(sp)
    sp.set_defaults(func=cmd_ablate_fusion)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    if not argv or argv[0] not in SUBCOMMANDS:
        parser.print_usage(sys.stderr)
        if argv and not argv[0].startswith("-"):
            print(f"cvmim: error: unknown subcommand {argv[0]!r}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"cvmim: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"cvmim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
