"""AdaGrad, training batches, the alternating D/Q/E schedule and checkpoints."""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import Tape
from .data import NUM_JOINTS, POSE_DIM, DatasetConfig, MultiViewDataset, build_dataset, normalize, \
    project, sample_camera_angles
from .losses import (FUSION_MODES, LossBundle, LossError, LossWeights, full_objective, loss_cross_recon,
                     loss_kl_q, loss_prior)
from .nets import ParamSet, encoder_forward, init_decoder, init_networks
from .rng import STREAM_DATA, STREAM_INIT, STREAM_MODEL, make_rng, rng_from_json, rng_state_to_json

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


# ----------------------------------------------------------------------------
# optimiser

@dataclass
class AdaGradState:
    lr: float = 0.02
    eps: float = 1e-7
    initial_accumulator: float = 0.1
    acc: dict[str, np.ndarray] = field(default_factory=dict)


def adagrad_step(state: AdaGradState, params: dict[str, np.ndarray],
                 grads: dict[str, np.ndarray]) -> None:
    """In place: ``acc += g**2``; ``theta -= lr * g / (sqrt(acc) + eps)``."""
    for name, g in grads.items():
        theta = params[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        acc = state.acc.get(name)
        if acc is None:
            acc = np.full(theta.shape, state.initial_accumulator)
        acc = acc + g * g
        state.acc[name] = acc
        params[name] = theta - state.lr * g / (np.sqrt(acc) + state.eps)


# ----------------------------------------------------------------------------
# configuration

@dataclass
class TrainConfig:
    objective: str = "cvmim"  # or "cross_recon"
    batch_size: int = 64
    iterations: int = 20000
    seed: int = 0
    lr: float = 0.02
    eps: float = 1e-7
    initial_accumulator: float = 0.1
    mi_pose_weight: float = 5.0
    inter_weight: float = 0.5
    prior_weight: float = 1.0
    fusion: str = "mixture_of_experts"
    augment: bool = True
    saturating_prior: bool = False
    prior_dropout_free: bool = True
    d_steps: int = 1
    q_steps: int = 1
    e_steps: int = 1
    dim: int = 32
    hidden: int = 128
    q_hidden: int = 64
    d_hidden: int = 128
    critic_hidden: int = 128
    critic_out: int = 64
    dropout: float = 0.25
    checked: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion {self.fusion!r}; choose from {FUSION_MODES}")
        if self.objective not in ("cvmim", "cross_recon"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if min(self.d_steps, self.q_steps, self.e_steps) < 1:
            raise ValueError("step multipliers must be >= 1")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.mi_pose_weight, self.inter_weight, self.prior_weight)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**_strict_fields(cls, data, "train"))


def _strict_fields(cls, data: dict, where: str) -> dict:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"{where}: unknown field(s) {unknown}")
    return dict(data)


def dataset_config_from_dict(data: dict) -> DatasetConfig:
    return DatasetConfig(**_strict_fields(DatasetConfig, data, "dataset"))


# ----------------------------------------------------------------------------
# batches

@dataclass
class TrainBatch:
    x: np.ndarray          # B x 26
    x_pos: np.ndarray      # B x 26
    source: np.ndarray     # B x 2 (sequence id, frame), shared by both sides
    views: np.ndarray      # B x 2 base view ids, -1 where a random camera was used
    augmented: np.ndarray  # B bools


def sample_training_batch(dataset: MultiViewDataset, batch_size: int, rng: np.random.Generator,
                          augment: bool = True, sequences: list[int] | None = None) -> TrainBatch:
    """Positive pairs: two renders of the same 3D pose from distinct cameras.

    The 3D sources of a batch are drawn without replacement.  With
    ``augment``, each pair independently (probability 1/2) replaces one side,
    chosen at random, by a render through a freshly sampled camera.
    """
    V = dataset.num_views
    if V < 2:
        raise ValueError("dataset needs at least 2 views")
    seqs = np.asarray(dataset.splits["fully_supervised"].train_seqs if sequences is None else sequences)
    T = dataset.poses.shape[2]
    n_avail = len(seqs) * T
    if batch_size > n_avail:
        raise ValueError(f"batch of {batch_size} exceeds the {n_avail} distinct poses available")
    pick = rng.choice(n_avail, size=batch_size, replace=False)
    s, t = seqs[pick // T], pick % T
    v1 = rng.integers(0, V, size=batch_size)
    v2 = (v1 + rng.integers(1, V, size=batch_size)) % V
    x = dataset.poses[s, v1, t].reshape(batch_size, POSE_DIM)
    x_pos = dataset.poses[s, v2, t].reshape(batch_size, POSE_DIM)
    views = np.stack([v1, v2], axis=1)
    aug = np.zeros(batch_size, dtype=bool)
    if augment:
        aug = rng.random(batch_size) < 0.5
        side = rng.integers(0, 2, size=batch_size)
        angles = sample_camera_angles(rng, batch_size)
        k = np.nonzero(aug)[0]
        if len(k):
            cfg = dataset.config
            joints = np.stack([dataset.sequences[si].joints[ti] for si, ti in zip(s[k], t[k])])
            uv = normalize(project(joints, angles[k], cfg.distance, cfg.focal, cfg.orthographic))
            uv = uv.reshape(len(k), POSE_DIM)
            for j, row in enumerate(k):
                if side[row] == 0:
                    x[row] = uv[j]
                else:
                    x_pos[row] = uv[j]
                views[row, side[row]] = -1
    return TrainBatch(x, x_pos, np.stack([s, t], axis=1), views, aug)


# ----------------------------------------------------------------------------
# training

def _finite_or_raise(name: str, value: float):
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss in component {name!r}")


class Trainer:
    """Owns every piece of mutable training state.

    The E step updates the encoder and both critics (and the decoder for the
    cross-reconstruction objective); the D and Q steps update only their own
    network.
    """

    def __init__(self, dataset: MultiViewDataset, config: TrainConfig):
        self.dataset = dataset
        self.config = config
        init_rng = make_rng(config.seed, STREAM_INIT)
        self.nets = init_networks(init_rng, config.dim, config.hidden, config.q_hidden,
                                  config.d_hidden, config.critic_hidden, config.critic_out,
                                  config.fusion, config.dropout)
        if config.objective == "cross_recon":
            self.nets.extra["decoder"] = init_decoder(init_rng, config.dim, config.hidden,
                                                      dropout=config.dropout)
        self.data_rng = make_rng(config.seed, STREAM_DATA)
        self.model_rng = make_rng(config.seed, STREAM_MODEL)
        opt = lambda: AdaGradState(config.lr, config.eps, config.initial_accumulator)  # noqa: E731
        self.opt = {"disc": opt(), "q": opt(), "encoder": opt()}
        self.iteration = 0

    # groups of parameter sets updated together
    def group(self, name: str) -> list[ParamSet]:
        n = self.nets
        if name == "disc":
            return [n.disc]
        if name == "q":
            return [n.q]
        if self.config.objective == "cross_recon":
            return [n.encoder, n.extra["decoder"]]
        return [n.encoder, n.critic_x, n.critic_p]

    def _apply(self, group: str, tape: Tape, grads: dict[int, np.ndarray]):
        named = tape.named_grads(grads)
        params = {}
        for ps in self.group(group):
            for k in ps.params:
                params[f"{ps.kind}.{k}"] = ps.params[k]
        grads_g = {k: named[k] for k in params if k in named}
        adagrad_step(self.opt[group], params, grads_g)
        for ps in self.group(group):
            for k in ps.params:
                ps.params[k] = params[f"{ps.kind}.{k}"]

    def sample_batch(self) -> TrainBatch:
        return sample_training_batch(self.dataset, self.config.batch_size, self.data_rng,
                                     self.config.augment)

    def train_iteration(self, batch: TrainBatch | None = None) -> LossBundle:
        batch = self.sample_batch() if batch is None else batch
        if self.config.objective == "cross_recon":
            bundle = self._recon_step(batch)
        else:
            bundle = self._cvmim_step(batch)
        self.iteration += 1
        return bundle

    def _cvmim_step(self, batch: TrainBatch) -> LossBundle:
        cfg, nets = self.config, self.nets
        # embeddings for the D and Q steps; E is frozen for both
        tape = Tape(rng=self.model_rng, checked=cfg.checked)
        zp, zv = encoder_forward(tape, nets.encoder, np.concatenate([batch.x, batch.x_pos]),
                                 train=True, trainable=False, update_stats=False)
        zp, zv = tape.value(zp), tape.value(zv)
        z_fake = np.concatenate([zp, zv], axis=1)
        if cfg.prior_dropout_free:
            dp, dv = encoder_forward(tape, nets.encoder, np.concatenate([batch.x, batch.x_pos]),
                                     train=True, trainable=False, update_stats=False,
                                     stochastic=False)
            z_fake = np.concatenate([tape.value(dp), tape.value(dv)], axis=1)

        for _ in range(cfg.d_steps):
            tape = Tape(rng=self.model_rng, checked=cfg.checked)
            d_loss, _ = loss_prior(tape, z_fake, nets.disc, self.model_rng, sides=("d",))
            d_val = tape.item(d_loss)
            _finite_or_raise("d_loss", d_val)
            self._apply("disc", tape, tape.backward(d_loss))

        for _ in range(cfg.q_steps):
            tape = Tape(rng=self.model_rng, checked=cfg.checked)
            try:
                q_loss = loss_kl_q(tape, zp, zv, nets.q)
            except LossError as exc:
                raise TrainingError(f"non-finite loss in component 'q_loss': {exc}") from None
            q_val = tape.item(q_loss)
            _finite_or_raise("q_loss", q_val)
            self._apply("q", tape, tape.backward(q_loss))

        for _ in range(cfg.e_steps):
            tape = Tape(rng=self.model_rng, checked=cfg.checked)
            bundle, nodes = full_objective(tape, batch.x, batch.x_pos, nets, cfg.weights,
                                           cfg.fusion, self.model_rng, include_aux=False,
                                           saturating=cfg.saturating_prior,
                                           prior_dropout_free=cfg.prior_dropout_free)
            for k, v in bundle.components.items():
                _finite_or_raise(k, v)
            _finite_or_raise("e_loss", bundle.e_loss)
            self._apply("encoder", tape, tape.backward(nodes.e_loss))
        bundle.q_loss = q_val
        bundle.d_loss = d_val
        return bundle

    def _recon_step(self, batch: TrainBatch) -> LossBundle:
        cfg = self.config
        tape = Tape(rng=self.model_rng, checked=cfg.checked)
        loss = loss_cross_recon(tape, batch.x, batch.x_pos, self.nets.encoder,
                                self.nets.extra["decoder"])
        val = tape.item(loss)
        _finite_or_raise("recon", val)
        self._apply("encoder", tape, tape.backward(loss))
        return LossBundle(val, float("nan"), float("nan"), {"recon": val}, cfg.weights)

    def run(self, iterations: int | None = None, log_path: str | os.PathLike | None = None,
            timing_path: str | os.PathLike | None = None, callback=None) -> list[LossBundle]:
        """Train until ``iterations`` total iterations; append one JSON line per iteration."""
        target = self.config.iterations if iterations is None else iterations
        history = []
        log = open(log_path, "a") if log_path else None
        timing = open(timing_path, "a") if timing_path else None
        try:
            while self.iteration < target:
                t0 = time.perf_counter()
                bundle = self.train_iteration()
                history.append(bundle)
                if log:
                    log.write(json.dumps(log_record(self.iteration, bundle), sort_keys=True) + "\n")
                if timing:
                    ms = (time.perf_counter() - t0) * 1e3
                    timing.write(json.dumps({"iteration": self.iteration, "wall_ms": ms}) + "\n")
                if callback:
                    callback(self, bundle)
        finally:
            if log:
                log.close()
            if timing:
                timing.close()
        return history

    # -- persistence ---------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for ps in self.nets.all().values():
            out.update(ps.tensors())
        for g, st in self.opt.items():
            for k, v in st.acc.items():
                out[f"opt.{g}.{k}"] = v
        return out

    def save(self, path: str | os.PathLike) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path: str | os.PathLike, dataset: MultiViewDataset | None = None) -> "Trainer":
        return load_checkpoint(path, dataset)


def log_record(iteration: int, bundle: LossBundle) -> dict:
    rec = {"iteration": iteration}
    for k, v in bundle.as_dict().items():
        rec[k] = v if math.isfinite(v) else None
    return rec


def train(dataset: MultiViewDataset, config: TrainConfig, **kw) -> Trainer:
    trainer = Trainer(dataset, config)
    trainer.run(**kw)
    return trainer


# ----------------------------------------------------------------------------
# checkpoints: manifest.json + params.bin (little-endian float64)

def save_checkpoint(trainer: Trainer, path: str | os.PathLike) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = trainer.state_tensors()
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        blobs.append(arr.tobytes())
    blob = b"".join(blobs)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "iteration": trainer.iteration,
        "train_config": asdict(trainer.config),
        "dataset_config": asdict(trainer.dataset.config),
        "tensors": entries,
        "count": offset,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "rng": {"data": rng_state_to_json(trainer.data_rng),
                "model": rng_state_to_json(trainer.model_rng)},
    }
    tmp_bin, tmp_man = path / "params.bin.tmp", path / "manifest.json.tmp"
    tmp_bin.write_bytes(blob)
    with open(tmp_man, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    os.replace(tmp_bin, path / "params.bin")
    os.replace(tmp_man, path / "manifest.json")


def read_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    """Validated manifest and tensors; raises :class:`CheckpointError` before returning anything."""
    path = Path(path)
    if not (path / "manifest.json").is_file():
        raise CheckpointError(f"checkpoint not found at {path}")
    try:
        with open(path / "manifest.json") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from None
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} does not match supported version {CHECKPOINT_VERSION}")
    blob = (path / "params.bin").read_bytes()
    if len(blob) != 8 * manifest["count"]:
        raise CheckpointError(
            f"params.bin has {len(blob)} bytes, expected {8 * manifest['count']} (truncated or padded)")
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise CheckpointError("params.bin checksum mismatch")
    flat = np.frombuffer(blob, dtype="<f8")
    tensors = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        tensors[e["name"]] = flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    return manifest, tensors


def load_checkpoint(path: str | os.PathLike, dataset: MultiViewDataset | None = None) -> Trainer:
    manifest, tensors = read_checkpoint(path)
    config = TrainConfig.from_dict(manifest["train_config"])
    ds_cfg = dataset_config_from_dict(manifest["dataset_config"])
    if dataset is None:
        dataset = build_dataset(ds_cfg)
    elif asdict(dataset.config) != asdict(ds_cfg):
        raise CheckpointError("dataset configuration differs from the checkpoint's")
    trainer = Trainer(dataset, config)
    for ps in trainer.nets.all().values():
        ps.load_tensors(tensors)
    for g, st in trainer.opt.items():
        prefix = f"opt.{g}."
        st.acc = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    trainer.data_rng = rng_from_json(manifest["rng"]["data"])
    trainer.model_rng = rng_from_json(manifest["rng"]["model"])
    trainer.iteration = manifest["iteration"]
    return trainer


__all__ = [
    "AdaGradState", "CheckpointError", "TrainBatch", "TrainConfig", "Trainer", "TrainingError",
    "adagrad_step", "load_checkpoint", "read_checkpoint", "sample_training_batch",
    "save_checkpoint", "train", "NUM_JOINTS",
]
