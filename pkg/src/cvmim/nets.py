"""Encoder E, variational network Q, prior discriminator D and the MI critics.

Parameters live in :class:`ParamSet` containers (plain dicts of arrays plus
batch-norm running statistics).  Forward functions record onto a
:class:`~cvmim.autodiff.Tape`; ``trainable=False`` enters the weights as
constants so no gradient reaches them.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AutodiffError, BatchNormStats, Tape
from .data import POSE_DIM

Q_LOGVAR_MIN, Q_LOGVAR_MAX = -7.0, 7.0


class ParamSet:
    """Named float64 tensors and batch-norm statistics of one network."""

    kind = "params"

    def __init__(self, params: dict[str, np.ndarray], bn: dict[str, BatchNormStats] | None = None,
                 **hyper):
        self.params = params
        self.bn = bn or {}
        self.hyper = hyper

    def __getitem__(self, name):
        return self.params[name]

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self):
        return copy.deepcopy(self)

    def register(self, tape: Tape, trainable: bool = True, prefix: str | None = None) -> dict[str, int]:
        prefix = self.kind if prefix is None else prefix
        if trainable:
            return {k: tape.param(v, f"{prefix}.{k}") for k, v in self.params.items()}
        return {k: tape.const(v) for k, v in self.params.items()}

    def tensors(self) -> dict[str, np.ndarray]:
        """Every array that defines the network state, including running statistics."""
        out = {f"{self.kind}.{k}": v for k, v in self.params.items()}
        for k, st in self.bn.items():
            out[f"{self.kind}.{k}.running_mean"] = st.mean
            out[f"{self.kind}.{k}.running_var"] = st.var
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.params[k] = np.array(tensors[f"{self.kind}.{k}"], dtype=np.float64)
        for k, st in self.bn.items():
            st.mean = np.array(tensors[f"{self.kind}.{k}.running_mean"], dtype=np.float64)
            st.var = np.array(tensors[f"{self.kind}.{k}.running_var"], dtype=np.float64)


class EncoderParams(ParamSet):
    kind = "encoder"


class DecoderParams(ParamSet):
    kind = "decoder"


class QParams(ParamSet):
    kind = "q"


class DParams(ParamSet):
    kind = "disc"


class CriticParams(ParamSet):
    kind = "critic"


# ----------------------------------------------------------------------------
# initialisation

def _he(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / fan_in)
    return rng.uniform(-lim, lim, (fan_in, fan_out))


def _xavier(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


def _linear(p, name, rng, fan_in, fan_out, init, bias=True):
    # layers feeding batch norm carry no bias: the normalisation would cancel it
    p[f"{name}.w"] = init(rng, fan_in, fan_out)
    if bias:
        p[f"{name}.b"] = np.zeros((1, fan_out))


def _bn(p, bn, name, width):
    p[f"{name}.gamma"] = np.ones((1, width))
    p[f"{name}.beta"] = np.zeros((1, width))
    bn[name] = BatchNormStats.init(width)


def _residual_mlp(p, bn, rng, fan_in, hidden, blocks):
    _linear(p, "in", rng, fan_in, hidden, _he, bias=False)
    _bn(p, bn, "in.bn", hidden)
    for b in range(blocks):
        for k in range(2):
            _linear(p, f"block{b}.{k}", rng, hidden, hidden, _he, bias=False)
            _bn(p, bn, f"block{b}.{k}.bn", hidden)


def init_encoder(rng, input_dim=POSE_DIM, hidden=128, dim=32, blocks=2, dropout=0.25) -> EncoderParams:
    p, bn = {}, {}
    _residual_mlp(p, bn, rng, input_dim, hidden, blocks)
    _linear(p, "head_pose", rng, hidden, dim, _xavier)
    _linear(p, "head_view", rng, hidden, dim, _xavier)
    return EncoderParams(p, bn, input_dim=input_dim, hidden=hidden, dim=dim, blocks=blocks,
                         dropout=dropout)


def init_decoder(rng, dim=32, hidden=128, output_dim=POSE_DIM, blocks=2, dropout=0.25) -> DecoderParams:
    p, bn = {}, {}
    _residual_mlp(p, bn, rng, 2 * dim, hidden, blocks)
    _linear(p, "out", rng, hidden, output_dim, _xavier)
    return DecoderParams(p, bn, input_dim=2 * dim, hidden=hidden, output_dim=output_dim,
                         blocks=blocks, dropout=dropout)


def init_q(rng, dim=32, hidden=64) -> QParams:
    p, bn = {}, {}
    _linear(p, "l1", rng, dim, hidden, _he, bias=False)
    _bn(p, bn, "l1.bn", hidden)
    _linear(p, "l2", rng, hidden, 2 * dim, _xavier)
    return QParams(p, bn, dim=dim, hidden=hidden)


def init_disc(rng, dim=32, hidden=128) -> DParams:
    p = {}
    _linear(p, "l1", rng, 2 * dim, hidden, _he)
    _linear(p, "l2", rng, hidden, hidden, _he)
    _linear(p, "l3", rng, hidden, 1, _xavier)
    return DParams(p, dim=dim, hidden=hidden)


def init_critic(rng, dim_a, dim_b, hidden=128, out=64) -> CriticParams:
    p = {}
    _linear(p, "a1", rng, dim_a, hidden, _xavier)
    _linear(p, "a2", rng, hidden, out, _xavier)
    _linear(p, "b1", rng, dim_b, hidden, _xavier)
    _linear(p, "b2", rng, hidden, out, _xavier)
    return CriticParams(p, dim_a=dim_a, dim_b=dim_b, hidden=hidden, out=out)


# ----------------------------------------------------------------------------
# forward passes

def _lin(tape, ids, name, x):
    y = tape.matmul(x, ids[f"{name}.w"])
    return tape.add(y, ids[f"{name}.b"]) if f"{name}.b" in ids else y


def _bn_fwd(tape, ids, net, name, x, train, update_stats):
    return tape.batch_norm(x, ids[f"{name}.gamma"], ids[f"{name}.beta"],
                           train=train, stats=net.bn[name], update_stats=update_stats)


def _as_node(tape, x):
    return x if isinstance(x, (int, np.integer)) else tape.const(x)


def _width(tape, x):
    return tape.value(x).shape


def _residual_trunk(tape, net, ids, x, train, update_stats, stochastic=True):
    rate = net.hyper["dropout"] if stochastic else 0.0
    h = tape.relu(_bn_fwd(tape, ids, net, "in.bn", _lin(tape, ids, "in", x), train, update_stats))
    h = tape.dropout(h, rate=rate, train=train)
    for b in range(net.hyper["blocks"]):
        y = h
        for k in range(2):
            y = _bn_fwd(tape, ids, net, f"block{b}.{k}.bn", _lin(tape, ids, f"block{b}.{k}", y),
                        train, update_stats)
            y = tape.dropout(tape.relu(y), rate=rate, train=train)
        h = tape.add(h, y)
    return h


def encoder_forward(tape: Tape, enc: EncoderParams, x, train: bool = False,
                    trainable: bool = True, update_stats: bool = True, stochastic: bool = True):
    """Record E on ``tape``; returns node ids ``(z_p, z_v)``, each B x d in (0, 1).

    ``x`` is a B x 26 array or node id of flattened normalised 2D poses.
    Training mode needs B >= 2 and draws dropout masks from ``tape.rng``
    unless ``stochastic`` is off, which keeps batch statistics but skips dropout.
    """
    x = _as_node(tape, x)
    shape = _width(tape, x)
    if shape[1] != enc.hyper["input_dim"]:
        raise AutodiffError(f"encoder expects width {enc.hyper['input_dim']}, got {shape}")
    if train and shape[0] < 2:
        raise AutodiffError("encoder in training mode needs a batch of at least 2")
    if not np.all(np.isfinite(tape.value(x))):
        raise AutodiffError("encoder input has non-finite values")
    ids = enc.register(tape, trainable)
    h = _residual_trunk(tape, enc, ids, x, train, update_stats, stochastic)
    zp = tape.sigmoid(_lin(tape, ids, "head_pose", h))
    zv = tape.sigmoid(_lin(tape, ids, "head_view", h))
    return zp, zv


def decoder_forward(tape: Tape, dec: DecoderParams, z, train: bool = False,
                    trainable: bool = True, update_stats: bool = True) -> int:
    z = _as_node(tape, z)
    if _width(tape, z)[1] != dec.hyper["input_dim"]:
        raise AutodiffError(f"decoder expects width {dec.hyper['input_dim']}, got {_width(tape, z)}")
    ids = dec.register(tape, trainable)
    h = _residual_trunk(tape, dec, ids, z, train, update_stats)
    return _lin(tape, ids, "out", h)


def q_forward(tape: Tape, q: QParams, z_p, train: bool = True, trainable: bool = True,
              update_stats: bool = True):
    """Diagonal Gaussian q(z_v | z_p): returns node ids ``(mu, logvar)``.

    The log-variance is clamped to [-7, 7].
    """
    z_p = _as_node(tape, z_p)
    if _width(tape, z_p)[1] != q.hyper["dim"]:
        raise AutodiffError(f"Q expects width {q.hyper['dim']}, got {_width(tape, z_p)}")
    d = q.hyper["dim"]
    ids = q.register(tape, trainable)
    h = tape.elu(_bn_fwd(tape, ids, q, "l1.bn", _lin(tape, ids, "l1", z_p), train, update_stats))
    out = _lin(tape, ids, "l2", h)
    mu = tape.slice_cols(out, start=0, stop=d)
    logvar = tape.clip(tape.slice_cols(out, start=d, stop=2 * d), lo=Q_LOGVAR_MIN, hi=Q_LOGVAR_MAX)
    return mu, logvar


def prior_disc_forward(tape: Tape, disc: DParams, z, trainable: bool = True) -> int:
    """Logit of D for each row of ``z`` (B x 2d) -> B x 1."""
    z = _as_node(tape, z)
    if _width(tape, z)[1] != 2 * disc.hyper["dim"]:
        raise AutodiffError(f"D expects width {2 * disc.hyper['dim']}, got {_width(tape, z)}")
    ids = disc.register(tape, trainable)
    h = tape.relu(_lin(tape, ids, "l1", z))
    h = tape.relu(_lin(tape, ids, "l2", h))
    return _lin(tape, ids, "l3", h)


def critic_towers(tape: Tape, critic: CriticParams, a, b, trainable: bool = True):
    a, b = _as_node(tape, a), _as_node(tape, b)
    if _width(tape, a)[1] != critic.hyper["dim_a"] or _width(tape, b)[1] != critic.hyper["dim_b"]:
        raise AutodiffError(
            f"critic expects widths ({critic.hyper['dim_a']}, {critic.hyper['dim_b']}), "
            f"got {_width(tape, a)} and {_width(tape, b)}")
    ids = critic.register(tape, trainable)
    fa = _lin(tape, ids, "a2", tape.relu(_lin(tape, ids, "a1", a)))
    fb = _lin(tape, ids, "b2", tape.relu(_lin(tape, ids, "b1", b)))
    return fa, fb


def critic_forward(tape: Tape, critic: CriticParams, a, b, pairing: str = "all-pairs",
                   trainable: bool = True) -> int:
    """Encode-and-dot-product scores.

    ``aligned`` gives B x 1 scores of matching rows, ``all-pairs`` the
    B_a x B_b matrix whose diagonal holds the aligned scores.
    """
    fa, fb = critic_towers(tape, critic, a, b, trainable)
    if pairing == "aligned":
        if _width(tape, fa)[0] != _width(tape, fb)[0]:
            raise AutodiffError("aligned pairing needs equal batch sizes")
        return tape.sum_rows(tape.mul(fa, fb))
    if pairing == "all-pairs":
        return tape.matmul(fa, tape.transpose(fb))
    raise AutodiffError(f"unknown pairing {pairing!r}")


# ----------------------------------------------------------------------------
# numpy conveniences

def encode(enc: EncoderParams, x: np.ndarray, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode embeddings of ``x`` (N x 26) as arrays ``(z_p, z_v)``."""
    x = np.asarray(x, dtype=np.float64)
    width = enc.hyper["input_dim"]
    if x.ndim == 3 and x.shape[1:] == (width // 2, 2):
        x = x.reshape(-1, width)
    if x.ndim != 2 or x.shape[1] != width:
        raise AutodiffError(f"encoder expects N x {width} poses, got shape {x.shape}")
    zps, zvs = [], []
    for i in range(0, len(x), chunk):
        tape = Tape(checked=False)
        zp, zv = encoder_forward(tape, enc, x[i:i + chunk], train=False, trainable=False)
        zps.append(tape.value(zp))
        zvs.append(tape.value(zv))
    return np.concatenate(zps), np.concatenate(zvs)


@dataclass
class Networks:
    """Every trainable network of one CV-MIM model."""

    encoder: EncoderParams
    q: QParams
    disc: DParams
    critic_x: CriticParams  # L_MI(x; z_p fused z_v)
    critic_p: CriticParams  # L_MI(z_p; z_p+)
    fusion: str = "mixture_of_experts"
    extra: dict = field(default_factory=dict)

    def all(self) -> dict[str, ParamSet]:
        nets = {"encoder": self.encoder, "q": self.q, "disc": self.disc,
                "critic_x": self.critic_x, "critic_p": self.critic_p}
        nets.update(self.extra)
        return nets

    def num_params(self) -> dict[str, int]:
        return {k: v.num_params() for k, v in self.all().items()}


def fused_width(dim: int, fusion: str) -> int:
    return 2 * dim if fusion == "concat" else dim


def init_networks(rng: np.random.Generator, dim: int = 32, hidden: int = 128,
                  q_hidden: int = 64, d_hidden: int = 128, critic_hidden: int = 128,
                  critic_out: int = 64, fusion: str = "mixture_of_experts",
                  dropout: float = 0.25) -> Networks:
    enc = init_encoder(rng, hidden=hidden, dim=dim, dropout=dropout)
    q = init_q(rng, dim, q_hidden)
    disc = init_disc(rng, dim, d_hidden)
    cx = init_critic(rng, POSE_DIM, fused_width(dim, fusion), critic_hidden, critic_out)
    cx.kind = "critic_x"
    cp = init_critic(rng, dim, dim, critic_hidden, critic_out)
    cp.kind = "critic_p"
    return Networks(enc, q, disc, cx, cp, fusion)


def parameter_count(dim=32, hidden=128, q_hidden=64, d_hidden=128, critic_hidden=128,
                    critic_out=64, fusion="mixture_of_experts", input_dim=POSE_DIM, blocks=2) -> int:
    """Closed-form parameter count of :func:`init_networks` (running stats excluded)."""
    lin = lambda i, o: i * o + o  # noqa: E731
    enc = input_dim * hidden + 2 * hidden + blocks * 2 * (hidden * hidden + 2 * hidden) \
        + 2 * lin(hidden, dim)
    q = dim * q_hidden + 2 * q_hidden + lin(q_hidden, 2 * dim)
    disc = lin(2 * dim, d_hidden) + lin(d_hidden, d_hidden) + lin(d_hidden, 1)
    tower = lambda i: lin(i, critic_hidden) + lin(critic_hidden, critic_out)  # noqa: E731
    cx = tower(input_dim) + tower(fused_width(dim, fusion))
    cp = 2 * tower(dim)
    return enc + q + disc + cx + cp
