"""Loss terms of the cross-view MI objective.

Tape-level functions take a :class:`~cvmim.autodiff.Tape` first and return
node ids; the ``*_value`` helpers evaluate the same expressions on plain arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .nets import (DecoderParams, DParams, EncoderParams, Networks, QParams,
                   critic_forward, decoder_forward, encoder_forward, prior_disc_forward, q_forward)

FUSION_MODES = ("concat", "product_of_experts", "mixture_of_experts")


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    mi_pose: float = 5.0   # lambda_1
    inter: float = 0.5     # lambda_2
    prior: float = 1.0     # lambda_3

    def __post_init__(self):
        for k in ("mi_pose", "inter", "prior"):
            if getattr(self, k) < 0:
                raise LossError(f"loss weight {k} must be non-negative")

    def check_positive(self):
        if min(self.mi_pose, self.inter, self.prior) <= 0:
            raise LossError("loss weights must be strictly positive")


@dataclass
class LossBundle:
    e_loss: float
    q_loss: float
    d_loss: float
    components: dict[str, float] = field(default_factory=dict)
    weights: LossWeights = field(default_factory=LossWeights)

    def recombine(self) -> float:
        c, w = self.components, self.weights
        return c["mi_x"] + w.mi_pose * c["mi_pose"] + w.inter * c["inter"] + w.prior * c["prior_e"]

    def as_dict(self) -> dict[str, float]:
        return {"e_loss": self.e_loss, "q_loss": self.q_loss, "d_loss": self.d_loss,
                **self.components}


# ----------------------------------------------------------------------------
# Jensen-Shannon MI

def js_mi(tape: Tape, pos: int, neg: int) -> int:
    """mean(softplus(-pos)) + mean(softplus(neg)) over arbitrary-shaped score nodes."""
    if tape.value(pos).size == 0 or tape.value(neg).size == 0:
        raise LossError("loss_js_mi needs at least one positive and one negative score")
    return tape.add(tape.mean(tape.softplus(tape.neg(pos))), tape.mean(tape.softplus(neg)))


def js_mi_all_pairs(tape: Tape, scores: int) -> int:
    """JS loss on a B x B score matrix: diagonal positives, off-diagonal negatives."""
    b = tape.value(scores).shape[0]
    if b < 2 or tape.value(scores).shape != (b, b):
        raise LossError(f"all-pairs scores must be square with B >= 2, got {tape.value(scores).shape}")
    eye = np.eye(b)
    pos = tape.scale(tape.sum(tape.mul(tape.softplus(tape.neg(scores)), tape.const(eye))), c=1.0 / b)
    neg = tape.scale(tape.sum(tape.mul(tape.softplus(scores), tape.const(1.0 - eye))),
                     c=1.0 / (b * (b - 1)))
    return tape.add(pos, neg)


def loss_js_mi(pos_scores, neg_scores) -> float:
    pos = np.atleast_2d(np.asarray(pos_scores, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(neg_scores, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise LossError("loss_js_mi needs at least one positive and one negative score")
    tape = Tape(checked=False)
    return tape.item(js_mi(tape, tape.const(pos), tape.const(neg)))


def nwj_estimate(pos_scores: np.ndarray, neg_scores: np.ndarray) -> tuple[float, float]:
    """MI lower bound E_joint[f] + 1 - E_marginal[exp f] and its standard error."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    eneg = np.exp(np.asarray(neg_scores, dtype=np.float64).ravel())
    est = pos.mean() + 1.0 - eneg.mean()
    se = math.sqrt(pos.var(ddof=1) / pos.size + eneg.var(ddof=1) / eneg.size)
    return float(est), se


# ----------------------------------------------------------------------------
# disentanglement: CLUB-style upper bound and the MLE fit of Q

def _check_shuffle(shuffle, b):
    shuffle = np.asarray(shuffle)
    if b < 2:
        raise LossError("loss_inter needs a batch of at least 2")
    if shuffle.shape != (b,) or not np.array_equal(np.sort(shuffle), np.arange(b)):
        raise LossError("shuffle must be a permutation of the batch indices")
    if np.array_equal(shuffle, np.arange(b)):
        raise LossError("identity shuffle: negatives would equal positives")
    return shuffle


def loss_inter(tape: Tape, z_p, z_v, q: QParams, shuffle, q_train: bool = True) -> int:
    """mean log q(z_v|z_p) - mean log q(z_v[shuffle]|z_p), with Q's weights frozen."""
    z_p = z_p if isinstance(z_p, (int, np.integer)) else tape.const(z_p)
    z_v = z_v if isinstance(z_v, (int, np.integer)) else tape.const(z_v)
    b = tape.value(z_p).shape[0]
    shuffle = _check_shuffle(shuffle, b)
    mu, logvar = q_forward(tape, q, z_p, train=q_train, trainable=False, update_stats=False)
    pos_nll = tape.gaussian_nll(mu, logvar, z_v)
    neg_nll = tape.gaussian_nll(mu, logvar, tape.take_rows(z_v, index=shuffle))
    return tape.scale(tape.sub(tape.sum(neg_nll), tape.sum(pos_nll)), c=1.0 / b)


def loss_kl_q(tape: Tape, z_p: np.ndarray, z_v: np.ndarray, q: QParams, train: bool = True,
              trainable: bool = True) -> int:
    """Negative mean diagonal-Gaussian log-likelihood of z_v under q(.|z_p).

    Minimising it is the maximum-likelihood fit of Q; embeddings enter as
    constants.
    """
    z_p = np.asarray(z_p, dtype=np.float64)
    z_v = np.asarray(z_v, dtype=np.float64)
    if z_p.shape[0] < 1:
        raise LossError("loss_kl_q needs at least one sample")
    mu, logvar = q_forward(tape, q, tape.const(z_p), train=train, trainable=trainable)
    if not (np.all(np.isfinite(tape.value(mu))) and np.all(np.isfinite(tape.value(logvar)))):
        raise LossError("Q produced non-finite mean or log-variance")
    nll = tape.gaussian_nll(mu, logvar, tape.const(z_v))
    return tape.scale(tape.sum(nll), c=1.0 / z_p.shape[0])


def gaussian_log_density(mu: np.ndarray, logvar: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-wise log N(x; mu, diag(exp(logvar))) by direct evaluation."""
    var = np.exp(logvar)
    return (-0.5 * np.log(2.0 * np.pi * var) - (x - mu) ** 2 / (2.0 * var)).sum(axis=1)


# ----------------------------------------------------------------------------
# prior matching

def loss_prior(tape: Tape, z_fake, disc: DParams, rng: np.random.Generator | None = None,
               disc_trainable: bool = True, saturating: bool = False, sides=("d", "e")):
    """Adversarial matching of ``z_fake`` (B x 2d) to U(0, 1)^{2d}.

    Returns ``(d_loss, e_loss)`` node ids (``None`` for a side not requested):
    ``d_loss = -mean log D(real) - mean log(1 - D(fake))`` and, for the
    encoder, ``-mean log D(fake)`` (or the literal ``mean log(1 - D(fake))``
    when ``saturating``).
    """
    z_fake = z_fake if isinstance(z_fake, (int, np.integer)) else tape.const(z_fake)
    b = tape.value(z_fake).shape[0]
    if b == 0:
        raise LossError("loss_prior needs a non-empty batch")
    fake_logit = prior_disc_forward(tape, disc, z_fake, trainable=disc_trainable)
    d_loss = e_loss = None
    if "d" in sides:
        if rng is None:
            raise LossError("loss_prior needs a generator for prior samples")
        z_real = rng.random((b, tape.value(z_fake).shape[1]))
        real_logit = prior_disc_forward(tape, disc, tape.const(z_real), trainable=disc_trainable)
        d_loss = tape.add(tape.mean(tape.bce_logit(real_logit, target=1.0)),
                          tape.mean(tape.bce_logit(fake_logit, target=0.0)))
    if "e" in sides:
        if saturating:
            e_loss = tape.neg(tape.mean(tape.softplus(fake_logit)))
        else:
            e_loss = tape.mean(tape.bce_logit(fake_logit, target=1.0))
    return d_loss, e_loss


# ----------------------------------------------------------------------------
# fusion and the assembled objective

def fuse(tape: Tape, z_p: int, z_v: int, mode: str) -> int:
    if tape.value(z_p).shape != tape.value(z_v).shape:
        raise LossError(f"fuse: shapes differ {tape.value(z_p).shape} vs {tape.value(z_v).shape}")
    if mode == "concat":
        return tape.concat(z_p, z_v)
    if mode == "product_of_experts":
        return tape.mul(z_p, z_v)
    if mode == "mixture_of_experts":
        return tape.scale(tape.add(z_p, z_v), c=0.5)
    raise LossError(f"unknown fusion mode {mode!r}")


def fuse_values(z_p: np.ndarray, z_v: np.ndarray, mode: str) -> np.ndarray:
    tape = Tape(checked=False)
    return tape.value(fuse(tape, tape.const(z_p), tape.const(z_v), mode)).copy()


def derangement(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform random permutation of range(n) with no fixed points (n >= 2)."""
    if n < 2:
        raise LossError("a derangement needs n >= 2")
    while True:
        p = rng.permutation(n)
        if not np.any(p == np.arange(n)):
            return p


@dataclass
class ObjectiveNodes:
    """Node ids of one recorded objective, for callers that differentiate it."""

    e_loss: int
    terms: dict[str, int]
    z_p: int
    z_v: int
    z_p_pos: int
    z_v_pos: int


def full_objective(tape: Tape, x: np.ndarray, x_pos: np.ndarray, nets: Networks,
                   weights: LossWeights, fusion: str, rng: np.random.Generator,
                   train: bool = True, include_aux: bool = True,
                   saturating: bool = False,
                   prior_dropout_free: bool = False) -> tuple[LossBundle, ObjectiveNodes]:
    """Record the encoder objective on ``tape`` and evaluate the Q and D losses.

    Encoder and critics are trainable leaves; Q and D enter as constants.
    ``rng`` supplies the L_inter shuffle and, with ``include_aux``, the prior
    samples for the discriminator loss.  With ``prior_dropout_free`` the prior
    term sees a second encoder pass without dropout, the embeddings that are
    later frozen for downstream use.
    """
    x = np.asarray(x, dtype=np.float64)
    x_pos = np.asarray(x_pos, dtype=np.float64)
    b = x.shape[0]
    if b < 2 or x_pos.shape != x.shape:
        raise LossError(f"full objective needs aligned batches with B >= 2, got {x.shape}, {x_pos.shape}")
    split_prior = prior_dropout_free and train
    # running statistics come from the dropout-free pass when there is one
    zp_all, zv_all = encoder_forward(tape, nets.encoder, np.concatenate([x, x_pos]), train=train,
                                     update_stats=not split_prior)
    first, second = np.arange(b), np.arange(b, 2 * b)
    z_p = tape.take_rows(zp_all, index=first)
    z_v = tape.take_rows(zv_all, index=first)
    z_p_pos = tape.take_rows(zp_all, index=second)
    z_v_pos = tape.take_rows(zv_all, index=second)

    fused = fuse(tape, z_p, z_v, fusion)
    mi_x = js_mi_all_pairs(tape, critic_forward(tape, nets.critic_x, tape.const(x), fused))
    mi_p = js_mi_all_pairs(tape, critic_forward(tape, nets.critic_p, z_p, z_p_pos))
    inter = loss_inter(tape, z_p, z_v, nets.q, derangement(rng, b))
    z_prior = tape.concat(z_p, z_v)
    if split_prior:
        zp_det, zv_det = encoder_forward(tape, nets.encoder, np.concatenate([x, x_pos]), train=True,
                                         stochastic=False)
        z_prior = tape.take_rows(tape.concat(zp_det, zv_det), index=first)
    _, prior_e = loss_prior(tape, z_prior, nets.disc, disc_trainable=False,
                            saturating=saturating, sides=("e",))
    e = tape.add(mi_x, tape.scale(mi_p, c=weights.mi_pose))
    e = tape.add(e, tape.scale(inter, c=weights.inter))
    e = tape.add(e, tape.scale(prior_e, c=weights.prior))

    terms = {"mi_x": mi_x, "mi_pose": mi_p, "inter": inter, "prior_e": prior_e}
    components = {k: tape.item(v) for k, v in terms.items()}
    q_val = d_val = float("nan")
    if include_aux:
        zp_val, zv_val = tape.value(z_p), tape.value(z_v)
        aux = Tape(rng=None, checked=tape.checked)
        q_val = aux.item(loss_kl_q(aux, zp_val, zv_val, nets.q, train=train, trainable=False))
        d_node, _ = loss_prior(aux, tape.value(z_prior), nets.disc, rng,
                               disc_trainable=False, sides=("d",))
        d_val = aux.item(d_node)
    bundle = LossBundle(tape.item(e), q_val, d_val, components, weights)
    return bundle, ObjectiveNodes(e, terms, z_p, z_v, z_p_pos, z_v_pos)


# ----------------------------------------------------------------------------
# cross-reconstruction baseline

def loss_cross_recon(tape: Tape, x: np.ndarray, x_pos: np.ndarray, enc: EncoderParams,
                     dec: DecoderParams, train: bool = True, enc_trainable: bool = True,
                     dec_trainable: bool = True) -> int:
    """||x - G(z_p, z_v)||^2 + ||x - G(z_p+, z_v)||^2 averaged over the batch."""
    x = np.asarray(x, dtype=np.float64)
    x_pos = np.asarray(x_pos, dtype=np.float64)
    if x.shape != x_pos.shape or x.ndim != 2:
        raise LossError(f"cross reconstruction needs aligned batches, got {x.shape}, {x_pos.shape}")
    if dec.hyper["output_dim"] != x.shape[1] or dec.hyper["input_dim"] != 2 * enc.hyper["dim"]:
        raise LossError("decoder widths do not match the encoder and inputs")
    b = x.shape[0]
    zp_all, zv_all = encoder_forward(tape, enc, np.concatenate([x, x_pos]), train=train,
                                     trainable=enc_trainable)
    first, second = np.arange(b), np.arange(b, 2 * b)
    z_p, z_v = tape.take_rows(zp_all, index=first), tape.take_rows(zv_all, index=first)
    z_p_pos = tape.take_rows(zp_all, index=second)
    codes = tape.concat_rows(tape.concat(z_p, z_v), tape.concat(z_p_pos, z_v))
    recon = decoder_forward(tape, dec, codes, train=train, trainable=dec_trainable)
    target = tape.const(np.concatenate([x, x]))
    return tape.scale(tape.sum(tape.square(tape.sub(target, recon))), c=1.0 / b)


__all__ = [
    "FUSION_MODES", "LossBundle", "LossError", "LossWeights", "derangement", "full_objective",
    "fuse", "fuse_values", "gaussian_log_density", "js_mi", "js_mi_all_pairs", "loss_cross_recon",
    "loss_inter", "loss_js_mi", "loss_kl_q", "loss_prior", "nwj_estimate",
]
