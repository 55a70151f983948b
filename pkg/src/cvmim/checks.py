"""Finite-difference checks of every network through the loss that trains it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import GradCheckReport, grad_check
from .data import DatasetConfig, build_dataset
from .losses import LossWeights, full_objective, js_mi_all_pairs, fuse_values, loss_cross_recon, \
    loss_kl_q, loss_prior
from .nets import critic_forward, encode, init_decoder, init_networks
from .rng import make_rng
from .train import sample_training_batch

TOL_BN = 1e-4
TOL_PLAIN = 1e-5


@dataclass
class GradCheckCase:
    name: str
    report: GradCheckReport
    tol: float

    @property
    def passed(self) -> bool:
        return self.report.passed

    def as_dict(self) -> dict:
        return {"name": self.name, "tol": self.tol, "passed": self.passed,
                "max_rel_error": self.report.worst, "checked": sum(self.report.checked.values()),
                "per_tensor": self.report.max_rel_error}


def _params(*sets):
    out = {}
    for ps in sets:
        out.update({f"{ps.kind}.{k}": v for k, v in ps.params.items()})
    return out


def gradcheck_suite(seed: int = 0, batch: int = 16, h: float = 1e-6,
                    max_coords: int | None = 12, fusion: str = "mixture_of_experts") -> list[GradCheckCase]:
    """Encoder through the full objective, Q through its likelihood fit, D through the
    prior game, both critics through the JS loss and the decoder through cross reconstruction."""
    rng = make_rng(seed, 0x6C)
    ds = build_dataset(DatasetConfig(seqs_per_class=4, frames=8, seed=seed))
    b = sample_training_batch(ds, batch, rng, augment=True)
    nets = init_networks(rng, fusion=fusion)
    dec = init_decoder(rng)
    x, xp = b.x, b.x_pos
    zp, zv = encode(nets.encoder, x)
    w = LossWeights()
    kw = dict(h=h, seed=seed, max_coords=max_coords, coord_seed=seed)
    cases = []

    def enc_objective(tape, p):
        bundle, nodes = full_objective(tape, x, xp, nets, w, fusion, make_rng(seed, 1),
                                       include_aux=False, prior_dropout_free=True)
        return nodes.e_loss

    cases.append(GradCheckCase("encoder/full_objective",
                               grad_check(enc_objective, _params(nets.encoder), tol=TOL_BN, **kw),
                               TOL_BN))

    def q_fit(tape, p):
        return loss_kl_q(tape, zp, zv, nets.q)

    cases.append(GradCheckCase("q/likelihood", grad_check(q_fit, _params(nets.q), tol=TOL_BN, **kw),
                               TOL_BN))

    z = np.concatenate([zp, zv], axis=1)

    def d_game(tape, p):
        d_loss, _ = loss_prior(tape, z, nets.disc, make_rng(seed, 2), sides=("d",))
        return d_loss

    cases.append(GradCheckCase("disc/prior", grad_check(d_game, _params(nets.disc), tol=TOL_PLAIN, **kw),
                               TOL_PLAIN))

    fused = fuse_values(zp, zv, fusion)
    zpp, _ = encode(nets.encoder, xp)

    def critics(tape, p):
        a = js_mi_all_pairs(tape, critic_forward(tape, nets.critic_x, x, fused))
        c = js_mi_all_pairs(tape, critic_forward(tape, nets.critic_p, zp, zpp))
        return tape.add(a, c)

    cases.append(GradCheckCase("critics/js_mi",
                               grad_check(critics, _params(nets.critic_x, nets.critic_p),
                                          tol=TOL_PLAIN, **kw), TOL_PLAIN))

    def recon(tape, p):
        return loss_cross_recon(tape, x, xp, nets.encoder, dec, enc_trainable=False)

    cases.append(GradCheckCase("decoder/cross_recon", grad_check(recon, _params(dec), tol=TOL_BN, **kw),
                               TOL_BN))
    return cases
