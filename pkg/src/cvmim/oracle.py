"""Exact information quantities on small discrete tables and Gaussian pairs.

Everything is in nats and computed by direct summation with 0 log 0 = 0.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import integrate

MAX_ALPHABET = 16
NAMES = ("x", "y", "z")


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteJoint:
    """Probability table over up to three variables named x, y, z (in axis order)."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if not 1 <= t.ndim <= 3:
            raise OracleError(f"joint must have 1 to 3 variables, got {t.ndim}")
        if any(s > MAX_ALPHABET or s < 1 for s in t.shape):
            raise OracleError(f"alphabet sizes must lie in [1, {MAX_ALPHABET}], got {t.shape}")
        if np.any(t < 0):
            raise OracleError("negative probability mass")
        if abs(t.sum() - 1.0) > 1e-12:
            raise OracleError(f"table is not normalised (sum = {t.sum()!r})")
        object.__setattr__(self, "table", t)

    @property
    def names(self) -> tuple[str, ...]:
        return NAMES[: self.table.ndim]

    def marginal(self, keep: tuple[str, ...]) -> np.ndarray:
        """Marginal over ``keep``, axes kept in x, y, z order (size-1 elsewhere)."""
        for k in keep:
            if k not in self.names:
                raise OracleError(f"unknown variable {k!r}; joint has {self.names}")
        drop = tuple(i for i, n in enumerate(self.names) if n not in keep)
        return self.table.sum(axis=drop, keepdims=True)


def _xlogy_ratio(p: np.ndarray, num: np.ndarray, den: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(np.broadcast_to(num, p.shape)[mask]
                                          / np.broadcast_to(den, p.shape)[mask])))


def entropy(joint: DiscreteJoint, variables: tuple[str, ...]) -> float:
    p = joint.marginal(variables)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def mutual_information(joint: DiscreteJoint, a: tuple[str, ...], b: tuple[str, ...],
                       given: tuple[str, ...] = ()) -> float:
    """I(a; b | given) by summing p log[p(abc) p(c) / (p(ac) p(bc))]."""
    if set(a) & set(b) and not given and set(a) == set(b):
        return entropy(joint, a)
    abc = tuple(dict.fromkeys(a + b + given))
    p_abc = joint.marginal(abc)
    p_ac = joint.marginal(tuple(dict.fromkeys(a + given)))
    p_bc = joint.marginal(tuple(dict.fromkeys(b + given)))
    p_c = joint.marginal(given) if given else np.ones((1,) * joint.table.ndim)
    return _xlogy_ratio(p_abc, p_abc * p_c, p_ac * p_bc)


_QUERY = re.compile(r"^\s*(H|MI|I)\s*\(\s*([^;|]+?)\s*(?:;\s*([^|]+?)\s*)?(?:\|\s*(.+?)\s*)?\)\s*$")


def _vars(text: str | None) -> tuple[str, ...]:
    if not text:
        return ()
    return tuple(v for v in re.split(r"[(),\s]+", text) if v)


def discrete_info(joint: DiscreteJoint, query: str) -> float:
    """Evaluate ``H(x)``, ``MI(x;y)``, ``I(x;y|z)`` or ``I(x;(y,z))`` style queries."""
    m = _QUERY.match(query)
    if not m:
        raise OracleError(f"cannot parse query {query!r}")
    kind, a, b, c = m.groups()
    a, b, c = _vars(a), _vars(b), _vars(c)
    for v in a + b + c:
        if v not in joint.names:
            raise OracleError(f"query names variable {v!r} absent from the joint {joint.names}")
    if kind == "H":
        if b:
            raise OracleError("entropy takes a single variable group")
        return entropy(joint, a)
    if not b:
        raise OracleError("mutual information needs two variable groups")
    return mutual_information(joint, a, b, c)


# ----------------------------------------------------------------------------
# Gaussian pair

def gaussian_mi(rho: float) -> float:
    """I(x; y) for unit-variance jointly Gaussian x, y with correlation ``rho``."""
    if not abs(rho) < 1.0:
        raise OracleError(f"|rho| must be < 1, got {rho}")
    return -0.5 * math.log1p(-rho * rho)


def gaussian_mi_quadrature(rho: float, limit: float = 12.0) -> float:
    """Same quantity by 2-D numerical integration of p log p / (p_x p_y)."""
    if not abs(rho) < 1.0:
        raise OracleError(f"|rho| must be < 1, got {rho}")
    det = 1.0 - rho * rho
    log_norm = -math.log(2.0 * math.pi) - 0.5 * math.log(det)

    def integrand(y, x):
        q = (x * x - 2.0 * rho * x * y + y * y) / det
        log_p = log_norm - 0.5 * q
        log_ratio = log_p + math.log(2.0 * math.pi) + 0.5 * (x * x + y * y)
        return math.exp(log_p) * log_ratio

    val, _ = integrate.dblquad(integrand, -limit, limit, -limit, limit, epsabs=1e-11, epsrel=1e-11)
    return val


# ----------------------------------------------------------------------------
# propositions

def prop1_joint(p_u: float, p_w: float, flip_y: float, flip_z: float) -> DiscreteJoint:
    """x = (u, w) with independent bits u, w; y and z are binary symmetric channels of u and w.

    Axes: x in {0..3} (index 2u + w), y in {0, 1}, z in {0, 1}.
    """
    pu = np.array([1.0 - p_u, p_u])
    pw = np.array([1.0 - p_w, p_w])
    chy = np.array([[1.0 - flip_y, flip_y], [flip_y, 1.0 - flip_y]])
    chz = np.array([[1.0 - flip_z, flip_z], [flip_z, 1.0 - flip_z]])
    t = np.einsum("u,w,uy,wz->uwyz", pu, pw, chy, chz).reshape(4, 2, 2)
    return DiscreteJoint(t / t.sum())


def premise_gaps(joint: DiscreteJoint) -> tuple[float, float]:
    """max |p(y,z) - p(y)p(z)| and max |p(y,z|x) - p(y|x)p(z|x)| by enumeration."""
    p = joint.table
    pyz = p.sum(axis=0)
    ind = np.abs(pyz - np.outer(pyz.sum(axis=1), pyz.sum(axis=0))).max()
    px = p.sum(axis=(1, 2))
    cond = 0.0
    for i in np.nonzero(px > 0)[0]:
        c = p[i] / px[i]
        cond = max(cond, np.abs(c - np.outer(c.sum(axis=1), c.sum(axis=0))).max())
    return float(ind), float(cond)


def _random_simplex(rng, shape):
    t = rng.random(shape)
    return t / t.sum()


def _random_channel(rng, n_in, n_out):
    m = rng.random((n_in, n_out))
    return m / m.sum(axis=1, keepdims=True)


def verify_propositions(trials: int = 1000, seed: int = 0) -> dict:
    """Numerical check of the decomposition identity and the DPI chain.

    Decomposition: on :func:`prop1_joint` with random parameters the residual
    |I(x;(y,z)) - I(x;y) - I(x;z)| must vanish.  ``eq3_max_residual`` repeats
    the check with entropies instead of the log-ratio sum.

    DPI: for a random p(x, y) and random channel z|x, the margin
    I(x;y) - I(z;y) must be non-negative.

    Bound chain on the decomposition construction: dropping the z-term
    (I(x;(y,z)) - I(x;y)) and bounding information by entropy
    (H(z) - I(x;z)) must both be non-negative.
    """
    if trials < 1:
        raise OracleError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    prop1_res = eq3_res = 0.0
    gap_ind = gap_cond = 0.0
    drop_margin = ent_margin = math.inf
    dpi_margins = []
    for _ in range(trials):
        j = prop1_joint(*rng.random(4))
        i_xyz = mutual_information(j, ("x",), ("y", "z"))
        i_xy = mutual_information(j, ("x",), ("y",))
        i_xz = mutual_information(j, ("x",), ("z",))
        prop1_res = max(prop1_res, abs(i_xyz - i_xy - i_xz))
        h = lambda *v: entropy(j, v)  # noqa: E731
        ent_form = (h("x") + h("y", "z") - h("x", "y", "z")) \
            - (h("x") + h("y") - h("x", "y")) - (h("x") + h("z") - h("x", "z"))
        eq3_res = max(eq3_res, abs(ent_form))
        gi, gc = premise_gaps(j)
        gap_ind, gap_cond = max(gap_ind, gi), max(gap_cond, gc)
        drop_margin = min(drop_margin, i_xyz - i_xy)
        ent_margin = min(ent_margin, h("z") - i_xz)

        nx, ny, nz = rng.integers(2, 7, size=3)
        pxy = _random_simplex(rng, (nx, ny))
        chan = _random_channel(rng, nx, nz)
        dj = DiscreteJoint(np.einsum("xy,xz->xyz", pxy, chan))
        dpi_margins.append(mutual_information(dj, ("x",), ("y",)) - mutual_information(dj, ("z",), ("y",)))
    dpi_margins = np.array(dpi_margins)
    return {
        "trials": trials,
        "seed": seed,
        "prop1_max_residual": prop1_res,
        "eq3_max_residual": eq3_res,
        "dpi_violations": int(np.sum(dpi_margins < -1e-12)),
        "dpi_min_margin": float(dpi_margins.min()),
        "eq4_margins": {"drop_term_min": drop_margin, "entropy_bound_min": ent_margin},
        "premise_max_independence_gap": gap_ind,
        "premise_max_conditional_gap": gap_cond,
    }
