"""Define-by-run reverse-mode automatic differentiation over 2-D float64 arrays.

A :class:`Tape` records every primitive application as a :class:`Node` in
insertion order, which is also a topological order.  ``backward`` walks the
tape once in reverse and accumulates vector-Jacobian products into each node.

Example::

    tape = Tape()
    w = tape.param(np.array([[3.0]]), "w")
    loss = tape.mean(tape.square(w))
    grads = tape.backward(loss)      # {w: [[6.0]]}

All values are 2-D ``numpy.float64`` arrays.  Scalars are ``1 x 1``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.special import expit

LOG_2PI = math.log(2.0 * math.pi)
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class AutodiffError(ValueError):
    """Raised for shape mismatches, invalid inputs and misuse of a tape."""


class NonDeterministicBuilder(AutodiffError):
    def __init__(self, node_id: int):
        super().__init__(f"builder is not deterministic: first differing node id {node_id}")
        self.node_id = node_id


class Node:
    __slots__ = ("id", "value", "grad", "op", "parents", "requires_grad", "attrs", "saved", "name")

    def __init__(self, id, value, op, parents, requires_grad, attrs=None, saved=None, name=None):
        self.id = id
        self.value = value
        self.grad = None
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self.attrs = attrs
        self.saved = saved
        self.name = name

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"


@dataclass
class BatchNormStats:
    """Running statistics of one batch-norm layer (EMA, momentum 0.9)."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def init(cls, width: int) -> "BatchNormStats":
        return cls(np.zeros((1, width)), np.ones((1, width)))


# ----------------------------------------------------------------------------
# primitive registry

@dataclass(frozen=True)
class Primitive:
    forward: Callable
    backward: Callable
    arity: int | None  # None = variadic


PRIMITIVES: dict[str, Primitive] = {}


def _primitive(name: str, arity: int | None):
    def register(cls):
        PRIMITIVES[name] = Primitive(cls.forward, cls.backward, arity)
        return cls
    return register


def _broadcast_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape:
        return
    if b.shape == (1, a.shape[1]) or a.shape == (1, b.shape[1]):
        return
    raise AutodiffError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


@_primitive("matmul", 2)
class _MatMul:
    @staticmethod
    def forward(tape, vals, attrs):
        a, b = vals
        if tape.checked and a.shape[1] != b.shape[0]:
            raise AutodiffError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
        return a @ b, None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        a, b = vals
        return g @ b.T, a.T @ g


@_primitive("add", 2)
class _Add:
    @staticmethod
    def forward(tape, vals, attrs):
        if tape.checked:
            _broadcast_shape(vals[0], vals[1], "add")
        return vals[0] + vals[1], None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return _unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)


@_primitive("sub", 2)
class _Sub:
    @staticmethod
    def forward(tape, vals, attrs):
        if tape.checked:
            _broadcast_shape(vals[0], vals[1], "sub")
        return vals[0] - vals[1], None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return _unbroadcast(g, vals[0].shape), _unbroadcast(-g, vals[1].shape)


@_primitive("mul", 2)
class _Mul:
    @staticmethod
    def forward(tape, vals, attrs):
        if tape.checked:
            _broadcast_shape(vals[0], vals[1], "mul")
        return vals[0] * vals[1], None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        a, b = vals
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@_primitive("scale", 1)
class _Scale:
    @staticmethod
    def forward(tape, vals, attrs):
        return vals[0] * attrs["c"], None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return (g * attrs["c"],)


@_primitive("neg", 1)
class _Neg:
    @staticmethod
    def forward(tape, vals, attrs):
        return -vals[0], None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return (-g,)


@_primitive("sigmoid", 1)
class _Sigmoid:
    @staticmethod
    def forward(tape, vals, attrs):
        return expit(vals[0]), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return (g * out * (1.0 - out),)


@_primitive("softplus", 1)
class _Softplus:
    @staticmethod
    def forward(tape, vals, attrs):
        return np.logaddexp(0.0, vals[0]), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return (g * expit(vals[0]),)


@_primitive("relu", 1)
class _Relu:
    @staticmethod
    def forward(tape, vals, attrs):
        return np.maximum(vals[0], 0.0), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return (g * (vals[0] > 0.0),)


@_primitive("elu", 1)
class _Elu:
    # alpha = 1
    @staticmethod
    def forward(tape, vals, attrs):
        x = vals[0]
        return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0))), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        x = vals[0]
        return (g * np.where(x > 0.0, 1.0, out + 1.0),)


@_primitive("log", 1)
class _Log:
    @staticmethod
    def forward(tape, vals, attrs):
        x = vals[0]
        if tape.checked and np.any(x <= 0.0):
            raise AutodiffError(f"log: non-positive input (min {x.min():.3g})")
        return np.log(x), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return (g / vals[0],)


@_primitive("exp", 1)
class _Exp:
    @staticmethod
    def forward(tape, vals, attrs):
        return np.exp(vals[0]), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return (g * out,)


@_primitive("square", 1)
class _Square:
    @staticmethod
    def forward(tape, vals, attrs):
        return vals[0] * vals[0], None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return (2.0 * g * vals[0],)


@_primitive("mean", 1)
class _Mean:
    @staticmethod
    def forward(tape, vals, attrs):
        return np.array([[vals[0].mean()]]), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        x = vals[0]
        return (np.full(x.shape, g[0, 0] / x.size),)


@_primitive("mean_cols", 1)
class _MeanCols:
    @staticmethod
    def forward(tape, vals, attrs):
        return vals[0].mean(axis=0, keepdims=True), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        x = vals[0]
        return (np.broadcast_to(g / x.shape[0], x.shape).copy(),)


@_primitive("sum", 1)
class _Sum:
    @staticmethod
    def forward(tape, vals, attrs):
        return np.array([[vals[0].sum()]]), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return (np.full(vals[0].shape, g[0, 0]),)


@_primitive("sum_rows", 1)
class _SumRows:
    @staticmethod
    def forward(tape, vals, attrs):
        return vals[0].sum(axis=1, keepdims=True), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return (np.broadcast_to(g, vals[0].shape).copy(),)


@_primitive("concat", None)
class _Concat:
    @staticmethod
    def forward(tape, vals, attrs):
        rows = {v.shape[0] for v in vals}
        if tape.checked and len(rows) != 1:
            raise AutodiffError(f"concat: row counts differ, shapes {[v.shape for v in vals]}")
        return np.concatenate(vals, axis=1), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        edges = np.cumsum([v.shape[1] for v in vals])[:-1]
        return tuple(np.split(g, edges, axis=1))


@_primitive("concat_rows", None)
class _ConcatRows:
    @staticmethod
    def forward(tape, vals, attrs):
        cols = {v.shape[1] for v in vals}
        if tape.checked and len(cols) != 1:
            raise AutodiffError(f"concat_rows: column counts differ, shapes {[v.shape for v in vals]}")
        return np.concatenate(vals, axis=0), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        edges = np.cumsum([v.shape[0] for v in vals])[:-1]
        return tuple(np.split(g, edges, axis=0))


@_primitive("slice_cols", 1)
class _SliceCols:
    @staticmethod
    def forward(tape, vals, attrs):
        x = vals[0]
        start, stop = attrs["start"], attrs["stop"]
        if tape.checked and not (0 <= start < stop <= x.shape[1]):
            raise AutodiffError(f"slice_cols: [{start}, {stop}) out of range for {x.shape}")
        return x[:, start:stop].copy(), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        gx = np.zeros_like(vals[0])
        gx[:, attrs["start"]:attrs["stop"]] = g
        return (gx,)


@_primitive("take_rows", 1)
class _TakeRows:
    @staticmethod
    def forward(tape, vals, attrs):
        idx = attrs["index"]
        if tape.checked and (idx.min() < 0 or idx.max() >= vals[0].shape[0]):
            raise AutodiffError(f"take_rows: index out of range for {vals[0].shape}")
        return vals[0][idx], None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        gx = np.zeros_like(vals[0])
        np.add.at(gx, attrs["index"], g)
        return (gx,)


@_primitive("transpose", 1)
class _Transpose:
    @staticmethod
    def forward(tape, vals, attrs):
        return vals[0].T.copy(), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return (g.T.copy(),)


@_primitive("clip", 1)
class _Clip:
    @staticmethod
    def forward(tape, vals, attrs):
        return np.clip(vals[0], attrs["lo"], attrs["hi"]), None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        x = vals[0]
        return (g * ((x >= attrs["lo"]) & (x <= attrs["hi"])),)


@_primitive("batch_norm", 3)
class _BatchNorm:
    """Per-column normalisation followed by ``gamma * xhat + beta``.

    attrs: ``train`` (bool), ``stats`` (:class:`BatchNormStats` or None),
    ``update_stats`` (bool, default True in training mode).
    """

    @staticmethod
    def forward(tape, vals, attrs):
        x, gamma, beta = vals
        if tape.checked and (gamma.shape != (1, x.shape[1]) or beta.shape != (1, x.shape[1])):
            raise AutodiffError(
                f"batch_norm: scale/shift must be {(1, x.shape[1])}, got {gamma.shape}, {beta.shape}")
        stats = attrs.get("stats")
        if attrs.get("train", True):
            if x.shape[0] < 2:
                raise AutodiffError("batch_norm: training mode needs at least 2 rows")
            mu = x.mean(axis=0, keepdims=True)
            var = x.var(axis=0, keepdims=True)
            if stats is not None and attrs.get("update_stats", True):
                stats.mean = BN_MOMENTUM * stats.mean + (1.0 - BN_MOMENTUM) * mu
                stats.var = BN_MOMENTUM * stats.var + (1.0 - BN_MOMENTUM) * var
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (x - mu) * inv_std
            return xhat * gamma + beta, (xhat, inv_std, True)
        if stats is None:
            raise AutodiffError("batch_norm: inference mode needs running statistics")
        inv_std = 1.0 / np.sqrt(stats.var + BN_EPS)
        xhat = (x - stats.mean) * inv_std
        return xhat * gamma + beta, (xhat, inv_std, False)

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        x, gamma, beta = vals
        xhat, inv_std, train = saved
        g_gamma = (g * xhat).sum(axis=0, keepdims=True)
        g_beta = g.sum(axis=0, keepdims=True)
        gxhat = g * gamma
        if train:
            n = x.shape[0]
            gx = (inv_std / n) * (n * gxhat - gxhat.sum(axis=0, keepdims=True)
                                  - xhat * (gxhat * xhat).sum(axis=0, keepdims=True))
        else:
            gx = gxhat * inv_std
        return gx, g_gamma, g_beta


@_primitive("dropout", 1)
class _Dropout:
    """Inverted dropout; the mask is drawn from the tape's generator."""

    @staticmethod
    def forward(tape, vals, attrs):
        x = vals[0]
        rate = attrs["rate"]
        if not attrs.get("train", True) or rate == 0.0:
            return x.copy(), None
        if not 0.0 <= rate < 1.0:
            raise AutodiffError(f"dropout: rate must be in [0, 1), got {rate}")
        if tape.rng is None:
            raise AutodiffError("dropout: tape has no random generator")
        mask = (tape.rng.random(x.shape) >= rate) / (1.0 - rate)
        return x * mask, mask

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        if saved is None:
            return (g,)
        return (g * saved,)


@_primitive("bce_logit", 1)
class _BceLogit:
    """Elementwise binary cross-entropy of ``sigmoid(logit)`` against ``attrs['target']``."""

    @staticmethod
    def forward(tape, vals, attrs):
        z = vals[0]
        t = attrs["target"]
        return np.logaddexp(0.0, z) - t * z, None

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        return (g * (expit(vals[0]) - attrs["target"]),)


@_primitive("gaussian_nll", 3)
class _GaussianNll:
    """Elementwise negative log-density of ``target`` under N(mu, exp(logvar))."""

    @staticmethod
    def forward(tape, vals, attrs):
        mu, logvar, t = vals
        if tape.checked and not (mu.shape == logvar.shape == t.shape):
            raise AutodiffError(
                f"gaussian_nll: shapes differ {mu.shape}, {logvar.shape}, {t.shape}")
        inv_var = np.exp(-logvar)
        r = t - mu
        return 0.5 * (LOG_2PI + logvar + r * r * inv_var), (r, inv_var)

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        r, inv_var = saved
        g_mu = -g * r * inv_var
        g_logvar = g * 0.5 * (1.0 - r * r * inv_var)
        return g_mu, g_logvar, -g_mu


@_primitive("softmax_xent", 1)
class _SoftmaxXent:
    """Mean cross-entropy of row-wise softmax against integer ``attrs['labels']``."""

    @staticmethod
    def forward(tape, vals, attrs):
        z = vals[0]
        labels = attrs["labels"]
        zs = z - z.max(axis=1, keepdims=True)
        logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
        loss = -logp[np.arange(z.shape[0]), labels].mean()
        return np.array([[loss]]), logp

    @staticmethod
    def backward(g, vals, out, saved, attrs):
        p = np.exp(saved)
        n = p.shape[0]
        p[np.arange(n), attrs["labels"]] -= 1.0
        return (g[0, 0] * p / n,)


# ----------------------------------------------------------------------------

class Tape:
    """Append-only record of a forward computation.

    Args:
        rng: generator used by stochastic primitives (dropout).
        checked: validate shapes, finiteness and log domains.  Turning it
            off skips those checks for throughput.
    """

    def __init__(self, rng: np.random.Generator | None = None, checked: bool = True):
        self.nodes: list[Node] = []
        self.rng = rng
        self.checked = checked
        self.consumed = False
        self.params: dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def _leaf(self, value, requires_grad, name=None) -> int:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise AutodiffError(f"values must be 2-D, got shape {value.shape}")
        if self.checked and not np.all(np.isfinite(value)):
            raise AutodiffError(f"non-finite value in leaf {name or len(self.nodes)}")
        node = Node(len(self.nodes), value, "leaf", (), requires_grad, name=name)
        self.nodes.append(node)
        return node.id

    def param(self, value, name: str | None = None) -> int:
        """Trainable leaf.  Registering the same array under the same name again
        returns the existing leaf, so a network applied twice shares weights."""
        if name is not None and name in self.params:
            nid = self.params[name]
            if self.nodes[nid].value is not value:
                raise AutodiffError(f"parameter name {name!r} already bound to a different array")
            return nid
        nid = self._leaf(value, True, name)
        if name is not None:
            self.params[name] = nid
        return nid

    def const(self, value) -> int:
        return self._leaf(value, False)

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value

    def item(self, nid: int) -> float:
        v = self.nodes[nid].value
        if v.shape != (1, 1):
            raise AutodiffError(f"item() needs a 1x1 node, got {v.shape}")
        return float(v[0, 0])

    def apply(self, op: str, *inputs: int, **attrs: Any) -> int:
        try:
            prim = PRIMITIVES[op]
        except KeyError:
            raise AutodiffError(f"unknown primitive {op!r}") from None
        if self.consumed:
            raise AutodiffError("tape already consumed by backward()")
        if prim.arity is not None and len(inputs) != prim.arity:
            raise AutodiffError(f"{op}: expected {prim.arity} inputs, got {len(inputs)}")
        parents = tuple(self.nodes[i] for i in inputs)
        vals = tuple(p.value for p in parents)
        out, saved = prim.forward(self, vals, attrs)
        if self.checked and not np.all(np.isfinite(out)):
            raise AutodiffError(f"{op}: produced non-finite values")
        rg = any(p.requires_grad for p in parents)
        node = Node(len(self.nodes), out, op, tuple(inputs), rg, attrs, saved)
        self.nodes.append(node)
        return node.id

    def __getattr__(self, name):
        if name in PRIMITIVES:
            return functools.partial(self.apply, name)
        raise AttributeError(name)

    def backward(self, loss: int) -> dict[int, np.ndarray]:
        """Populate ``grad`` on every node that depends on a parameter.

        Returns the gradients of the parameter leaves, keyed by node id.
        A tape can be differentiated once.
        """
        if self.consumed:
            raise AutodiffError("backward on a tape that was already consumed")
        root = self.nodes[loss]
        if root.value.shape != (1, 1):
            raise AutodiffError(f"loss must be 1x1, got {root.value.shape}")
        self.consumed = True
        for n in self.nodes:
            n.grad = None
        root.grad = np.ones((1, 1))
        for node in reversed(self.nodes[: loss + 1]):
            if node.grad is None or not node.requires_grad or node.op == "leaf":
                continue
            parents = [self.nodes[i] for i in node.parents]
            vals = tuple(p.value for p in parents)
            pgrads = PRIMITIVES[node.op].backward(node.grad, vals, node.value, node.saved, node.attrs)
            for p, g in zip(parents, pgrads):
                if g is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    p.grad = p.grad + g
        out = {}
        for n in self.nodes:
            if n.op == "leaf" and n.requires_grad:
                out[n.id] = n.grad if n.grad is not None else np.zeros_like(n.value)
        return out

    def named_grads(self, grads: dict[int, np.ndarray]) -> dict[str, np.ndarray]:
        return {name: grads[nid] for name, nid in self.params.items()}


def forward_primitive(tape: Tape, op: str, inputs, attrs: dict | None = None) -> int:
    return tape.apply(op, *inputs, **(attrs or {}))


def backward(tape: Tape, loss: int) -> dict[int, np.ndarray]:
    return tape.backward(loss)


# ----------------------------------------------------------------------------
# finite-difference checking

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    failures: dict[str, list[tuple]] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    tol: float = 0.0

    @property
    def passed(self) -> bool:
        return not any(self.failures.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(builder: Callable[[Tape, dict], int], params: dict[str, np.ndarray],
               h: float = 1e-6, tol: float = 1e-5, *, seed: int = 0,
               max_coords: int | None = None, coord_seed: int = 0) -> GradCheckReport:
    """Compare ``backward`` against central differences.

    ``builder(tape, params)`` must register every entry of ``params`` through
    ``tape.param(value, name)`` and return the id of a scalar loss.  Each
    evaluation gets a fresh tape whose generator is seeded with ``seed`` so
    dropout masks repeat.  ``max_coords`` limits the number of coordinates
    probed per parameter (chosen reproducibly from ``coord_seed``).
    """
    if h <= 0:
        raise ValueError("h must be positive")

    def run(p):
        tape = Tape(rng=np.random.default_rng(seed))
        loss = builder(tape, p)
        return tape, loss

    tape_a, loss_a = run(params)
    tape_b, loss_b = run(params)
    if len(tape_a) != len(tape_b):
        raise NonDeterministicBuilder(min(len(tape_a), len(tape_b)))
    for na, nb in zip(tape_a.nodes, tape_b.nodes):
        if na.value.shape != nb.value.shape or not np.array_equal(na.value, nb.value):
            raise NonDeterministicBuilder(na.id)

    grads = tape_a.named_grads(tape_a.backward(loss_a))
    missing = set(params) - set(grads)
    if missing:
        raise AutodiffError(f"builder did not register parameters {sorted(missing)}")

    picker = np.random.default_rng(coord_seed)
    report = GradCheckReport(max_rel_error={}, tol=tol)
    for name, arr in params.items():
        if not arr.flags.c_contiguous:
            raise AutodiffError(f"parameter {name!r} must be C-contiguous for in-place probing")
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(picker.choice(flat.size, size=max_coords, replace=False))
        analytic = grads[name].reshape(-1)
        worst = 0.0
        bad = []
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            tp, lp = run(params)
            fp = tp.item(lp)
            flat[c] = orig - h
            tm, lm = run(params)
            fm = tm.item(lm)
            flat[c] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = _rel_error(analytic[c], numeric)
            worst = max(worst, err)
            if err > tol:
                bad.append((int(c), float(analytic[c]), float(numeric), err))
        report.max_rel_error[name] = worst
        report.failures[name] = bad
        report.checked[name] = len(coords)
    return report
