"""Frozen-encoder evaluation: action heads, cross-view protocols, retrieval and probes."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from sklearn.linear_model import LogisticRegression

from .autodiff import Tape
from .data import POSE_DIM, MultiViewDataset
from .nets import EncoderParams, encode
from .rng import STREAM_EVAL, make_rng
from .train import AdaGradState, adagrad_step

HEADS = ("linear", "temporal_conv")


class EvaluationError(ValueError):
    pass


# ----------------------------------------------------------------------------
# embeddings

@dataclass(frozen=True)
class FrozenEmbeddings:
    """Per-frame features for every (sequence, frame, view) of a dataset.

    ``z_p`` and ``z_v`` have shape (S, V, T, d); ``z_v`` is ``None`` for
    feature sets without a view half (the raw-pose baseline).  Arrays are
    read-only.
    """

    z_p: np.ndarray
    z_v: np.ndarray | None = None
    name: str = "cvmim"

    def __post_init__(self):
        for arr in (self.z_p, self.z_v):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.z_p.shape[:3]

    def __len__(self):
        s, v, t = self.shape
        return s * v * t

    def keys(self) -> np.ndarray:
        """All keys (sequence, frame, view) in lexicographic order, as an (N, 3) array."""
        s, v, t = self.shape
        grid = np.meshgrid(np.arange(s), np.arange(t), np.arange(v), indexing="ij")
        return np.stack(grid, -1).reshape(-1, 3)

    def space(self, which: str) -> np.ndarray:
        """Features in key order: (N, d)."""
        arr = self.z_p if which == "pose" else self.z_v if which == "view" else None
        if arr is None:
            raise EvaluationError(f"no {which!r} space in {self.name} embeddings")
        return arr.transpose(0, 2, 1, 3).reshape(len(self), -1)


def extract_embeddings(encoder: EncoderParams, dataset: MultiViewDataset) -> FrozenEmbeddings:
    if encoder.hyper["input_dim"] != POSE_DIM:
        raise EvaluationError(
            f"encoder input width {encoder.hyper['input_dim']} does not match pose width {POSE_DIM}")
    S, V, T = dataset.poses.shape[:3]
    zp, zv = encode(encoder, dataset.poses.reshape(-1, POSE_DIM))
    d = zp.shape[1]
    return FrozenEmbeddings(zp.reshape(S, V, T, d), zv.reshape(S, V, T, d))


def raw_embeddings(dataset: MultiViewDataset) -> FrozenEmbeddings:
    S, V, T = dataset.poses.shape[:3]
    return FrozenEmbeddings(dataset.poses.reshape(S, V, T, POSE_DIM).copy(), None, name="raw2d")


# ----------------------------------------------------------------------------
# downstream heads

def _standardizer(x: np.ndarray):
    mu = x.reshape(-1, x.shape[-1]).mean(axis=0)
    sd = x.reshape(-1, x.shape[-1]).std(axis=0) + 1e-8
    return lambda a: (a - mu) / sd


class LinearHead:
    """Multinomial logistic regression on per-sequence mean and std of the frame features."""

    def __init__(self, seed: int = 0, C: float = 1.0):
        self.seed = seed
        self.C = C

    @staticmethod
    def _pool(x):
        return np.concatenate([x.mean(axis=1), x.std(axis=1)], axis=1)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "LinearHead":
        self._scale = _standardizer(x)
        self.model = LogisticRegression(C=self.C, max_iter=2000, random_state=self.seed)
        self.model.fit(self._pool(self._scale(x)), y)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.model.predict(self._pool(self._scale(x)))


class TemporalConvHead:
    """Two 1-D convolutions (kernel 7, stride 2, ReLU, dropout 0.5), global average pooling, softmax.

    Sequences are (N, T, F); convolutions run as im2col matrix products on the
    tape and the head is trained with AdaGrad.
    """

    def __init__(self, num_classes: int, width: int = 64, kernel: int = 7, stride: int = 2,
                 dropout: float = 0.5, steps: int = 300, lr: float = 0.05, seed: int = 0):
        self.num_classes = num_classes
        self.width, self.kernel, self.stride = width, kernel, stride
        self.dropout, self.steps, self.lr, self.seed = dropout, steps, lr, seed

    def _out_len(self, n):
        return (n - self.kernel) // self.stride + 1

    def _im2col_index(self, n_seq, length):
        """Row indices for each kernel tap, rows laid out sequence-major."""
        out = self._out_len(length)
        if out < 1:
            raise EvaluationError(f"sequence of length {length} too short for kernel {self.kernel}")
        base = (np.arange(n_seq)[:, None] * length + np.arange(out)[None, :] * self.stride).ravel()
        return [base + k for k in range(self.kernel)], out

    def _forward(self, tape, params, x, train):
        n, t, f = x.shape
        h = tape.const(x.reshape(n * t, f))
        length = t
        for layer in ("c1", "c2"):
            taps, length = self._im2col_index(n, length)
            cols = tape.concat(*[tape.take_rows(h, index=idx) for idx in taps])
            h = tape.relu(tape.add(tape.matmul(cols, params[f"{layer}.w"]), params[f"{layer}.b"]))
            h = tape.dropout(h, rate=self.dropout, train=train)
        pool = np.kron(np.eye(n), np.full((1, length), 1.0 / length))
        h = tape.matmul(tape.const(pool), h)
        return tape.add(tape.matmul(h, params["out.w"]), params["out.b"])

    def fit(self, x: np.ndarray, y: np.ndarray) -> "TemporalConvHead":
        rng = make_rng(self.seed, STREAM_EVAL, 0xC0)
        self._scale = _standardizer(x)
        x = self._scale(x)
        f, w, k = x.shape[2], self.width, self.kernel

        def glorot(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, (fan_in, fan_out))

        self.params = {"c1.w": glorot(k * f, w), "c1.b": np.zeros((1, w)),
                       "c2.w": glorot(k * w, w), "c2.b": np.zeros((1, w)),
                       "out.w": glorot(w, self.num_classes), "out.b": np.zeros((1, self.num_classes))}
        opt = AdaGradState(lr=self.lr)
        y = np.asarray(y)
        for _ in range(self.steps):
            tape = Tape(rng=rng, checked=False)
            ids = {name: tape.param(v, name) for name, v in self.params.items()}
            loss = tape.softmax_xent(self._forward(tape, ids, x, True), labels=y)
            adagrad_step(opt, self.params, tape.named_grads(tape.backward(loss)))
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        tape = Tape(checked=False)
        params = {k: tape.const(v) for k, v in self.params.items()}
        return np.argmax(tape.value(self._forward(tape, params, self._scale(x), False)), axis=1)


def fit_downstream(x: np.ndarray, y: np.ndarray, head: str = "temporal_conv", seed: int = 0,
                   num_classes: int | None = None):
    """Fit an action head on sequences ``x`` (N, T, F) with labels ``y``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or len(x) == 0:
        raise EvaluationError(f"empty or malformed training split: shape {x.shape}")
    if len(x) != len(y):
        raise EvaluationError("features and labels differ in length")
    if head == "linear":
        return LinearHead(seed).fit(x, y)
    if head == "temporal_conv":
        k = int(num_classes if num_classes is not None else np.max(y) + 1)
        return TemporalConvHead(k, seed=seed).fit(x, y)
    raise EvaluationError(f"unknown head {head!r}; choose from {HEADS}")


def _sequences(embeds: FrozenEmbeddings, seqs, view) -> np.ndarray:
    return embeds.z_p[np.asarray(seqs), view]  # (n, T, d)


# ----------------------------------------------------------------------------
# protocols

@dataclass
class AccuracyMatrix:
    values: np.ndarray  # rows: train view, cols: test view

    @property
    def row_averages(self) -> np.ndarray:
        return self.values.mean(axis=1)

    @property
    def grand_average(self) -> float:
        return float(self.values.mean())

    def as_dict(self) -> dict:
        return {"values": self.values.tolist(), "row_averages": self.row_averages.tolist(),
                "grand_average": self.grand_average}


def single_shot_protocol(embeds: FrozenEmbeddings, dataset: MultiViewDataset,
                         head: str = "temporal_conv", seed: int = 0) -> AccuracyMatrix:
    """Train on one base view, test on every view; one row per training view."""
    V = dataset.num_views
    labels = dataset.labels
    acc = np.zeros((V, V))
    for v in range(V):
        split = dataset.train_test(f"single_shot_{v}")
        xs = np.concatenate([_sequences(embeds, split.train_seqs, tv) for tv in split.train_views])
        ys = np.tile(labels[split.train_seqs], len(split.train_views))
        clf = fit_downstream(xs, ys, head, seed, dataset.config.num_classes)
        for u in split.test_views:
            pred = clf.predict(_sequences(embeds, split.test_seqs, u))
            acc[v, u] = np.mean(pred == labels[split.test_seqs])
    return AccuracyMatrix(acc)


def subsample_sequences(seqs, labels, fraction: float, rng: np.random.Generator) -> list[int]:
    """Class-stratified subset keeping ``fraction`` of each class (at least one)."""
    if not 0.0 < fraction <= 1.0:
        raise EvaluationError("fraction must lie in (0, 1]")
    seqs = np.asarray(seqs)
    keep = []
    for c in np.unique(labels[seqs]):
        members = seqs[labels[seqs] == c]
        n = max(1, int(round(fraction * len(members))))
        keep.extend(rng.choice(members, size=n, replace=False).tolist())
    return sorted(keep)


def fully_supervised_protocol(embeds: FrozenEmbeddings, dataset: MultiViewDataset,
                              head: str = "temporal_conv", fraction: float = 1.0,
                              seed: int = 0) -> float:
    """Train on every view of the (optionally subsampled) training sequences; test on every view."""
    split = dataset.train_test("fully_supervised")
    labels = dataset.labels
    train = split.train_seqs
    if fraction < 1.0:
        train = subsample_sequences(train, labels, fraction, make_rng(seed, STREAM_EVAL, 0xF5))
    xs = np.concatenate([_sequences(embeds, train, v) for v in split.train_views])
    ys = np.tile(labels[train], len(split.train_views))
    clf = fit_downstream(xs, ys, head, seed, dataset.config.num_classes)
    correct = [clf.predict(_sequences(embeds, split.test_seqs, v)) == labels[split.test_seqs]
               for v in split.test_views]
    return float(np.mean(correct))


# ----------------------------------------------------------------------------
# retrieval

def retrieve_neighbors(embeds: FrozenEmbeddings, query: tuple[int, int, int], space: str = "pose",
                       k: int = 5, metric: str = "l2", exclude_same_sequence: bool = True,
                       features: np.ndarray | None = None):
    """The ``k`` nearest keys to ``query`` = (sequence, frame, view), with distances.

    Ties are broken by key order.  The gallery never contains the query and,
    by default, no frame of the query's own sequence.
    """
    keys = embeds.keys()
    feats = embeds.space(space) if features is None else features
    s, v, t = embeds.shape
    q_seq, q_frame, q_view = query
    if not (0 <= q_seq < s and 0 <= q_frame < t and 0 <= q_view < v):
        raise EvaluationError(f"query {query} not in the embedding set")
    qi = (q_seq * t + q_frame) * v + q_view
    mask = np.ones(len(keys), dtype=bool)
    mask[qi] = False
    if exclude_same_sequence:
        mask &= keys[:, 0] != q_seq
    gallery = np.nonzero(mask)[0]
    if k >= len(gallery):
        raise EvaluationError(f"k = {k} must be smaller than the gallery size {len(gallery)}")
    g, qf = feats[gallery], feats[qi]
    if metric == "l2":
        dist = np.sqrt(np.sum((g - qf) ** 2, axis=1))
    elif metric == "cosine":
        denom = np.linalg.norm(g, axis=1) * np.linalg.norm(qf) + 1e-12
        dist = 1.0 - g @ qf / denom
    else:
        raise EvaluationError(f"unknown metric {metric!r}")
    order = np.argsort(dist, kind="stable")[:k]
    return [(tuple(int(a) for a in keys[gallery[i]]), float(dist[i])) for i in order]


def retrieval_stats(embeds: FrozenEmbeddings, dataset: MultiViewDataset, queries: int = 200,
                    k: int = 5, seed: int = 0) -> dict:
    """Same-class rate of top-k neighbours in each space, and same-view rate in view space."""
    rng = make_rng(seed, STREAM_EVAL, 0x7E7)
    labels = dataset.labels
    keys = embeds.keys()
    pick = rng.choice(len(keys), size=queries, replace=False)
    out = {"pose_same_class": [], "view_same_class": [], "view_same_view": [], "pose_same_view": []}
    pose_f, view_f = embeds.space("pose"), embeds.space("view")
    for i in pick:
        q = tuple(int(a) for a in keys[i])
        for space, f in (("pose", pose_f), ("view", view_f)):
            nb = np.array([n for n, _ in retrieve_neighbors(embeds, q, space, k, features=f)])
            out[f"{space}_same_class"].append(np.mean(labels[nb[:, 0]] == labels[q[0]]))
            out[f"{space}_same_view"].append(np.mean(nb[:, 2] == q[2]))
    res = {key: float(np.mean(v)) for key, v in out.items()}
    res.update(queries=queries, k=k, view_chance=1.0 / dataset.num_views)
    return res


# ----------------------------------------------------------------------------
# probes and prior matching

def _frame_table(arr: np.ndarray, seqs) -> np.ndarray:
    return arr[np.asarray(seqs)].reshape(-1, arr.shape[-1])


def probe_disentanglement(embeds: FrozenEmbeddings, dataset: MultiViewDataset, seed: int = 0,
                          max_train: int = 20000) -> dict:
    """Linear probes for view and class from each half, fit on the fully-supervised split."""
    if embeds.z_v is None:
        raise EvaluationError("disentanglement probes need both embedding halves")
    split = dataset.train_test("fully_supervised")
    S, V, T = embeds.shape
    view_ids = np.broadcast_to(np.arange(V)[None, :, None], (S, V, T))
    class_ids = np.broadcast_to(dataset.labels[:, None, None], (S, V, T))
    targets = {"view": view_ids[..., None], "class": class_ids[..., None]}
    rng = make_rng(seed, STREAM_EVAL, 0x9B)
    n_train = len(split.train_seqs) * V * T
    sub = np.sort(rng.choice(n_train, size=min(max_train, n_train), replace=False))
    report = {}
    for half, arr in (("zp", embeds.z_p), ("zv", embeds.z_v)):
        xtr, xte = _frame_table(arr, split.train_seqs), _frame_table(arr, split.test_seqs)
        for target, lab in targets.items():
            ytr = _frame_table(lab, split.train_seqs).ravel()
            yte = _frame_table(lab, split.test_seqs).ravel()
            clf = LogisticRegression(max_iter=1000, random_state=seed).fit(xtr[sub], ytr[sub])
            report[f"{target}_from_{half}_acc"] = float(np.mean(clf.predict(xte) == yte))
    report["view_chance"] = 1.0 / V
    report["class_chance"] = 1.0 / dataset.config.num_classes
    return report


def disentanglement_holds(report: dict, min_view_acc: float = 0.90) -> bool:
    """view_from_zv >= min_view_acc and z_p's excess over chance at most half of z_v's."""
    c = report["view_chance"]
    zv, zp = report["view_from_zv_acc"], report["view_from_zp_acc"]
    return zv >= min_view_acc and (zp - c) <= 0.5 * (zv - c)


def uniformity_report(embeds: FrozenEmbeddings, dataset: MultiViewDataset) -> dict:
    """Per-coordinate Kolmogorov-Smirnov statistic of z_p (+) z_v against U(0, 1) on the test set."""
    if embeds.z_v is None:
        raise EvaluationError("uniformity check needs both embedding halves")
    seqs = dataset.train_test("fully_supervised").test_seqs
    z = np.concatenate([_frame_table(embeds.z_p, seqs), _frame_table(embeds.z_v, seqs)], axis=1)
    ks = np.array([stats.kstest(z[:, j], "uniform").statistic for j in range(z.shape[1])])
    return {"ks": ks.tolist(), "max_ks": float(ks.max()), "samples": int(len(z))}


# ----------------------------------------------------------------------------
# results files

@dataclass
class EvalResults:
    single_shot: dict[str, AccuracyMatrix] = field(default_factory=dict)
    fully_supervised: dict[str, float] = field(default_factory=dict)
    probes: dict | None = None
    retrieval: dict | None = None
    uniformity: dict | None = None

    def as_dict(self) -> dict:
        out = {"single_shot": {k: m.as_dict() for k, m in self.single_shot.items()},
               "fully_supervised": self.fully_supervised}
        for key in ("probes", "retrieval", "uniformity"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out


def evaluate(embeds: FrozenEmbeddings, dataset: MultiViewDataset, head: str = "temporal_conv",
             seed: int = 0, fractions=(1.0, 0.1), retrieval_queries: int = 200) -> EvalResults:
    res = EvalResults()
    res.single_shot[embeds.name] = single_shot_protocol(embeds, dataset, head, seed)
    for frac in fractions:
        res.fully_supervised[f"{embeds.name}@{frac:g}"] = fully_supervised_protocol(
            embeds, dataset, head, frac, seed)
    if embeds.z_v is not None:
        res.probes = probe_disentanglement(embeds, dataset, seed)
        res.retrieval = retrieval_stats(embeds, dataset, retrieval_queries, seed=seed)
        res.uniformity = uniformity_report(embeds, dataset)
    return res


def write_results(results: EvalResults, out_dir: str | os.PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.json", "w") as fh:
        json.dump(results.as_dict(), fh, indent=1, sort_keys=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["protocol", "train_view", "test_view", "accuracy"])
        for name, m in sorted(results.single_shot.items()):
            for i, row in enumerate(m.values):
                for j, a in enumerate(row):
                    w.writerow([f"single_shot/{name}", i, j, repr(float(a))])
        for name, a in sorted(results.fully_supervised.items()):
            w.writerow([f"fully_supervised/{name}", "all", "all", repr(float(a))])


__all__ = [
    "AccuracyMatrix", "EvalResults", "EvaluationError", "FrozenEmbeddings", "HEADS", "LinearHead",
    "TemporalConvHead", "disentanglement_holds", "evaluate", "extract_embeddings",
    "fit_downstream", "fully_supervised_protocol", "probe_disentanglement", "raw_embeddings",
    "retrieval_stats", "retrieve_neighbors", "single_shot_protocol", "subsample_sequences",
    "uniformity_report", "write_results",
]
