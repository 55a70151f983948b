"""End-to-end acceptance criteria; every test records one PASS/FAIL line.

Training runs are shared through the session ``runs`` cache (default
dataset, desk-scale defaults, seeds 0-2), so the first test to need a run
pays for it.
"""

import json
import time

import numpy as np
import pytest

from cvmim.checks import gradcheck_suite
from cvmim.cli import main
from cvmim.data import DatasetConfig, build_dataset
from cvmim.oracle import verify_propositions
from cvmim.sandwich import gaussian_sandwich, sandwich_holds
from cvmim.train import TrainConfig, Trainer, load_checkpoint, save_checkpoint

from conftest import SEEDS

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


def excess(report, which):
    return report[f"view_from_{which}_acc"] - report["view_chance"]


def test_c1_gradient_correctness(verdict):
    t0 = time.perf_counter()
    cases = gradcheck_suite(seed=0, batch=16, h=1e-6)
    dt = time.perf_counter() - t0
    worst = {c.name: c.report.worst for c in cases}
    ok = all(c.passed for c in cases) and dt < 60
    verdict(1, ok, f"worst rel err {json.dumps({k: f'{v:.1e}' for k, v in worst.items()})}, {dt:.0f}s")
    assert ok


def test_c2_propositions(verdict):
    t0 = time.perf_counter()
    r = verify_propositions(1000, seed=0)
    dt = time.perf_counter() - t0
    ok = (r["prop1_max_residual"] <= 1e-12 and r["dpi_violations"] == 0
          and min(r["eq4_margins"].values()) >= -1e-12 and dt < 10)
    verdict(2, ok, f"prop1 residual {r['prop1_max_residual']:.1e}, dpi violations "
                   f"{r['dpi_violations']}, min chain margin {min(r['eq4_margins'].values()):.2e}, {dt:.1f}s")
    assert ok


def test_c3_estimator_sandwich(verdict):
    t0 = time.perf_counter()
    rep = gaussian_sandwich(samples=10_000, seed=0)
    dt = time.perf_counter() - t0
    checks = sandwich_holds(rep)
    truth = [round(e["true_mi"], 4) for e in rep["results"]]
    assert truth == [0.0, 0.1438, 0.8304]
    ok = all(checks.values()) and dt < 300
    rows = ", ".join(f"rho={e['rho']}: {e['lower']:.3f} <= {e['true_mi']:.3f} <= {e['upper']:.3f}"
                     for e in rep["results"])
    verdict(3, ok, f"{rows}; {dt:.0f}s")
    assert ok


def test_c4_prior_matching(runs, verdict):
    rep = runs.metric("uniformity", "cvmim", 0)
    ok = rep["max_ks"] <= 0.15
    verdict(4, ok, f"max per-coordinate KS {rep['max_ks']:.3f} over {rep['samples']} test embeddings")
    assert ok


def test_c5_disentanglement(runs, verdict):
    p = runs.metric("probes", "cvmim", 0)
    zv, zp = excess(p, "zv"), excess(p, "zp")
    secs = runs.seconds[("cvmim", 0)] + runs.seconds[("probes", "cvmim", 0)]
    ok = p["view_from_zv_acc"] >= 0.90 and zp <= 0.5 * zv and secs < 600
    verdict(5, ok, f"view_from_zv {p['view_from_zv_acc']:.3f}, view_from_zp {p['view_from_zp_acc']:.3f} "
                   f"(excess {zp:.3f} vs half-bound {0.5 * zv:.3f}), {secs:.0f}s")
    assert ok


def test_c6_single_shot_ordering(runs, verdict):
    means = {k: runs.mean("single_shot", k) for k in ("cvmim", "cross_recon", "raw")}
    secs = sum(runs.seconds[(k, s)] + runs.seconds[("single_shot", k, s)]
               for k in ("cvmim", "cross_recon", "raw") for s in SEEDS)
    ok = (means["cvmim"] > means["cross_recon"] > means["raw"]
          and means["cvmim"] - means["raw"] >= 0.10 and secs < 1800)
    verdict(6, ok, "grand averages " + ", ".join(f"{k} {100 * v:.1f}" for k, v in means.items())
            + f" ({len(SEEDS)} seeds), {secs:.0f}s")
    assert ok


def test_c7_limited_supervision(runs, verdict):
    drops = {k: runs.mean("fully_supervised@1.0", k) - runs.mean("fully_supervised@0.1", k)
             for k in ("cvmim", "raw")}
    ok = drops["cvmim"] < drops["raw"]
    verdict(7, ok, "accuracy drop at 10% data: " + ", ".join(
        f"{k} {100 * runs.mean('fully_supervised@1.0', k):.1f} -> "
        f"{100 * runs.mean('fully_supervised@0.1', k):.1f}" for k in drops))
    assert ok


def test_c8_fusion_ablation(runs, verdict):
    means = {k: runs.mean("single_shot", k) for k in ("concat", "product", "cvmim")}
    spread = max(means.values()) - min(means.values())
    ok = spread <= 0.05
    verdict(8, ok, "concat {:.1f}, product {:.1f}, mixture {:.1f}; spread {:.1f} points".format(
        *(100 * means[k] for k in ("concat", "product", "cvmim")), 100 * spread))
    assert ok


def test_c9_reproducibility(tmp_path, verdict):
    cfg = {"seed": 3, "dataset": {}, "train": {"iterations": 150},
           "eval": {"head": "linear", "fractions": [1.0, 0.1], "retrieval_queries": 20}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    files = []
    for name in ("a", "b"):
        run, ev = tmp_path / name, tmp_path / f"{name}_eval"
        assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(run)]) == 0
        assert main(["eval", "--config", str(tmp_path / "c.json"), "--checkpoint",
                     str(run / "checkpoint"), "--out", str(ev)]) == 0
        files.append([(run / "train.log.jsonl").read_bytes(),
                      (run / "checkpoint" / "params.bin").read_bytes(),
                      (run / "checkpoint" / "manifest.json").read_bytes(),
                      (ev / "results.json").read_bytes(), (ev / "results.csv").read_bytes()])
    identical = files[0] == files[1]

    ds = build_dataset(DatasetConfig())
    cont = Trainer(ds, TrainConfig(seed=3))
    cont.run(50)
    save_checkpoint(cont, tmp_path / "ck")
    tail = [b.as_dict() for b in cont.run(150)]
    resumed = load_checkpoint(tmp_path / "ck", ds)
    replay = [b.as_dict() for b in resumed.run(150)]
    same_tail = json.dumps(tail) == json.dumps(replay)
    same_state = all(np.array_equal(v, resumed.state_tensors()[k])
                     for k, v in cont.state_tensors().items())
    ok = identical and same_tail and same_state
    verdict(9, ok, f"logs/checkpoints/results identical: {identical}; "
                   f"resume matches continuous for {len(tail)} iterations: {same_tail and same_state}")
    assert ok


def test_c10_inter_term_ablation(runs, verdict):
    rows, ok = [], True
    for s in SEEDS:
        full, ablated = runs.metric("probes", "cvmim", s), runs.metric("probes", "no_inter", s)
        holds = excess(full, "zp") <= 0.5 * excess(full, "zv")
        breaks = excess(ablated, "zp") > 0.5 * excess(ablated, "zv")
        ok &= holds and breaks
        rows.append(f"seed {s}: zp excess {excess(full, 'zp'):.3f}/{0.5 * excess(full, 'zv'):.3f} with, "
                    f"{excess(ablated, 'zp'):.3f}/{0.5 * excess(ablated, 'zv'):.3f} without")
    verdict(10, ok, "excess/half-bound " + "; ".join(rows))
    assert ok
