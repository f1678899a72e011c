"""End-to-end acceptance gate: one test and one PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -s`` to see the lines as they happen;
they are repeated in the terminal summary either way.
"""

import dataclasses
import filecmp
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from mvsc import metrics
from mvsc import tensor as T
from mvsc.classifier import StubExtractor
from mvsc.cli import main
from mvsc.config import parse_config, count_parameters
from mvsc.network import NetConfig, SurrogateNet
from mvsc.pipeline import baseline_samples, build_model, prepare_samples
from mvsc.selection import SelectionConfig, crop_range, score_slices, select_topk
from mvsc.tensor import Tensor, backward, grad_check
from mvsc.train import OptimState, TrainConfig, adamw_step, evaluate, lr_schedule, train
from mvsc.volume import SynthSpec, Volume, synth_dataset
from oracles import (entropy_oracle, grad_oracle, pairwise_auc, scalar_adamw, topk_oracle,
                     variance_oracle)
from test_tensor import _op_cases

pytestmark = pytest.mark.acceptance


def record(n: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (title, bool(ok), detail)
    print(f"\n{'PASS' if ok else 'FAIL'} [{n:2d}] {title}: {detail}")
    assert ok, f"criterion {n} failed: {detail}"


def randomized_net(seed, **kw):
    cfg = NetConfig(**{"d": 8, "K": 2, "patch": 2, "d_t": 6, "heads": 1, **kw})
    net = SurrogateNet(cfg, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 500)
    for p in net.parameters():
        p.data = p.data + rng.standard_normal(p.shape) * 0.3
    return net


# ---------------------------------------------------------------- 1
def test_01_gradient_suite():
    start = time.perf_counter()
    worst, where = 0.0, ""
    for seed in range(10):
        rng = np.random.default_rng(seed)
        for name, fn, inputs in _op_cases(rng):
            w = rng.standard_normal(fn(*inputs).shape)
            err = grad_check(lambda *xs: T.tsum(fn(*xs) * w), inputs, 1e-5)
            if err > worst:
                worst, where = err, f"{name}/seed{seed}"
    full = []
    for seed in range(3):
        net = randomized_net(seed)
        rng = np.random.default_rng(seed)
        stacks = Tensor(rng.uniform(0, 1, (2, 3, 4, 4)), requires_grad=True)   # N=2, P=4
        slice_text = Tensor(rng.standard_normal((2, 6)), requires_grad=True)
        global_text = Tensor(rng.standard_normal(6), requires_grad=True)
        w = rng.standard_normal((3, 4, 4))
        leaves = net.parameters() + [stacks, slice_text, global_text]
        full.append(grad_check(lambda *_: T.tsum(net(stacks, slice_text, global_text) * w), leaves))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and max(full) < 1e-4 and elapsed < 120
    record(1, "gradient suite", ok,
           f"max op rel err {worst:.2e} ({where}), full forward {max(full):.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 2
def test_02_structural_identities():
    checks = {}
    net = randomized_net(0, d=8, heads=2)
    rng = np.random.default_rng(0)
    n, p, k = 3, 4, 2
    x = Tensor(rng.standard_normal((n, p, 8)))
    u = rng.standard_normal((n, 6))
    diff = net.inject_slice_text(x, u).data - x.data
    checks["slice-text shift constant over patches"] = np.max(np.abs(diff - diff[:, :1])) < 1e-9
    ctx = Tensor(rng.standard_normal((k, 8)))
    sets = SurrogateNet.build_slice_sets(x, ctx)
    checks["set size N+K"] = sets.shape == (p, n + k, 8) and np.array_equal(sets.data[:, n:],
                                                                           np.broadcast_to(ctx.data, (p, k, 8)))
    brute = sum(x.data[i] for i in range(n)) / n
    checks["reference tokens are the slice mean"] = np.max(
        np.abs(SurrogateNet.reference_tokens(x).data - brute)) < 1e-12
    fresh = SurrogateNet(net.cfg, np.random.default_rng(1))
    r = rng.standard_normal((p, 8))
    checks["FiLM identity at init"] = np.array_equal(fresh.film(Tensor(r), rng.standard_normal(8)).data, r)
    tokens = rng.standard_normal((n, p, 8))
    g = rng.standard_normal(8)
    base = net.voce(Tensor(tokens), g).data
    shuffled = tokens.reshape(-1, 8)[rng.permutation(n * p)].reshape(n, p, 8)
    checks["context key permutation"] = np.max(np.abs(net.voce(Tensor(shuffled), g).data - base)) < 1e-9
    s = rng.standard_normal((p, n + k, 8))
    fused = net.fuse(Tensor(r), Tensor(s)).data
    fused_perm = net.fuse(Tensor(r), Tensor(s[:, rng.permutation(n + k)])).data
    checks["fusion key permutation"] = np.max(np.abs(fused - fused_perm)) < 1e-9
    failed = [name for name, ok in checks.items() if not ok]
    record(2, "structural identities", not failed,
           "all %d checks hold" % len(checks) if not failed else "failed: " + ", ".join(failed))


# ---------------------------------------------------------------- 3
def test_03_slice_permutation_invariance():
    worst = 0.0
    data = synth_dataset(SynthSpec(per_class=10, shape=(24, 64, 64)), 3)
    sel = SelectionConfig(k=4)
    for seed in range(20):
        net = randomized_net(seed, d=32, K=4, patch=16, d_t=32, heads=0)
        sample = prepare_samples([data[seed]], sel, d_t=32, text="label", seed=seed)[0]
        perm = np.random.default_rng(seed).permutation(4)
        a = net(sample.stacks, sample.slice_text, sample.global_text).data
        b = net(sample.stacks[perm], sample.slice_text[perm], sample.global_text).data
        worst = max(worst, float(np.max(np.abs(a - b))))
    record(3, "slice-permutation invariance", worst < 1e-6, f"max |diff| {worst:.2e} over 20 seeds")


# ---------------------------------------------------------------- 4
def test_04_selection_oracle():
    rng = np.random.default_rng(77)
    mismatches, worst, ties = 0, 0.0, 0
    for trial in range(50):
        z = int(rng.integers(8, 30))
        vox = rng.uniform(0, 1, (z, int(rng.integers(2, 10)), int(rng.integers(2, 10))))
        vox *= rng.uniform(0.1, 1.0, (z, 1, 1))
        if trial % 2 == 0:
            vox[rng.integers(0, z, z // 2)] = vox[rng.integers(0, z, z // 2)]
        vol = Volume(vox)
        r = crop_range(z, 0.2, 0.8)
        cfg = SelectionConfig(0.2, 0.8, int(rng.integers(1, len(r) + 1)))
        computed = score_slices(vol, cfg)
        oracle_scores = {}
        for i, zz in enumerate(r):
            img = vol.voxels[zz].astype(np.float64)
            h, g, v = entropy_oracle(img), grad_oracle(img), variance_oracle(img)
            worst = max(worst, abs(h - computed.entropy[i]), abs(g - computed.gradient[i]),
                        abs(v - computed.variance[i]))
            oracle_scores[zz] = float(computed.score[i])
        ties += len(set(oracle_scores.values())) < len(oracle_scores)
        mismatches += select_topk(vol, cfg) != topk_oracle(oracle_scores, cfg.k)
    ok = mismatches == 0 and worst < 1e-12 and ties > 0
    record(4, "slice-selection oracle", ok,
           f"{mismatches}/50 mismatches ({ties} with ties), max H/G/V err {worst:.1e}")


# ---------------------------------------------------------------- 5
def test_05_metric_oracle():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 40))
        labels = rng.integers(0, 3, n)
        labels[:3] = [0, 1, 2]
        prob = np.round(rng.dirichlet(np.ones(3), n), int(rng.integers(1, 4)))
        binary = labels == 2
        worst = max(worst, abs(metrics.auc(prob[:, 2], binary) - pairwise_auc(prob[:, 2], binary)))
        ref = np.mean([pairwise_auc(prob[:, c], labels == c) for c in range(3)])
        worst = max(worst, abs(metrics.macro_auc(prob, labels) - ref))
    examples = (metrics.auc([0.1, 0.2, 0.7, 0.9], [0, 0, 1, 1]) == 1.0,
                metrics.auc([0.3] * 5, [0, 1, 1, 0, 1]) == 0.5,
                metrics.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75)
    record(5, "metric oracle", worst < 1e-12 and all(examples),
           f"max err {worst:.1e} over 100 sets; perfect/ties/example = {examples}")


# ---------------------------------------------------------------- 6
def test_06_optimizer_schedule():
    rng = np.random.default_rng(6)
    theta0 = rng.standard_normal(4)
    grads = rng.standard_normal((10, 4))
    state = OptimState(lr=1e-4, weight_decay=1e-4)
    params, worst = [theta0.copy()], 0.0
    traj = []
    for g in grads:
        params = adamw_step(params, [g], state)
        traj.append(params[0].copy())
    for i in range(4):
        ref = scalar_adamw(theta0[i], grads[:, i], 1e-4)
        worst = max(worst, max(abs(traj[t][i] - ref[t]) for t in range(10)))
    end_warm = lr_schedule(9, 10, 150)
    mid = lr_schedule(85, 10, 150)
    end = lr_schedule(160, 10, 150)
    ok = worst < 1e-12 and abs(end_warm - 1e-4) < 1e-12 and abs(mid - 5e-5) < 1e-12 and abs(end) < 1e-12
    record(6, "optimizer and schedule", ok,
           f"recurrence err {worst:.1e}; lr warmup-end {end_warm:.3g}, midpoint {mid:.3g}, end {end:.3g}")


# ------------------------------------------------------------ shared task
TASK_SEED = 0
TASK_SELECTION = SelectionConfig(k=4)
TASK_SCHEDULE = TrainConfig(warmup_epochs=2, cosine_epochs=18, batch_size=8, seed=TASK_SEED)


@pytest.fixture(scope="module")
def task():
    train_vols = synth_dataset(SynthSpec(per_class=40, shape=(32, 64, 64)), TASK_SEED)
    held_out = synth_dataset(SynthSpec(per_class=20, shape=(32, 64, 64)), TASK_SEED, offset=40)
    return train_vols, held_out


def fit(task, net_cfg, text="synthetic", baseline=None):
    train_vols, held_out = task
    if baseline:
        tr = baseline_samples(train_vols, TASK_SELECTION, baseline)
        va = baseline_samples(held_out, TASK_SELECTION, baseline)
    else:
        tr = prepare_samples(train_vols, TASK_SELECTION, 32, text, TASK_SEED)
        va = prepare_samples(held_out, TASK_SELECTION, 32, text, TASK_SEED)
    extractor = StubExtractor(TASK_SEED)
    model = build_model(None if baseline else net_cfg, 128, 2, TASK_SEED)
    start = time.perf_counter()
    checksum = extractor.checksum()
    hist = train(tr, TASK_SCHEDULE, model, extractor)
    return {"model": model, "extractor": extractor, "train": tr, "held_out": va, "history": hist,
            "checksum_before": checksum, "seconds": time.perf_counter() - start,
            "train_eval": evaluate(tr, model, extractor), "eval": evaluate(va, model, extractor)}


@pytest.fixture(scope="module")
def mvsc_run(task):
    return fit(task, NetConfig(d=32, K=4, patch=16, d_t=32))


# ---------------------------------------------------------------- 7
def test_07_overfit_sanity(mvsc_run):
    r = mvsc_run
    acc, auc = r["train_eval"].accuracy, r["eval"].auc
    steps = r["history"].steps
    ok = acc >= 0.95 and auc >= 0.90 and steps <= 200 and r["seconds"] < 600
    record(7, "overfit sanity", ok,
           f"train acc {acc:.3f}, held-out AUC {auc:.4f} after {steps} steps in {r['seconds']:.1f}s")


# ---------------------------------------------------------------- 8
def test_08_baseline_ordering(task, mvsc_run):
    ours = mvsc_run["eval"].auc
    mean = fit(task, None, baseline="mean")["eval"].auc
    mx = fit(task, None, baseline="max")["eval"].auc
    record(8, "baseline ordering", ours >= mean and ours >= mx,
           f"MVSC {ours:.4f} vs mean {mean:.4f}, max {mx:.4f}")


# ---------------------------------------------------------------- 9
def test_09_ablation_directions(task):
    full = fit(task, NetConfig(d=32, K=4, patch=16, d_t=32), text="label")["eval"].auc
    no_text = fit(task, NetConfig(d=32, K=4, patch=16, d_t=32), text="zero")["eval"].auc
    no_voce = fit(task, NetConfig(d=32, K=0, patch=16, d_t=32), text="label")["eval"].auc
    record(9, "ablation directions", full >= no_text and no_voce <= full,
           f"full {full:.4f}, zero text {no_text:.4f}, K=0 {no_voce:.4f}")


# ---------------------------------------------------------------- 10
def test_10_parameter_counts():
    aibl = count_parameters(parse_config(overrides={"preset": "aibl"}, env={}))
    adni = count_parameters(parse_config(overrides={"preset": "adni"}, env={}))
    ok = 0.50e6 <= aibl <= 0.90e6 and 7.0e6 <= adni <= 13.0e6
    record(10, "parameter counts", ok, f"aibl {aibl / 1e6:.3f}M, adni {adni / 1e6:.3f}M")


# ---------------------------------------------------------------- 11
def test_11_frozen_contract(mvsc_run):
    r = mvsc_run
    extractor, model = r["extractor"], r["model"]
    unchanged = extractor.checksum() == r["checksum_before"]
    owned = {id(p) for p in model.parameters()}
    disjoint = not any(id(t) in owned for t in extractor.tensors())
    batch = r["train"][:8]
    model.train()
    surrogate = model.surrogates(batch)
    logits = model.head(extractor(surrogate))
    loss = -T.mean(T.log_softmax(logits, axis=-1)[np.arange(8), np.array([s.label for s in batch])])
    (g,) = backward(loss, wrt=[surrogate])
    norm = float(np.linalg.norm(g))
    model.eval()
    record(11, "frozen contract", unchanged and disjoint and norm > 0,
           f"checksum unchanged={unchanged}, extractor outside optimizer={disjoint}, "
           f"|dL/dsurrogate|={norm:.3e}")


# ---------------------------------------------------------------- 12
def test_12_cli_determinism(tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    codes = []
    for d in dirs:
        for cmd in ("synth", "train", "eval"):
            codes.append(main([cmd, "--out_dir", str(d), "--seed", "7"]))
    artifacts = ["model.mvscmdl", "eval_report.txt", "train_report.txt", "metrics.log",
                 "train.csv", "val.csv"]
    same = {name: filecmp.cmp(dirs[0] / name, dirs[1] / name, shallow=False) for name in artifacts}
    ok = all(c == 0 for c in codes) and all(same.values())
    record(12, "determinism", ok, f"exit codes {set(codes)}, identical: "
           + ", ".join(f"{k}={v}" for k, v in same.items()))
