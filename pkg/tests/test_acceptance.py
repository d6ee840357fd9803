"""Acceptance criteria, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line with the measured
quantity next to its threshold. The learning criteria (3, 4, 8) train on a
500-instance Lotka-Volterra set and take a few minutes on one core.
"""
import csv
import hashlib
import json
import math
import statistics
import time

import numpy as np
import pytest

from imts_mixer import cli
from imts_mixer.autograd import Tensor, rms_norm
from imts_mixer.config import TrainConfig
from imts_mixer.data import make_batch, validate
from imts_mixer.datagen import SYSTEMS, GenConfig, generate_dataset, keep_rate, rk4_integrate
from imts_mixer.gradcheck import sweep
from imts_mixer.iscam import Iscam
from imts_mixer.mixer import MixerStack
from imts_mixer.model import ImtsMixer
from imts_mixer.nn import Mlp2, masked_softmax
from imts_mixer.training import baseline_carry_forward, baseline_mean, evaluate

from conftest import random_dataset, random_instance

LV_GEN = GenConfig(n_instances=500, drop=0.8, sigma=0.05, seed=7)
LV_CONFIG = TrainConfig(dim=64, out_dim=32, n_blocks=1, weight_decay=1e-3, lr=0.01, patience=20)
SEEDS = (0, 1, 2)
BLOCKS = (0, 1, 2, 3)


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def lv_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("lv") / "lotka_volterra.jsonl"
    assert cli.main(["generate", "--system", "lotka_volterra", "--instances", "500", "--drop", "0.8",
                     "--sigma", "0.05", "--seed", "7", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def lv_splits(lv_file):
    return cli.prepare_splits(cli.load_jsonl(lv_file), split_seed=0)


@pytest.fixture(scope="module")
def block_curve(lv_splits, tmp_path_factory):
    rows = cli.run_ablation(LV_CONFIG, lv_splits, BLOCKS, SEEDS)
    rows += cli.ablation_summary(rows)
    path = tmp_path_factory.mktemp("ablation") / "ablate_blocks.csv"
    cli.write_ablation_csv(path, rows)
    return rows, path


def _median(rows, L):
    return statistics.median(r["test_mse"] for r in rows if r["L"] == L and r["status"] == "ok")


def test_criterion_1_gradient_oracle(capsys):
    start = time.perf_counter()
    results = sweep(seed=0, n_channels=2, blocks=(0, 1, 2))
    elapsed = time.perf_counter() - start
    worst = max(results, key=lambda r: r.worst_error)
    ok = len(results) == 12 and all(r.passed for r in results) and elapsed < 60.0
    with capsys.disabled():
        for r in results:
            print("\n  " + r.line(), end="")
    report(capsys, 1, ok, f"12 configs, worst rel. err {worst.worst_error:.2e} ({worst.label}) "
                          f"< 1e-4, {elapsed:.1f}s < 60s")


def test_criterion_2_structural_invariants(capsys):
    rng = np.random.default_rng(0)
    checks = {}

    enc = Iscam(3, 8, 32, rng)
    enc.channel_bias.data = rng.normal(size=(3, 8))
    t, v = rng.uniform(0, 1, 7), rng.normal(size=7)
    perm = rng.permutation(7)
    a = enc.encode_channel(t, v, np.ones(7, bool)).data
    b = enc.encode_channel(t[perm], v[perm], np.ones(7, bool)).data
    checks["iscam permutation (1e-12)"] = np.max(np.abs(a - b)) <= 1e-12

    data = [random_instance(rng, 3, empty=(c,)) for c in range(3)]
    out = enc(make_batch(data)).data
    checks["empty-channel bias (exact)"] = all(np.array_equal(out[c, c], enc.channel_bias.data[c])
                                               for c in range(3))

    pad_ok, query_ok = True, True
    for encoder in ("iscam", "mha"):
        for decoder in ("contp", "mlp"):
            model = ImtsMixer(TrainConfig(dim=16, out_dim=8, encoder=encoder, decoder=decoder,
                                          n_heads=2, n_blocks=2), 3, seed=1)
            batch_data = random_dataset(3, 4)
            base = make_batch(batch_data)
            padded = make_batch(batch_data, n_max=base.obs_t.shape[-1] + 5)
            pred = model.predict(base)
            pad_ok &= np.array_equal(pred, model.predict(padded))
            fewer = make_batch(batch_data)
            fewer.q_mask[:, :, 1:] = False
            query_ok &= np.array_equal(model.predict(fewer)[..., 0], pred[..., 0])
    checks["padding extension (bit-identical)"] = pad_ok
    checks["query-set independence (bit-identical)"] = query_ok

    doubling = True
    for L in range(4):
        stack = MixerStack(3, 6, 6, L, rng)
        for name, p in stack.parameters().items():
            if not name.endswith("gain"):
                p.data[...] = 0.0
        z = rng.normal(size=(2, 3, 6))
        doubling &= np.array_equal(stack(Tensor(z)).data, z * 2.0 ** L)
    checks["zero-weight mixer 2^L (exact)"] = doubling

    x = rng.normal(scale=5.0, size=(50, 9))
    mask = rng.random((50, 9)) < 0.6
    mask[:, 0] = True
    sm = masked_softmax(Tensor(x), mask).data
    checks["masked softmax sums (1e-12)"] = (np.max(np.abs(sm.sum(-1) - 1.0)) <= 1e-12
                                             and np.all(sm[~mask] == 0.0))

    y = rms_norm(Tensor(rng.normal(size=(50, 9))), Tensor(np.ones(9)), 1e-12).data
    checks["rmsnorm unit RMS (1e-9)"] = np.max(np.abs(np.sqrt(np.mean(y * y, -1)) - 1.0)) <= 1e-9

    failed = [k for k, ok in checks.items() if not ok]
    report(capsys, 2, not failed, f"{len(checks) - len(failed)}/{len(checks)} invariants hold"
                                  + (f"; failed: {failed}" if failed else ""))


@pytest.mark.slow
def test_criterion_3_learning_coupled_dynamics(capsys, lv_splits, block_curve):
    train_set, _, test_set, _ = lv_splits
    mean_mse = evaluate(baseline_mean(train_set), test_set)[0]
    cf_mse = evaluate(baseline_carry_forward(train_set), test_set)[0]
    rows, _ = block_curve
    model_mse = _median(rows, 1)
    ok = model_mse < 0.5 * mean_mse and model_mse < 0.8 * cf_mse
    report(capsys, 3, ok, f"median test MSE {model_mse:.4f} vs 0.5*mean {0.5 * mean_mse:.4f} "
                          f"and 0.8*carry-forward {0.8 * cf_mse:.4f}")


@pytest.mark.slow
def test_criterion_4_mixer_block_effect(capsys, block_curve):
    rows, path = block_curve
    medians = {L: _median(rows, L) for L in BLOCKS}
    with capsys.disabled():
        print(f"\n  block-count curve written to {path}")
        for row in rows:
            print("  " + ",".join(str(row[k]) for k in cli.ABLATION_FIELDS))
    curve = ", ".join(f"L={L}: {m:.4f}" for L, m in medians.items())
    report(capsys, 4, medians[1] <= medians[0], f"median test MSE {curve}; need L=1 <= L=0")


def test_criterion_5_parameter_accounting(capsys):
    rng = np.random.default_rng(0)
    mlp = Mlp2(2, 32, 64, rng).num_parameters()
    iscam = Iscam(5, 64, 32, rng).num_parameters()
    hand_mlp = 2 * 32 + 32 + 32 * 64 + 64
    hand_iscam = 2 * hand_mlp + 5 * 64
    ok = mlp == hand_mlp == 2208 and iscam == hand_iscam == 4736
    report(capsys, 5, ok, f"Mlp2(2,32,64) = {mlp} (hand 2208), ISCAM C=5 D=64 = {iscam} (hand 4736)")


def test_criterion_6_generation_protocol(capsys, tmp_path):
    spec = SYSTEMS["lotka_volterra"]
    paths = []
    for i in range(2):
        paths.append(tmp_path / f"g{i}.jsonl")
        assert cli.main(["generate", "--system", "lotka_volterra", "--instances", "2000",
                         "--seed", "3", "--out", str(paths[-1])]) == 0
    data = cli.load_jsonl(paths[0])
    rate = keep_rate(data, spec)
    invalid = sum(bool(validate(inst, spec.n_channels)) for inst in data)
    digests = [hashlib.sha256(p.read_bytes()).hexdigest() for p in paths]
    ok = abs(rate - 0.2) <= 0.02 and invalid == 0 and len(data) == 2000 and digests[0] == digests[1]
    report(capsys, 6, ok, f"keep rate {rate:.4f} (0.2 +- 0.02), {invalid} invalid of {len(data)}, "
                          f"hashes {'equal' if digests[0] == digests[1] else 'differ'}")


def test_criterion_7_integrator_accuracy(capsys):
    e_err = abs(rk4_integrate(lambda x: x, [1.0], 1.0, 100)[-1, 0] - math.e)
    osc = rk4_integrate(lambda x: np.array([x[1], -x[0]]), [1.0, 0.0], 2 * math.pi, 100)
    o_err = float(np.max(np.abs(osc[-1] - [1.0, 0.0])))
    report(capsys, 7, e_err < 1e-7 and o_err < 1e-5,
           f"|x(1) - e| = {e_err:.2e} < 1e-7, oscillator return error {o_err:.2e} < 1e-5")


@pytest.mark.slow
def test_criterion_8_determinism(capsys, lv_file, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["train", "--data", str(lv_file), "--out", str(out), "--seed", "0"]) == 0
    first = json.loads((out / "report.json").read_text())
    argv = json.loads((out / "manifest.json").read_text())["argv"]
    assert cli.main(argv) == 0
    second = json.loads((out / "report.json").read_text())
    wall = (first.pop("wall_seconds"), second.pop("wall_seconds"))
    report(capsys, 8, first == second,
           f"rerun from manifest argv: report {'identical' if first == second else 'differs'} "
           f"apart from wall_seconds ({wall[0]:.1f}s vs {wall[1]:.1f}s), {len(first['epochs'])} epochs")
