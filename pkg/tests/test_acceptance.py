"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s to see them).

The end-to-end pipeline criteria (7 and 8) share one full training run at
the reference desk scale, so this module takes several minutes.
"""

import time

import numpy as np
import pytest

from relvox.calculus import area, error_curve, identity, recover_alpha0
from relvox.cli import main as cli_main
from relvox.data import gen_synthetic, load_dataset
from relvox.filters import FilterSpec, apply_filtered, clamp, pass_band
from relvox.kernels import backward, forward
from relvox.layers import Conv3d, UpConv3d
from relvox.lrp import (SeedSpec, relprop_conv3d, relprop_upconv3d, run_lrp)
from relvox.metrics import SWEEP_HEADER, binarize, inclusivity, signal_stats
from relvox.training import dice
from relvox.unet import (UNetConfig, build, init_kaiming, load_weights,
                         save_weights)
from relvox.volio import read_volume, write_volume

from .oracles import (conv_matrix, dense_zplus, stable_central_difference,
                      upconv_matrix)


def report(criterion, description, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    print(f"[{status}] criterion {criterion}: {description} {detail}".rstrip())
    assert passed, f"criterion {criterion} failed: {description} {detail}"


# ---------------------------------------------------------------------------
# 1. relevance conservation


def test_criterion_1_relevance_conservation():
    t0 = time.perf_counter()
    config = UNetConfig(in_channels=6, depth=2, base_filters=8,
                        input_shape=(6, 8, 16, 16))
    net = init_kaiming(build(config), seed=0)  # biases are zero by construction
    x = np.random.default_rng(0).uniform(0, 1, (6, 8, 16, 16)).astype(np.float32)
    _, cache = forward(net, x)
    rmap = run_lrp(net, cache, seed=SeedSpec())
    s_top = rmap.seed.sum(dtype=np.float64)
    s_input = rmap.input_relevance.sum(dtype=np.float64)
    rel_err = abs(s_input - s_top) / abs(s_top)
    elapsed = time.perf_counter() - t0
    report(1, "relevance conservation on bias-free depth-2 net",
           rel_err <= 1e-4 and elapsed < 10.0,
           f"(rel err {rel_err:.2e}, absorbed {rmap.absorbed}, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 2. dense-oracle equivalence


def test_criterion_2_dense_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0

    # conv layers up to 10^3 weights
    for cout, cin, k, dims, pad in [(3, 2, 3, (4, 4, 4), 1),
                                    (4, 4, 2, (3, 4, 5), 0),
                                    (6, 6, 1, (5, 5, 5), 0)]:
        spec = Conv3d(weight=rng.normal(size=(cout, cin, k, k, k)).astype(np.float32),
                      bias=np.zeros(cout, np.float32), padding=pad)
        a = rng.uniform(0, 1, (cin,) + dims).astype(np.float32)
        m, out_shape = conv_matrix(spec.weight, a.shape, pad)
        r_next = rng.uniform(0, 1, out_shape).astype(np.float32)
        got, _ = relprop_conv3d(a, spec, r_next)
        want = dense_zplus(m, a.ravel(), r_next.ravel()).reshape(a.shape)
        worst = max(worst, float(np.abs(got - want).max()))

    # up-conv layers, cropped and uncropped
    for cin, cout, dims, crop in [(2, 2, (3, 3, 3), (5, 6, 6)),
                                  (4, 3, (3, 3, 3), None),
                                  (8, 4, (2, 3, 3), (4, 5, 6))]:
        spec = UpConv3d(weight=rng.normal(size=(cin, cout, 2, 2, 2)).astype(np.float32),
                        bias=np.zeros(cout, np.float32), crop=crop)
        a = rng.uniform(0, 1, (cin,) + dims).astype(np.float32)
        m, out_shape = upconv_matrix(spec.weight, a.shape, crop=crop)
        r_next = rng.uniform(0, 1, out_shape).astype(np.float32)
        got, _ = relprop_upconv3d(a, spec, r_next)
        want = dense_zplus(m, a.ravel(), r_next.ravel()).reshape(a.shape)
        worst = max(worst, float(np.abs(got - want).max()))

    elapsed = time.perf_counter() - t0
    report(2, "conv/up-conv relevance matches the explicit-matrix oracle",
           worst <= 1e-6 and elapsed < 30.0,
           f"(max abs diff {worst:.2e}, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 3. gradient correctness


def test_criterion_3_gradient_finite_differences():
    t0 = time.perf_counter()
    config = UNetConfig(in_channels=6, depth=2, base_filters=4,
                        input_shape=(6, 4, 8, 8))
    net = init_kaiming(build(config), seed=0)
    rng = np.random.default_rng(42)
    x = rng.uniform(-1, 1, (6, 4, 8, 8)).astype(np.float32)
    out, cache = forward(net, x)
    g = (rng.uniform(-1, 1, out.shape) / np.sqrt(out.size)).astype(np.float32)
    grads = backward(net, cache, g)

    params = [(lid, name) for lid, layer_grads in grads.items() for name in layer_grads]
    picker = np.random.default_rng(7)
    worst = 0.0
    checked = 0
    skipped = 0
    while checked < 200:
        lid, name = params[picker.integers(len(params))]
        arr = getattr(net.layers[lid], name)
        idx = tuple(picker.integers(s) for s in arr.shape)
        numeric = stable_central_difference(net, x, g, arr, idx, h=1e-3)
        if numeric is None:
            # the +/-h interval crosses a ReLU kink or pooling-winner change,
            # where a finite difference does not estimate the gradient
            skipped += 1
            continue
        analytic = float(grads[lid][name][idx])
        scale = max(abs(analytic), abs(numeric))
        if scale > 1e-4:
            worst = max(worst, abs(analytic - numeric) / scale)
        checked += 1
    elapsed = time.perf_counter() - t0
    report(3, "analytic backward matches central differences on 200 parameters",
           worst <= 1e-3 and elapsed < 60.0,
           f"(max rel err {worst:.2e}, {skipped} kink-straddling probes skipped, {elapsed:.0f}s)")


# ---------------------------------------------------------------------------
# 4. filter laws


def test_criterion_4_filter_laws():
    rng = np.random.default_rng(4)
    v = rng.uniform(-1, 1, 10_000).astype(np.float32)
    p = lambda t: pass_band(t, 0.2, 0.7)
    c = lambda t: clamp(t, 0.35)

    idempotent = (np.array_equal(p(p(v)), p(v)) and np.array_equal(c(c(v)), c(v)))
    odd = (np.array_equal(p(-v), -p(v)) and np.array_equal(c(-v), -c(v)))
    ordering = (np.all(np.abs(c(v)) <= np.minimum(np.abs(v), np.float32(0.35)))
                and np.all(np.abs(p(v)) <= np.abs(v)))

    raw = rng.normal(0, 5, 10_000).astype(np.float32)
    spec = FilterSpec("pass", 0.1, 0.6)
    scaled = apply_filtered((2.5 * raw).astype(np.float32), spec)
    rescaled = 2.5 * apply_filtered(raw, spec)
    equivariant = np.allclose(scaled, rescaled, rtol=1e-7, atol=1e-7 * 2.5)

    report(4, "filter laws (idempotence, odd symmetry, ordering, equivariance)",
           idempotent and odd and ordering and equivariant,
           f"(idempotent {idempotent}, odd {odd}, ordering {ordering}, "
           f"equivariant {equivariant})")


# ---------------------------------------------------------------------------
# 5. filter-calculus worked example


def test_criterion_5_double_pass_area():
    t0 = time.perf_counter()
    worst = 0.0
    for alpha in [round(0.1 * i, 1) for i in range(1, 11)]:
        chain = [(FilterSpec("pass", 0.0, alpha), identity)] * 2
        worst = max(worst, abs(area(chain, 100_000) - alpha ** 2 / 2.0))
    elapsed = time.perf_counter() - t0
    report(5, "double-pass identity chain area equals alpha^2/2",
           worst <= 1e-6 and elapsed < 5.0,
           f"(max abs err {worst:.2e}, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 6. alpha0 recovery


def test_criterion_6_alpha0_recovery():
    target = FilterSpec("pass", 0.1, 0.5)

    def true_fn(x):
        return target(identity(x))

    def probe(alpha):
        return [(FilterSpec("pass", 0.0, alpha), true_fn)]

    alphas = [0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.6, 0.8, 1.0]
    curve = dict(error_curve(true_fn, probe, alphas, 1001))
    zero_above = all(curve[a] == 0.0 for a in alphas if a >= 0.5)
    positive_below = all(curve[a] > 0.0 for a in alphas if 0.1 <= a < 0.5)
    res = recover_alpha0(true_fn, probe, alphas, tol=1e-12, grid_n=1001)
    print(f"      note: computed recovery breakpoint alpha0={res.alpha0} "
          "(the quoted value for this scenario is 0.1; the composition "
          "reproduces the surviving band only from 0.5 up, so the computed "
          "curve is reported instead of the quoted value)")
    report(6, "error curve is 0 for alpha >= 0.5 and positive on [0.1, 0.5)",
           zero_above and positive_below and res.alpha0 == 0.5,
           f"(alpha0 {res.alpha0})")


# ---------------------------------------------------------------------------
# 7 & 8. end-to-end pipeline at desk scale (shared run)


@pytest.fixture(scope="module")
def desk_pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    data_dir = root / "data"
    model_path = root / "model.nnw"
    log_path = root / "train.csv"
    t0 = time.perf_counter()
    assert cli_main(["gen-data", "--out", str(data_dir), "--seed", "7",
                     "--cases", "12", "--shape", "6,19,48,48"]) == 0
    assert cli_main(["train", "--data", str(data_dir), "--out", str(model_path),
                     "--log", str(log_path), "--epochs", "80", "--lr", "0.1",
                     "--base-filters", "8", "--seed", "0"]) == 0
    elapsed = time.perf_counter() - t0
    net = load_weights(str(model_path))
    dataset = load_dataset(str(data_dir))
    return root, net, dataset, elapsed


def test_criterion_7_end_to_end_pipeline(desk_pipeline):
    root, net, dataset, train_elapsed = desk_pipeline
    t0 = time.perf_counter()

    # train quality
    dices = []
    rel_maps = {}
    for case in dataset:
        out, cache = forward(net, case.image)
        dices.append(dice(out[0] > 0.5, case.mask))
        rel_maps[case.case_id] = run_lrp(net, cache, seed=SeedSpec()).input_relevance
    mean_dice = float(np.mean(dices))

    # exercise the explain surface for one case (mirrors the clamp figure)
    out_dir = root / "explain"
    assert cli_main(["explain", "--model", str(root / "model.nnw"),
                     "--data", str(root / "data"), "--out", str(out_dir),
                     "--case", dataset[0].case_id, "--filter", "clamp:0.2"]) == 0

    # ground-truth inclusivity: clamp(0.2) vs raw, per case with dice >= 0.5
    clamp_spec = FilterSpec("clamp", hi=0.2)
    wins = 0
    eligible = 0
    for case, case_dice in zip(dataset, dices):
        if case_dice < 0.5:
            continue
        eligible += 1
        gt = case.mask.astype(bool)
        r0 = rel_maps[case.case_id]
        raw_incl = np.mean([inclusivity(binarize(r0[c], 0.0), gt) for c in range(6)])
        clamped = np.stack([apply_filtered(r0[c], clamp_spec) for c in range(6)])
        clamp_incl = np.mean([inclusivity(binarize(clamped[c], 0.0), gt) for c in range(6)])
        if clamp_incl >= raw_incl:
            wins += 1
    elapsed = train_elapsed + time.perf_counter() - t0
    frac = wins / eligible if eligible else 0.0
    report(7, "pipeline: 80-epoch training reaches dice >= 0.7 and clamp(0.2) "
              "keeps ground-truth inclusivity on >= 70% of good cases",
           mean_dice >= 0.7 and eligible > 0 and frac >= 0.7 and elapsed < 900.0,
           f"(mean dice {mean_dice:.3f}, {wins}/{eligible} cases, total {elapsed:.0f}s)")


def test_criterion_8_low_amplitude_information(desk_pipeline):
    _, net, dataset, _ = desk_pipeline
    low_amp = FilterSpec("pass", 0.0, 0.2)    # keeps the quiet signal
    no_low = FilterSpec("pass", 0.05, 1.0)    # removes the quietest 5%
    mus = {"low": [], "nolow": []}
    for case in dataset:
        _, cache = forward(net, case.image)
        r0 = run_lrp(net, cache, seed=SeedSpec()).input_relevance
        for c in range(6):
            s_low = signal_stats(r0[c], low_amp)
            s_nolow = signal_stats(r0[c], no_low)
            if s_low.valid:
                mus["low"].append(s_low.mu)
            if s_nolow.valid:
                mus["nolow"].append(s_nolow.mu)
    spread_low = float(np.std(mus["low"]))
    spread_nolow = float(np.std(mus["nolow"]))
    report(8, "mu spread shrinks when low amplitudes are removed",
           spread_nolow < spread_low,
           f"(std pass(0.05,1.0) {spread_nolow:.3e} < std pass(0,0.2) {spread_low:.3e}, "
           f"ratio {spread_nolow / max(spread_low, 1e-30):.3f})")


# ---------------------------------------------------------------------------
# 9. format round trips


def test_criterion_9_format_round_trips(tmp_path):
    rng = np.random.default_rng(9)

    ok = True
    for i in range(100):
        rank = int(rng.integers(1, 5))
        dims = tuple(int(rng.integers(1, 7)) for _ in range(rank))
        if rng.uniform() < 0.5:
            vol = rng.normal(size=dims).astype(np.float32)
        else:
            vol = (rng.uniform(size=dims) > 0.5).astype(np.uint8)
        path = tmp_path / f"v{i}.vol"
        write_volume(vol, path)
        back = read_volume(path)
        ok = ok and np.array_equal(back, vol) and back.dtype == vol.dtype

    nets_ok = True
    for i in range(4):
        in_ch = int(rng.integers(1, 7))
        config = UNetConfig(in_channels=in_ch, depth=2,
                            base_filters=int(rng.integers(2, 7)),
                            input_shape=(in_ch, 8, 16, 16))
        net = init_kaiming(build(config), seed=i)
        path = tmp_path / f"n{i}.nnw"
        save_weights(net, path)
        nets_ok = nets_ok and load_weights(path).equals(net)

    header_ok = SWEEP_HEADER == ["case", "channel", "alpha_lo", "alpha_hi",
                                 "filter_kind", "mu", "area", "omega_tilde",
                                 "incl_x", "incl_gt", "dice", "valid"]

    report(9, "VOL1/NNW1 byte round trips and pinned sweep CSV header",
           ok and nets_ok and header_ok,
           f"(volumes {ok}, weights {nets_ok}, header {header_ok})")
