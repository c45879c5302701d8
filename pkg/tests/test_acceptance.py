"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with `pytest -v -s tests/test_acceptance.py` to see the per-criterion
lines.  These tests are intentionally self-contained end-to-end checks; the
fine-grained unit coverage lives in the other test modules.
"""

import csv
import json
import time

import numpy as np
import pytest

from otre import cli, imagekit as ik, nnforward as nf, reopt
from otre.degrade import DegradeParams, degrade
from otre.errors import LipschitzViolation

from testutil import DATA, smooth_image
from test_msssim_grad import fd_gradient_at, relative_error, sample_coords
from test_nnforward_ops import naive_conv2d
from test_reopt import accel_iters, linear_instance, plain_gd_iters


def report(name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {name}: {status}" + (f"  ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def test_msssim_gradient_suite():
    t0 = time.time()
    worst, total = 0.0, 0
    for seed in range(10):
        rng = np.random.default_rng(4000 + seed)
        x = np.clip(smooth_image(seed) + rng.normal(0, 0.05, (3, 64, 64)), 0.02, 0.98)
        y = np.clip(smooth_image(seed + 77) + rng.normal(0, 0.05, (3, 64, 64)), 0.02, 0.98)
        res = ik.ms_ssim_with_grad(x, y)
        for coord in sample_coords(rng, x.shape, 100):
            worst = max(worst, relative_error(res.grad[coord], fd_gradient_at(x, y, coord)))
            total += 1
    self_ok = True
    for seed in range(3):
        x = smooth_image(seed + 200)
        r = ik.ms_ssim_with_grad(x, x)
        self_ok &= abs(r.value - 1.0) <= 1e-6 and np.abs(r.grad).max() <= 1e-6
    elapsed = time.time() - t0
    report(
        "ms-ssim gradient suite",
        total >= 1000 and worst <= 1e-4 and self_ok and elapsed < 60,
        f"{total} coords, worst rel err {worst:.2e}, self-sim ok={self_ok}, {elapsed:.1f}s",
    )


def test_closed_form_metric_values():
    a = np.full((3, 32, 32), 0.2)
    b = np.full((3, 32, 32), 0.4)
    ssim_val = ik.ssim(a, b)
    x = np.full((3, 32, 32), 0.45)
    psnr_val = ik.psnr(x, x + 0.1)
    report(
        "closed-form metric values",
        abs(ssim_val - 0.80011) <= 1e-4 and abs(psnr_val - 20.0) <= 1e-6,
        f"ssim {ssim_val:.6f}, psnr {psnr_val:.8f} dB",
    )


def test_re_linear_oracle():
    t0 = time.time()
    gammas = [0.1, 1.0, 10.0]
    step_frac = {0.1: 0.1, 1.0: 0.25, 10.0: 0.5}
    wins, worst_rel, worst_iters = 0, 0.0, 0
    for i in range(50):
        gamma = gammas[i % 3]
        a, y, x_star, lip = linear_instance(7000 + i, gamma)
        eta = step_frac[gamma] / lip
        cfg = reopt.ReConfig(gamma=gamma, eta=eta, tol=0.0, max_iters=400, fidelity="quadratic")
        res = reopt.refine(y, np.full(len(y), 0.5), cfg, lambda v: a @ v)
        rel = np.linalg.norm(res.x_star - x_star) / np.linalg.norm(x_star)
        worst_rel = max(worst_rel, rel)
        worst_iters = max(worst_iters, res.iters)
        target = 1e-5 * np.linalg.norm(x_star)
        if accel_iters(a, y, x_star, gamma, eta, target) < plain_gd_iters(
            a, y, x_star, gamma, eta, target
        ):
            wins += 1
    elapsed = time.time() - t0
    report(
        "re linear oracle",
        worst_rel <= 1e-5 and wins >= 40 and elapsed < 60,
        f"worst rel {worst_rel:.2e} (<=400 iters), accel wins {wins}/50, {elapsed:.1f}s",
    )


def test_nesterov_recurrence_and_stopping():
    t1 = reopt.nesterov_t(1.0)
    ok_t1 = abs(t1 - (1 + np.sqrt(5)) / 2) <= 1e-6
    cfg_inf = reopt.ReConfig(gamma=0.0, eta=0.1, tol=np.inf, max_iters=400, fidelity="quadratic")
    one = reopt.refine(np.full(9, 0.8), np.full(9, 0.2), cfg_inf, lambda v: v)
    cfg_zero = reopt.ReConfig(gamma=0.0, eta=0.05, tol=0.0, max_iters=33, fidelity="quadratic")
    full = reopt.refine(np.full(9, 0.8), np.full(9, 0.2), cfg_zero, lambda v: v)
    report(
        "nesterov t1 + stopping-rule boundaries",
        ok_t1 and one.iters == 1 and full.iters == 33,
        f"t1={t1!r}, tol=inf iters={one.iters}, tol=0 iters={full.iters}",
    )


@pytest.mark.xfail(
    strict=True,
    reason="stated t2 value contradicts the recurrence this same criterion pins: "
    "t2 = (1+sqrt(1+4*t1^2))/2 = 2.1935271, not 2.1180339 (= t1 + 1/2, the value "
    "obtained if the '1+' under the radical is dropped)",
)
def test_nesterov_t2_value_as_stated():
    t2 = reopt.nesterov_t(reopt.nesterov_t(1.0))
    ok = abs(t2 - 2.1180339) <= 1e-6
    report("nesterov t2 as stated", ok, f"t2={t2!r}, stated 2.1180339, recurrence 2.1935271")


def test_spectral_norm_suite():
    rng = np.random.default_rng(4242)
    worst = 0.0
    for _ in range(50):
        kernel = rng.normal(size=(16, 16, 3, 3))
        est = nf.verify_spectral_norm(kernel)
        ref = np.linalg.svd(kernel.reshape(16, -1), compute_uv=False)[0]
        worst = max(worst, abs(est - ref) / ref)
    # loader must reject a constructed sigma=1.8 layer
    spec = nf.GeneratorSpec(depth=1, base_channels=4)
    manifest = nf.zero_manifest(spec)
    rec = next(r for r in manifest.records if r.kind == nf.KIND_CONV2D)
    flat = np.zeros(int(np.prod(rec.shape)), dtype=np.float32)
    flat[0] = 1.8
    rec.data = flat
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        path = f"{d}/bad.otre"
        nf.save_weights(manifest, path)
        try:
            nf.load_weights(path)
            rejected = False
        except LipschitzViolation:
            rejected = True
    report(
        "spectral norm power iteration + loader gate",
        worst <= 1e-3 and rejected,
        f"worst rel err {worst:.2e} over 50 kernels, sigma=1.8 rejected={rejected}",
    )


def test_generator_identity_and_op_oracles():
    spec = nf.GeneratorSpec(depth=2, base_channels=4)
    gen = nf.Generator(spec, nf.zero_manifest(spec))
    rng = np.random.default_rng(31)
    x = rng.uniform(0, 1, (3, 16, 16))
    identity_ok = np.array_equal(gen(x), x)

    conv_worst = 0.0
    rng = np.random.default_rng(32)
    for _ in range(50):
        cin, cout = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        k = int(rng.choice([1, 3, 5]))
        stride, padding = int(rng.choice([1, 2])), int(rng.integers(0, 3))
        h, w = int(rng.integers(k, k + 8)), int(rng.integers(k, k + 8))
        xi = rng.normal(size=(cin, h, w))
        kern = rng.normal(size=(cout, cin, k, k))
        bias = rng.normal(size=cout)
        got = nf.conv2d_forward(xi, kern, bias, stride=stride, padding=padding)
        ref = naive_conv2d(xi, kern, bias, stride, padding)
        conv_worst = max(conv_worst, np.abs(got - ref).max())

    eca_worst = 0.0
    for _ in range(50):
        ch = int(rng.integers(1, 10))
        klen = int(rng.choice([1, 3, 5]))
        xi = rng.normal(size=(ch, 4, 4))
        kern = rng.normal(size=klen)
        got = nf.eca_forward(xi, kern)
        pooled = xi.mean(axis=(1, 2))
        padded = np.pad(pooled, (klen - 1) // 2)
        for ci in range(ch):
            score = sum(kern[t] * padded[ci + t] for t in range(klen))
            ref = xi[ci] / (1.0 + np.exp(-score))
            eca_worst = max(eca_worst, np.abs(got[ci] - ref).max())
    report(
        "generator identity + conv/eca oracles",
        identity_ok and conv_worst <= 1e-6 and eca_worst <= 1e-6,
        f"identity bitwise={identity_ok}, conv worst {conv_worst:.2e}, eca worst {eca_worst:.2e}",
    )


def test_weight_roundtrip_and_golden_forward(tmp_path):
    spec, manifest = nf.load_weights(DATA / "golden-gen-d2c4.otre")
    p1, p2 = tmp_path / "a.otre", tmp_path / "b.otre"
    nf.save_weights(manifest, p1)
    _, again = nf.load_weights(p1)
    nf.save_weights(again, p2)
    roundtrip_ok = p1.read_bytes() == p2.read_bytes()

    x = np.load(DATA / "golden-input-8x8.npy")
    expect = np.load(DATA / "golden-output-8x8.npy")
    got = nf.generator_forward(spec, manifest, x).astype(np.float32)
    golden_ok = np.array_equal(got, expect)
    report(
        "weight round-trip + golden 8x8 forward",
        roundtrip_ok and golden_ok,
        f"roundtrip byte-identical={roundtrip_ok}, golden exact={golden_ok}",
    )


def test_end_to_end_synthetic_recovery(tmp_path):
    t0 = time.time()
    clean_dir, deg_dir = tmp_path / "clean", tmp_path / "deg"
    clean_dir.mkdir()
    deg_dir.mkdir()
    baselines = []
    for i in range(20):
        c = smooth_image(9000 + i, side=64)
        d = degrade(c, DegradeParams(blur_sigma=1.0, noise_std=0.05, seed=7000 + i))
        ik.save_image(c, clean_dir / f"im{i:02d}.png")
        ik.save_image(d, deg_dir / f"im{i:02d}.png")
        baselines.append(
            ik.psnr(ik.load_image(deg_dir / f"im{i:02d}.png"), ik.load_image(clean_dir / f"im{i:02d}.png"))
        )
    baseline = float(np.mean(baselines))

    def run(weights, out):
        rc = cli.main([
            "enhance", "--weights", str(weights), "--input", str(deg_dir),
            "--output", str(out), "--side", "64", "--refine", "--gamma", "1e-3",
            "--reference", str(clean_dir),
        ])
        sidecar = json.loads((out / "report.json").read_text())
        return rc, sidecar["aggregates"]["mean_psnr"]

    rc1, psnr_id = run(DATA / "identity-d1c4.otre", tmp_path / "out_id")
    rc2, psnr_toy = run(DATA / "toy-denoiser-d2c8.otre", tmp_path / "out_toy")
    elapsed = time.time() - t0
    report(
        "end-to-end synthetic recovery",
        rc1 == 0 and rc2 == 0
        and psnr_id >= baseline - 0.1
        and psnr_toy >= baseline + 1.0
        and elapsed < 300,
        f"baseline {baseline:.2f} dB, identity+RE {psnr_id:.2f} dB, "
        f"toy+RE {psnr_toy:.2f} dB (gain {psnr_toy - baseline:+.2f}), {elapsed:.0f}s",
    )
