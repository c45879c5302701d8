import csv
import json

import numpy as np
import pytest
import torch

from otre import nnforward as nf
from otre.degrade import DegradeParams
from otre_trainer.config import TrainConfig
from otre_trainer.data import ImageStore
from otre_trainer.train import critic_only_steps, train

from traintestutil import make_domain


def tiny_cfg(**kw):
    base = dict(
        epochs=1, batch=4, image_side=32, seed=2,
        generator=nf.GeneratorSpec(depth=1, base_channels=4),
        alpha=10.0, beta=5.0, lr_d=1e-3, lr_g=5e-4,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_zero_learning_rate_epoch_is_bitwise_noop(tmp_path, tiny_domains):
    low, high = tiny_domains
    torch.manual_seed(2)
    cfg = tiny_cfg(lr_d=0.0, lr_g=0.0)

    # reach into the loop via a deterministic rebuild: run once to capture the
    # initial projected parameters, then run a zero-lr epoch and compare
    from otre_trainer.models import Critic, Generator

    torch.manual_seed(cfg.seed)
    ref_gen = Generator(cfg.generator)
    ref_gen.project_spectral()
    ref_critic = Critic()
    gen_before = {k: v.clone() for k, v in ref_gen.state_dict().items()}
    critic_before = {k: v.clone() for k, v in ref_critic.state_dict().items()}

    final = train(low, high, cfg, tmp_path / "run")

    spec, manifest = nf.load_weights(final, verify_sn=False)
    trained = {r.name: r for r in manifest.records}
    for name, kind, shape in nf.layer_plan(cfg.generator):
        if kind == nf.KIND_CONV2D:
            expect = ref_gen.conv(name).weight.detach().numpy().astype(np.float32)
        elif kind == nf.KIND_BIAS:
            expect = ref_gen.conv(name[:-5]).bias.detach().numpy().astype(np.float32)
        else:
            expect = ref_gen.eca(name[:-4]).weight.detach().numpy().astype(np.float32)
        got = trained[name].data.reshape(shape)
        assert np.array_equal(got, expect.reshape(shape)), f"{name} changed"


def test_training_artifacts_written(tmp_path, tiny_domains):
    low, high = tiny_domains
    cfg = tiny_cfg(epochs=2, checkpoint_every=1)
    final = train(low, high, cfg, tmp_path / "run")
    out = tmp_path / "run"
    assert final.exists()
    cfg_echo = json.loads((out / "config.json").read_text())
    assert cfg_echo["seed"] == cfg.seed
    assert cfg_echo["alpha"] == cfg.alpha
    assert cfg_echo["generator"] == cfg.generator.arch_id
    with open(out / "training-log.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2
    assert {"epoch", "wasserstein_estimate", "critic_loss", "generator_loss"} <= rows[0].keys()
    assert (out / "checkpoint-0001.otre").exists()
    # the exported checkpoint passes the strict loader (incl. SN gate)
    nf.load_weights(final)


def test_lr_decay_schedule(tmp_path, tiny_domains):
    low, high = tiny_domains
    cfg = tiny_cfg(epochs=1)
    from otre_trainer.train import _decayed

    assert _decayed(1e-4, 0, cfg) == pytest.approx(1e-4)
    assert _decayed(1e-4, 99, cfg) == pytest.approx(1e-4)
    assert _decayed(1e-4, 100, cfg) == pytest.approx(1e-5)
    assert _decayed(1e-4, 199, cfg) == pytest.approx(1e-5)
    assert _decayed(5e-5, 200, cfg) == pytest.approx(5e-7)


def test_critic_only_wasserstein_trend(tmp_path):
    # separable toy domains: dark (low) vs bright (high); with G frozen to the
    # identity the critic's Wasserstein estimate must grow over 100 steps
    passing = 0
    for seed in range(5):
        low_m = make_domain(tmp_path / f"low{seed}", 16, 100 + seed, brightness=0.15)
        high_m = make_domain(tmp_path / f"high{seed}", 16, 500 + seed, brightness=0.55)
        low, high = ImageStore.open(low_m, 32), ImageStore.open(high_m, 32)
        cfg = tiny_cfg(seed=seed, lr_d=1e-4)  # production critic rate: no warmup spike
        est = critic_only_steps(low, high, cfg, steps=100)
        if np.mean(est[-10:]) > np.mean(est[:10]):
            passing += 1
    assert passing >= 4, f"trend held on only {passing}/5 seeds"
