"""The unpaired adversarial training loop.

Strict alternation per batch: critic step(s) minimizing the gradient-penalty
critic loss, then one generator step minimizing
-D(G(y)) + alpha*Ld + beta*Lidt, both with RMSProp; generator convolutions
are spectrally projected after every update.  Checkpoints go out in the OTRE
container together with a CSV log (per-epoch Wasserstein estimate and losses)
and a JSON echo of the resolved configuration.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np
import torch

from otre.imagekit import SsimParams

from .config import TrainConfig
from .data import ImageStore, PairSampler
from .export import export_generator
from .losses import critic_loss, generator_loss
from .models import Critic, Generator

log = logging.getLogger(__name__)


def _decayed(base: float, epoch: int, cfg: TrainConfig) -> float:
    drops = epoch // cfg.lr_decay_every
    return base / (cfg.lr_decay_factor ** drops)


def train(low_store: ImageStore, high_store: ImageStore, cfg: TrainConfig,
          out_dir) -> Path:
    """Run the full schedule; returns the path of the final OTRE checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.echo(out_dir / "config.json")

    torch.manual_seed(cfg.seed)
    gen = Generator(cfg.generator)
    gen.project_spectral()
    critic = Critic()
    opt_d = torch.optim.RMSprop(critic.parameters(), lr=cfg.lr_d)
    opt_g = torch.optim.RMSprop(gen.parameters(), lr=cfg.lr_g)
    sampler = PairSampler(low_store, high_store, cfg.batch, seed=cfg.seed,
                          label_matched=cfg.label_matched)
    ssim_params = SsimParams().truncated_for(cfg.image_side, cfg.image_side)
    eps_rng = torch.Generator().manual_seed(cfg.seed + 1)

    log_path = out_dir / "training-log.csv"
    with open(log_path, "w", newline="") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(["epoch", "wasserstein_estimate", "critic_loss", "generator_loss",
                         "lr_d", "lr_g"])
        for epoch in range(cfg.epochs):
            lr_d = _decayed(cfg.lr_d, epoch, cfg)
            lr_g = _decayed(cfg.lr_g, epoch, cfg)
            for group in opt_d.param_groups:
                group["lr"] = lr_d
            for group in opt_g.param_groups:
                group["lr"] = lr_g

            d_losses, g_losses, wass = [], [], []
            for step, pair in enumerate(sampler):
                y, x = pair.low, pair.high
                for _ in range(cfg.critic_steps):
                    with torch.no_grad():
                        fake = gen(y)
                    eps = torch.rand(y.shape[0], generator=eps_rng)
                    loss_d = critic_loss(critic, x, fake, cfg.lambda_gp, eps)
                    opt_d.zero_grad()
                    loss_d.backward()
                    opt_d.step()
                loss_g = generator_loss(gen, critic, y, x, cfg.alpha, cfg.beta, ssim_params)
                opt_g.zero_grad()
                loss_g.backward()
                opt_g.step()
                gen.project_spectral()
                d_losses.append(float(loss_d.detach()))
                g_losses.append(float(loss_g.detach()))
                if step % 5 == 0:
                    with torch.no_grad():
                        wass.append(float(critic(x).mean() - critic(gen(y)).mean()))
            writer.writerow([
                epoch, f"{np.mean(wass):.6g}", f"{np.mean(d_losses):.6g}",
                f"{np.mean(g_losses):.6g}", lr_d, lr_g,
            ])
            log_file.flush()
            log.info("epoch %d: W~%.4g, L_D %.4g, L_G %.4g",
                     epoch, np.mean(wass), np.mean(d_losses), np.mean(g_losses))
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                export_generator(gen, out_dir / f"checkpoint-{epoch + 1:04d}.otre")

    final = export_generator(gen, out_dir / "generator.otre")
    return final


def critic_only_steps(low_store: ImageStore, high_store: ImageStore, cfg: TrainConfig,
                      steps: int) -> list[float]:
    """Train only the critic against a frozen identity generator; returns the
    per-step Wasserstein estimates (a sanity probe for the critic plumbing)."""
    torch.manual_seed(cfg.seed)
    critic = Critic()
    opt_d = torch.optim.RMSprop(critic.parameters(), lr=cfg.lr_d)
    sampler = PairSampler(low_store, high_store, cfg.batch, seed=cfg.seed,
                          label_matched=cfg.label_matched)
    eps_rng = torch.Generator().manual_seed(cfg.seed + 1)
    estimates: list[float] = []
    done = 0
    while done < steps:
        for pair in sampler:
            if done >= steps:
                break
            y, x = pair.low, pair.high
            eps = torch.rand(y.shape[0], generator=eps_rng)
            loss_d = critic_loss(critic, x, y, cfg.lambda_gp, eps)
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()
            with torch.no_grad():
                estimates.append(float(critic(x).mean() - critic(y).mean()))
            done += 1
    return estimates
