"""Critic and generator losses.

Critic (per sample, averaged):  D(x_fake) - D(x_real) + lambda * penalty,
with the one-sided gradient penalty (||grad D(x_hat)||_2 - 1)_+^2 evaluated
at x_hat = eps*x_real + (1-eps)*x_fake.  Minimizing this is ascent on the
Wasserstein-1 estimate E[D(real)] - E[D(fake)].

Generator (batch mean):  -D(G(y)) + alpha * Ld(y, G(y)) + beta * Lidt(x, G(x)),
where both costs are the structural dissimilarity 1 - MS-SSIM.
"""

from __future__ import annotations

import torch

from otre.imagekit import SsimParams

from .msssim import msssim_loss


def gradient_penalty(critic, x_real: torch.Tensor, x_fake: torch.Tensor,
                     eps: torch.Tensor) -> torch.Tensor:
    """One-sided penalty, mean over the batch; eps is (B,) uniform in [0,1]."""
    eps = eps.view(-1, 1, 1, 1).to(x_real)
    x_hat = (eps * x_real + (1.0 - eps) * x_fake).detach().requires_grad_(True)
    scores = critic(x_hat)
    grads = torch.autograd.grad(scores.sum(), x_hat, create_graph=True)[0]
    norms = grads.reshape(grads.shape[0], -1).norm(dim=1)
    return torch.clamp(norms - 1.0, min=0.0).pow(2).mean()


def critic_loss(critic, x_real: torch.Tensor, x_fake: torch.Tensor,
                lambda_gp: float, eps: torch.Tensor) -> torch.Tensor:
    wass = critic(x_fake).mean() - critic(x_real).mean()
    return wass + lambda_gp * gradient_penalty(critic, x_real, x_fake, eps)


def generator_loss(generator, critic, y_batch: torch.Tensor, x_batch: torch.Tensor,
                   alpha: float, beta: float,
                   ssim_params: SsimParams | None = None) -> torch.Tensor:
    fake = generator(y_batch)
    loss = -critic(fake).mean()
    loss = loss + alpha * msssim_loss(y_batch, fake, ssim_params)
    loss = loss + beta * msssim_loss(x_batch, generator(x_batch), ssim_params)
    return loss
