"""Adversarial trainer for the otre enhancement generator.

Unpaired low->high quality translation trained as a Wasserstein-1 critic
scheme with a one-sided gradient penalty, MS-SSIM domain-transport and
identity costs, label-matched batch sampling, RMSProp updates, and spectral
normalization of every generator convolution.  Checkpoints are written in
the OTRE container the inference package consumes.
"""

__version__ = "0.1.0"
