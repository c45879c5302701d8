"""otre: unpaired retinal image enhancement toolkit.

Feed-forward enhancement with a UNet/ECA generator (spectrally normalized,
custom OTRE weight format) refined per image by an accelerated-gradient
solver that pairs an MS-SSIM data fidelity with the enhancer-induced prior
R(x) = 0.5 * x^T (x - G(x)).
"""

__version__ = "0.1.0"
