"""Training hyperparameters."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from otre.nnforward import GeneratorSpec

MODE_LOW2HIGH = "low2high"
MODE_DEG2HIGH = "deg2high"


@dataclass
class TrainConfig:
    """Resolved training configuration (echoed to disk next to checkpoints).

    Defaults follow the production recipe: domain weight 60, identity weight
    20, gradient-penalty 10, RMSProp at 1e-4 (critic) / 5e-5 (generator) with
    a 10x decay every 100 epochs.
    """

    alpha: float = 60.0
    beta: float = 20.0
    lambda_gp: float = 10.0
    lr_d: float = 1e-4
    lr_g: float = 5e-5
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 100
    epochs: int = 200
    batch: int = 8
    image_side: int = 256
    seed: int = 0
    mode: str = MODE_DEG2HIGH
    critic_steps: int = 1
    label_matched: bool | None = None  # None: match whenever grades exist
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    checkpoint_every: int = 0  # 0: final checkpoint only

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.lambda_gp > 0):
            raise ValueError("alpha, beta and lambda_gp must be > 0")
        # lr 0 is allowed: a zero-learning-rate epoch is the canonical
        # plumbing check that updates really flow through the optimizers
        if self.lr_d < 0 or self.lr_g < 0:
            raise ValueError("learning rates must be >= 0")
        if self.mode not in (MODE_LOW2HIGH, MODE_DEG2HIGH):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.batch < 1 or self.epochs < 1 or self.critic_steps < 1:
            raise ValueError("batch, epochs and critic_steps must be >= 1")

    def echo(self, path) -> None:
        data = asdict(self)
        data["generator"] = self.generator.arch_id
        Path(path).write_text(json.dumps(data, indent=2))
