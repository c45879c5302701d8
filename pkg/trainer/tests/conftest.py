import pytest

from otre.degrade import DegradeParams
from otre_trainer.data import ImageStore

from traintestutil import make_domain


@pytest.fixture
def tiny_domains(tmp_path):
    """Two small ungraded domains (low: degraded, high: clean), side 32."""
    low = make_domain(tmp_path / "low", 12, 100,
                      degrade_params=DegradeParams(blur_sigma=1.0, noise_std=0.05))
    high = make_domain(tmp_path / "high", 12, 500)
    return ImageStore.open(low, 32), ImageStore.open(high, 32)
