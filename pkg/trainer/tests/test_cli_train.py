import json

from otre import nnforward as nf
from otre.degrade import DegradeParams
from otre_trainer.cli import main

from traintestutil import make_domain


def test_cli_short_run(tmp_path, capsys):
    low_m = make_domain(tmp_path / "low", 8, 100,
                        degrade_params=DegradeParams(blur_sigma=1.0, noise_std=0.05))
    high_m = make_domain(tmp_path / "high", 8, 500)
    out = tmp_path / "run"
    rc = main([
        "--low", str(low_m), "--high", str(high_m), "--out", str(out),
        "--epochs", "1", "--batch", "4", "--side", "32", "--seed", "3",
        "--depth", "1", "--base-channels", "4", "--lr-d", "1e-4", "--lr-g", "1e-4",
    ])
    assert rc == 0
    final = out / "generator.otre"
    assert final.exists()
    spec, _ = nf.load_weights(final)
    assert spec.depth == 1 and spec.base_channels == 4
    echo = json.loads((out / "config.json").read_text())
    assert echo["epochs"] == 1 and echo["seed"] == 3
    assert "final checkpoint" in capsys.readouterr().out
