import numpy as np
import pytest

from otre import nnforward as nf
from otre.errors import (
    BadMagic,
    LipschitzViolation,
    NonFiniteParam,
    ShapeMismatch,
    VersionUnsupported,
)

from testutil import DATA


@pytest.fixture
def small_spec():
    return nf.GeneratorSpec(depth=1, base_channels=4)


def test_roundtrip_byte_identical(tmp_path, small_spec):
    manifest = nf.random_manifest(small_spec, seed=3)
    p1, p2 = tmp_path / "a.otre", tmp_path / "b.otre"
    nf.save_weights(manifest, p1)
    _, loaded = nf.load_weights(p1)
    nf.save_weights(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_roundtrip_tensors_bitwise(tmp_path, small_spec):
    manifest = nf.random_manifest(small_spec, seed=4)
    p = tmp_path / "w.otre"
    nf.save_weights(manifest, p)
    _, loaded = nf.load_weights(p)
    for a, b in zip(manifest.records, loaded.records):
        assert a.name == b.name and a.kind == b.kind and a.shape == b.shape
        assert np.array_equal(a.data, b.data)
        assert a.sn_sigma == b.sn_sigma


def test_bad_magic(tmp_path, small_spec):
    p = tmp_path / "w.otre"
    nf.save_weights(nf.zero_manifest(small_spec), p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XTRE"
    p.write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        nf.load_weights(p)


def test_unsupported_version(tmp_path, small_spec):
    p = tmp_path / "w.otre"
    manifest = nf.zero_manifest(small_spec)
    manifest.version = 2
    nf.save_weights(manifest, p)
    with pytest.raises(VersionUnsupported):
        nf.load_weights(p)


def test_truncated_file(tmp_path, small_spec):
    from otre.errors import CorruptData

    p = tmp_path / "w.otre"
    nf.save_weights(nf.zero_manifest(small_spec), p)
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(CorruptData):
        nf.load_weights(p)


def test_non_finite_param(tmp_path, small_spec):
    manifest = nf.zero_manifest(small_spec)
    manifest.records[0].data[0] = np.nan
    p = tmp_path / "w.otre"
    nf.save_weights(manifest, p)
    with pytest.raises(NonFiniteParam):
        nf.load_weights(p)


def test_plan_mismatch_detected(tmp_path, small_spec):
    manifest = nf.zero_manifest(small_spec)
    manifest.records = manifest.records[:-1]  # drop the head bias
    p = tmp_path / "w.otre"
    nf.save_weights(manifest, p)
    with pytest.raises(ShapeMismatch):
        nf.load_weights(p)


def test_lipschitz_violation_rejected(tmp_path, small_spec):
    manifest = nf.zero_manifest(small_spec)
    # plant a kernel with top singular value exactly 1.8
    rec = next(r for r in manifest.records if r.kind == nf.KIND_CONV2D)
    mat = np.zeros((rec.shape[0], int(np.prod(rec.shape[1:]))), dtype=np.float32)
    mat[0, 0] = 1.8
    rec.data = mat.ravel()
    rec.sn_sigma = 1.8
    p = tmp_path / "w.otre"
    nf.save_weights(manifest, p)
    with pytest.raises(LipschitzViolation) as err:
        nf.load_weights(p)
    assert err.value.sigma == pytest.approx(1.8, abs=1e-3)
    # the escape hatch used by the CLI's --no-sn-check
    spec, loaded = nf.load_weights(p, verify_sn=False)
    assert loaded.records[0].name == manifest.records[0].name


def test_exported_sigma_within_budget():
    spec, manifest = nf.load_weights(DATA / "golden-gen-d2c4.otre")
    for rec in manifest.records:
        if rec.kind == nf.KIND_CONV2D:
            assert nf.verify_spectral_norm(rec.array()) <= 1.0 + 1e-3


def test_arch_id_parsing_roundtrip():
    for spec in (
        nf.GeneratorSpec(),
        nf.GeneratorSpec(depth=2, base_channels=8, residual_output=False),
        nf.GeneratorSpec(depth=1, base_channels=4, eca_gamma=3, eca_b=2),
    ):
        assert nf.GeneratorSpec.from_arch_id(spec.arch_id) == spec
