"""OTRE checkpoint writer (the producer side of the wire format).

Deliberately independent of the reader in `otre.nnforward`; byte-layout per
docs/weight-format.md in the main repo.  Every conv kernel is renormalized by
its exact top singular value when above 1 and its measured sigma is recorded,
so exported files always pass the loader's Lipschitz gate.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from otre.nnforward import (
    KIND_BIAS,
    KIND_CONV2D,
    KIND_ECA,
    GeneratorSpec,
    layer_plan,
)

from .models import Generator

_KIND_BYTE = {KIND_CONV2D: 0, KIND_ECA: 1, "norm": 2, KIND_BIAS: 3}
_FORMAT_VERSION = 1


def _pack_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _pack_record(buf: io.BytesIO, name: str, kind: str, shape, data: np.ndarray,
                 sn_sigma: float | None) -> None:
    _pack_str(buf, name)
    buf.write(struct.pack("<BB", _KIND_BYTE[kind], len(shape)))
    buf.write(struct.pack(f"<{len(shape)}I", *shape))
    if sn_sigma is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<Bd", 1, float(sn_sigma)))
    buf.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def export_generator(model: Generator, path) -> Path:
    """Serialize a trained generator to an OTRE file; returns the path."""
    spec: GeneratorSpec = model.spec
    buf = io.BytesIO()
    buf.write(b"OTRE")
    buf.write(struct.pack("<H", _FORMAT_VERSION))
    _pack_str(buf, spec.arch_id)
    plan = layer_plan(spec)
    buf.write(struct.pack("<I", len(plan)))
    for name, kind, shape in plan:
        if kind == KIND_CONV2D:
            w = model.conv(name).weight.detach().cpu().numpy().astype(np.float64)
            mat = w.reshape(w.shape[0], -1)
            sigma = float(np.linalg.svd(mat, compute_uv=False)[0]) if mat.any() else 0.0
            if sigma > 1.0:
                w = w / sigma
            w32 = w.astype(np.float32)
            sigma32 = float(
                np.linalg.svd(w32.astype(np.float64).reshape(w.shape[0], -1),
                              compute_uv=False)[0]
            )
            _pack_record(buf, name, kind, shape, w32.ravel(),
                         sigma32 if sigma32 > 0 else None)
        elif kind == KIND_BIAS:
            b = model.conv(name[: -len(".bias")]).bias.detach().cpu().numpy()
            _pack_record(buf, name, kind, shape, b.astype(np.float32).ravel(), None)
        elif kind == KIND_ECA:
            k = model.eca(name[: -len(".eca")]).weight.detach().cpu().numpy()
            _pack_record(buf, name, kind, shape, k.astype(np.float32).ravel(), None)
        else:
            raise ValueError(f"unexpected record kind {kind} in plan")
    path = Path(path)
    path.write_bytes(buf.getvalue())
    return path


def import_generator(path) -> Generator:
    """Load an OTRE file back into a torch generator (for warm starts)."""
    from otre.nnforward import load_weights
    import torch

    spec, manifest = load_weights(path)
    model = Generator(spec)
    by_name = manifest.by_name()
    with torch.no_grad():
        for name, kind, shape in layer_plan(spec):
            arr = torch.from_numpy(by_name[name].array().astype(np.float32))
            if kind == KIND_CONV2D:
                model.conv(name).weight.data = arr
            elif kind == KIND_BIAS:
                model.conv(name[: -len(".bias")]).bias.data = arr
            elif kind == KIND_ECA:
                model.eca(name[: -len(".eca")]).weight.data = arr
    return model
