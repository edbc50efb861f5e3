"""Binary model checkpoints and resumable training state.

Layout (little-endian)::

    magic "LDCK" | u16 version | u16 kind | u32 n_dims | u32 dims[n_dims]
    | 32-byte catalog sha256 | u32 n_blocks
    | per block: u16 name length, name, u8 ndim, u32 shape[ndim], f32 data
"""
from __future__ import annotations

import io
import json
import struct
import zipfile
from pathlib import Path

import numpy as np

from . import baseline, nmt
from .catalog import RailcarCatalog

MAGIC = b"LDCK"
VERSION = 1
KIND_NMT = 1
KIND_BASELINE = 2


class CheckpointError(ValueError):
    pass


def _write(fh, kind: int, dims, catalog_hash: str, blocks) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<HHI", VERSION, kind, len(dims)))
    fh.write(struct.pack(f"<{len(dims)}I", *dims))
    fh.write(bytes.fromhex(catalog_hash))
    fh.write(struct.pack("<I", len(blocks)))
    for name, arr in blocks:
        raw = name.encode()
        fh.write(struct.pack("<H", len(raw)) + raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read(fh):
    if fh.read(4) != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, kind, n_dims = struct.unpack("<HHI", fh.read(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    dims = struct.unpack(f"<{n_dims}I", fh.read(4 * n_dims))
    digest = fh.read(32).hex()
    (n_blocks,) = struct.unpack("<I", fh.read(4))
    blocks = {}
    for _ in range(n_blocks):
        (n,) = struct.unpack("<H", fh.read(2))
        name = fh.read(n).decode()
        (ndim,) = struct.unpack("<B", fh.read(1))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(fh.read(4 * count), dtype="<f4")
        if data.size != count:
            raise CheckpointError(f"truncated block {name}")
        blocks[name] = data.reshape(shape).astype(np.float64)
    return kind, dims, digest, blocks


def save_model(path: str | Path, params, catalog: RailcarCatalog) -> None:
    if isinstance(params, nmt.NmtParams):
        kind, dims = KIND_NMT, params.dims.as_tuple()
        blocks = [(n, params.blocks[n]) for n in nmt.BLOCKS]
    elif isinstance(params, baseline.BaselineParams):
        kind, dims = KIND_BASELINE, params.sizes
        blocks = [(n, params.blocks[n]) for n in params.names()]
    else:
        raise TypeError(f"cannot checkpoint {type(params).__name__}")
    buf = io.BytesIO()
    _write(buf, kind, dims, catalog.hash, blocks)
    Path(path).write_bytes(buf.getvalue())


def load_model(path: str | Path, catalog: RailcarCatalog | None = None):
    """NmtParams or BaselineParams; with ``catalog`` given its hash must match."""
    with open(path, "rb") as fh:
        try:
            kind, dims, digest, blocks = _read(fh)
        except struct.error as exc:
            raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if catalog is not None and digest != catalog.hash:
        raise CheckpointError("checkpoint was trained on a different catalog")
    if kind == KIND_NMT:
        src, tgt, e, h, a = dims
        return nmt.NmtParams(nmt.NmtDims(src, tgt, e, h, a), blocks)
    if kind == KIND_BASELINE:
        return baseline.BaselineParams(tuple(dims), blocks)
    raise CheckpointError(f"unknown model kind {kind}")


def checkpoint_hash(path: str | Path) -> str:
    with open(path, "rb") as fh:
        return _read(fh)[2]


# ---------------------------------------------------------------------------
# resumable training state (float64, numpy archive)


def save_state(path: str | Path, state) -> None:
    arrays = {}
    for k, v in state.params.blocks.items():
        arrays[f"params/{k}"] = v
    if state.best is not None:
        for k, v in state.best.blocks.items():
            arrays[f"best/{k}"] = v
    for k, v in state.optimizer.state().items():
        arrays[f"opt/{k}"] = v
    if isinstance(state, nmt.TrainState):
        meta_dims = list(state.params.dims.as_tuple())
        kind = "nmt"
    else:
        meta_dims = list(state.params.sizes)
        kind = "baseline"
    meta = {
        "kind": kind,
        "dims": meta_dims,
        "optimizer": type(state.optimizer).__name__.lower(),
        "lr": getattr(state.optimizer, "lr", None),
        "epoch": state.epoch,
        "best_loss": state.best_loss,
        "bad_epochs": state.bad_epochs,
        "history": [vars(r) for r in state.history],
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    # np.savez stamps members with the current time; a fixed stamp keeps the archive reproducible
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_state(path: str | Path):
    z = np.load(path)
    meta = json.loads(bytes(z["meta"]).decode())

    def grab(prefix):
        return {k[len(prefix):]: np.array(z[k]) for k in z.files if k.startswith(prefix)}

    params, best = grab("params/"), grab("best/")
    if meta["kind"] == "nmt":
        src, tgt, e, h, a = meta["dims"]
        dims = nmt.NmtDims(src, tgt, e, h, a)
        p = nmt.NmtParams(dims, params)
        b = nmt.NmtParams(dims, best) if best else None
        cls = nmt.TrainState
    else:
        p = baseline.BaselineParams(tuple(meta["dims"]), params)
        b = baseline.BaselineParams(p.sizes, best) if best else None
        cls = baseline.BaselineTrainState
    opt = nmt.make_optimizer(meta["optimizer"], p.blocks, meta.get("lr"))
    opt.load(grab("opt/"))
    history = [nmt.EpochRecord(**r) for r in meta["history"]]
    return cls(p, opt, meta["epoch"], b, meta["best_loss"], meta["bad_epochs"], history)
