"""Checkpoint directories: ``manifest.json`` plus one raw little-endian array file per name."""

from __future__ import annotations

import json
import os
import re
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT = "latte-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    step: int
    config: dict
    config_hash: str
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        """Arrays under ``prefix/``, with the prefix stripped."""
        p = prefix + "/"
        return {k[len(p) :]: v for k, v in self.arrays.items() if k.startswith(p)}


def _filename(name: str, used: set) -> str:
    base = re.sub(r"[^A-Za-z0-9_.-]", "_", name)
    out, i = base, 1
    while out in used:
        out, i = f"{base}.{i}", i + 1
    used.add(out)
    return out + ".bin"


def save_checkpoint(directory: str | os.PathLike, step: int, config: dict, config_hash: str, arrays: dict, meta=None) -> Path:
    """Write atomically: everything goes to a sibling temp dir that is renamed into place."""
    target = Path(directory)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        index, used = {}, set()
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype.kind != "f" or arr.dtype.itemsize not in (4, 8):
                raise ValueError(f"{name}: only 32/64-bit float arrays are stored, got {arr.dtype}")
            dtype = np.dtype(f"<f{arr.dtype.itemsize}")
            fname = _filename(name, used)
            np.ascontiguousarray(arr, dtype=dtype).tofile(tmp / fname)
            index[name] = {"file": fname, "shape": list(arr.shape), "dtype": dtype.str}
        manifest = {
            "format": FORMAT,
            "version": VERSION,
            "step": int(step),
            "config": config,
            "config_hash": config_hash,
            "arrays": index,
            "meta": meta or {},
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        if target.exists():
            shutil.rmtree(target)
        os.replace(tmp, target)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return target


def load_checkpoint(directory: str | os.PathLike) -> Checkpoint:
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(f"no checkpoint manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise ValueError(f"{mpath}: not a version-{VERSION} {FORMAT}")
    arrays = {}
    for name, entry in manifest["arrays"].items():
        shape = tuple(entry["shape"])
        data = np.fromfile(d / entry["file"], dtype=np.dtype(entry["dtype"]))
        if data.size != int(np.prod(shape)):
            raise ValueError(f"{name}: file holds {data.size} values, manifest says shape {shape}")
        arrays[name] = data.reshape(shape)
    return Checkpoint(manifest["step"], manifest["config"], manifest["config_hash"], arrays, manifest.get("meta", {}))
