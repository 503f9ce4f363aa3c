"""Checkpoint persistence: a JSON manifest plus a little-endian float32 blob.

Layout of ``weights.bin``: the arrays listed in ``manifest["arrays"]``
concatenated in order, each flattened in C order as ``<f4``. Each entry
records name, shape, element offset and element count. The manifest also
stores the blob's SHA-256.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..errors import ChecksumError, FormatError, VersionError
from ..renewal import ObserverState
from .config import ModelSpec
from .model import Network

CHECKPOINT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "weights.bin"


@dataclass
class Checkpoint:
    network: Network
    epoch: int = 0
    rng_state: dict | None = None
    config: dict = field(default_factory=dict)
    switches: dict = field(default_factory=dict)

    @property
    def spec(self) -> ModelSpec:
        return self.network.spec


def _layer_scalars(net: Network):
    out = {}
    for layer in net.all_layers:
        d = {"sq_ready": layer.sq_ready, "obs_w": layer.obs_w.to_dict()}
        if hasattr(layer, "v1_ready"):
            d["v1_ready"] = [bool(b) for b in layer.v1_ready]
            d["obs_s"] = [o.to_dict() for o in layer.obs_s]
        out[layer.name] = d
    return out


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    os.makedirs(path, exist_ok=True)
    arrays, chunks, offset = [], [], 0
    for name, arr in ckpt.network.state_arrays():
        a = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
        arrays.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes())
        offset += a.size
    blob = b"".join(chunks)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "epoch": ckpt.epoch,
        "model": ckpt.network.spec.to_dict(),
        "config": ckpt.config,
        "rng_state": ckpt.rng_state,
        "switches": ckpt.switches,
        "layers": _layer_scalars(ckpt.network),
        "dtype": "<f4",
        "arrays": arrays,
        "blob": BLOB,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(os.path.join(path, BLOB), "wb") as f:
        f.write(blob)
    with open(os.path.join(path, MANIFEST), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def load_checkpoint(path) -> Checkpoint:
    mpath = os.path.join(path, MANIFEST)
    try:
        with open(mpath) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{mpath}: invalid manifest ({e})", e.pos) from e
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise VersionError(
            f"checkpoint format version {version} is not supported by this build "
            f"(reads version {CHECKPOINT_VERSION}); re-export it with a matching release")
    with open(os.path.join(path, manifest.get("blob", BLOB)), "rb") as f:
        blob = f.read()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["blob_sha256"]:
        raise ChecksumError(f"{path}: blob checksum {digest[:12]}... does not match manifest "
                            f"{manifest['blob_sha256'][:12]}...")
    data = np.frombuffer(blob, dtype="<f4")
    spec = ModelSpec.from_dict(manifest["model"])
    net = Network(spec, seed=0)
    targets = dict(net.state_arrays())
    for entry in manifest["arrays"]:
        name = entry["name"]
        if name not in targets:
            raise FormatError(f"{path}: unknown array {name!r}")
        vals = data[entry["offset"]:entry["offset"] + entry["count"]]
        if vals.size != entry["count"]:
            raise FormatError(f"{path}: blob too short for {name}", 4 * entry["offset"])
        targets[name][...] = vals.reshape(entry["shape"])
    for layer in net.all_layers:
        d = manifest["layers"][layer.name]
        layer.sq_ready = d["sq_ready"]
        layer.obs_w = ObserverState.from_dict(d["obs_w"])
        if "v1_ready" in d:
            layer.v1_ready[:] = d["v1_ready"]
            layer.obs_s = [ObserverState.from_dict(o) for o in d["obs_s"]]
    return Checkpoint(net, manifest["epoch"], manifest.get("rng_state"), manifest.get("config", {}),
                      manifest.get("switches", {}))
