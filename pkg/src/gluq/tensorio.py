"""Binary tensor files and the directory layouts built from them.

A tensor file is::

    b"GLUQ1" | u32 rank | rank x u64 dims | u8 dtype tag | payload | u32 crc32(payload)

all little-endian, payload row-major float64. Bases, datasets and model
checkpoints are directories of such files plus a ``manifest.json``.
"""

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptFile

MAGIC = b"GLUQ1"
F64 = 1
_DTYPES = {F64: np.dtype("<f8")}


def encode_tensor(array):
    a = np.asarray(array, dtype="<f8")
    payload = a.tobytes(order="C")
    head = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape) + bytes([F64])
    return head + payload + struct.pack("<I", zlib.crc32(payload))


def decode_tensor(blob, source="<bytes>"):
    def bad(msg):
        return CorruptFile(f"{source}: {msg}")

    if blob[:5] != MAGIC:
        raise bad("bad magic")
    pos = 5
    if len(blob) < pos + 4:
        raise bad("truncated header")
    (rank,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + 8 * rank + 1:
        raise bad("truncated header")
    dims = struct.unpack_from(f"<{rank}Q", blob, pos)
    pos += 8 * rank
    tag = blob[pos]
    pos += 1
    if tag not in _DTYPES:
        raise bad(f"unknown dtype tag {tag}")
    size = 8 * int(np.prod(dims, dtype=np.int64))
    if len(blob) != pos + size + 4:
        raise bad(f"expected {size} payload bytes plus checksum, file has {len(blob) - pos}")
    payload = blob[pos:pos + size]
    (crc,) = struct.unpack_from("<I", blob, pos + size)
    if zlib.crc32(payload) != crc:
        raise bad("checksum mismatch")
    return np.frombuffer(payload, dtype=_DTYPES[tag]).reshape(dims).astype(float)


def write_tensor(path, array):
    """Write ``array`` and return the SHA-256 of the file."""
    blob = encode_tensor(array)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_tensor(path):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise CorruptFile(f"{path}: missing") from None
    return decode_tensor(blob, str(path))


def file_digest(path):
    # a CRC over a file that ends in its own CRC is length-determined, so hash instead
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path} not found") from None
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: {exc}") from None


def write_bundle(directory, tensors, meta):
    """Write named tensors plus a manifest listing their SHA-256 digests."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, array in tensors.items():
        hashes[name] = write_tensor(directory / f"{name}.gluq", array)
    write_json(directory / "manifest.json", {"meta": meta, "tensors": hashes})
    return hashes


def read_bundle(directory):
    """(tensors, meta); raises CorruptFile if a file disagrees with the manifest."""
    directory = Path(directory)
    manifest = read_json(directory / "manifest.json")
    tensors = {}
    for name, digest in manifest["tensors"].items():
        path = directory / f"{name}.gluq"
        tensors[name] = read_tensor(path)
        if file_digest(path) != digest:
            raise CorruptFile(f"{path}: checksum differs from manifest")
    return tensors, manifest["meta"]


# --- typed layouts -------------------------------------------------------------

def save_basis(directory, basis):
    meta = {"kind": "kle_basis", "n": basis.grid.n, "q": basis.q,
            "length_scale": basis.kernel.length_scale, "mean": basis.kernel.mean}
    return write_bundle(directory, {"eigenvalues": basis.eigenvalues,
                                    "eigenvectors": basis.eigenvectors}, meta)


def load_basis(directory):
    from .random_field import ExpKernel, Grid2D, KLEBasis
    t, meta = read_bundle(directory)
    _expect(meta, "kle_basis", directory)
    kernel = ExpKernel(length_scale=meta["length_scale"], mean=meta["mean"])
    vecs = t["eigenvectors"].reshape(meta["n"] ** 2, meta["q"])
    return KLEBasis(Grid2D(meta["n"]), kernel, t["eigenvalues"].reshape(meta["q"]), vecs)


def save_dataset(directory, K, Y, Z, meta=None):
    meta = dict(meta or {}, kind="dataset", count=int(len(K)))
    return write_bundle(directory, {"K": K, "Y": Y, "Z": Z}, meta)


def load_dataset(directory):
    t, meta = read_bundle(directory)
    _expect(meta, "dataset", directory)
    return t["K"], t["Y"], t["Z"], meta


def save_checkpoint(directory, model, meta=None):
    tensors = {f"param.{n}": p.data for n, p in model.named_parameters()}
    tensors.update({f"buffer.{n}": b for n, b in sorted(model.buffers.items())})
    for i, gate in enumerate(model.gates):
        tensors[f"gate.{i}.normals"] = gate.normals
        tensors[f"gate.{i}.offsets"] = gate.offsets
    info = dict(meta or {}, kind="checkpoint", config=model.config.to_dict(), norm=model.norm)
    return write_bundle(directory, tensors, info)


def load_checkpoint(directory):
    """Rebuild a model; parameters are written into the built tensors in place."""
    from .ggln import HalfSpaceGate
    from .glu_net import GLUNetConfig, GLUNetModel, build_model
    t, meta = read_bundle(directory)
    _expect(meta, "checkpoint", directory)
    config = GLUNetConfig.from_dict(meta["config"])
    skeleton = build_model(config, seed=0)
    gates = [HalfSpaceGate(t[f"gate.{i}.normals"], t[f"gate.{i}.offsets"]) for i in range(config.gln_neurons)]
    model = GLUNetModel(config, skeleton.params, skeleton.buffers, gates, meta.get("norm") or {})
    for name, p in model.named_parameters():
        src = t[f"param.{name}"]
        if src.shape != p.data.shape:
            raise CorruptFile(f"{directory}: {name} has shape {src.shape}, config expects {p.data.shape}")
        p.data[...] = src
    for name, buf in model.buffers.items():
        buf[...] = t[f"buffer.{name}"]
    return model, meta


def _expect(meta, kind, directory):
    if meta.get("kind") != kind:
        raise ConfigError(f"{directory} holds a {meta.get('kind')!r}, expected {kind!r}")
