"""On-disk formats: binary tensor container, dataset directories, checkpoints.

Array container layout (all integers little-endian):

    8-byte magic | u32 version | u32 rank | rank x u32 dims | u32 CRC32 | f32 payload

Datasets are a directory of ``samples/NNNNN.aud`` / ``NNNNN.mot`` files plus a
``manifest.json`` carrying the world seed, dimensions, and per-clip latents.
Checkpoints are a single file: magic, u32 header length, JSON header naming
each parameter tensor, then one array record per name. All writes go to a
temporary file first and are renamed into place, so no partial artifact is
ever visible under its final name.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .synth import Clip, LatentSpec, SynthWorld, WorldParams

ARRAY_MAGIC = b"EMOFACE\x00"
CKPT_MAGIC = b"EMOCKPT\x00"
FORMAT_VERSION = 1


class DatasetVersionError(ValueError):
    """File magic or format version is not one this reader understands."""


class TruncatedFileError(ValueError):
    """File ends before the header or payload it promises."""


class ChecksumError(ValueError):
    """Payload bytes do not match the stored CRC32."""


def _atomic_write(path: str, payload: bytes):
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def array_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f4")
    shape = arr.shape  # captured before ascontiguousarray, which promotes 0-d to 1-d
    payload = np.ascontiguousarray(arr).tobytes()
    header = ARRAY_MAGIC + struct.pack("<II", FORMAT_VERSION, len(shape))
    header += struct.pack(f"<{len(shape)}I", *shape)
    header += struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    return header + payload


def parse_array(buf: bytes, name: str, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one array record starting at ``offset``; returns (array, end)."""
    end_fixed = offset + len(ARRAY_MAGIC) + 8
    if len(buf) < end_fixed:
        raise TruncatedFileError(f"{name}: file ends inside the fixed header")
    if buf[offset : offset + 8] != ARRAY_MAGIC:
        raise DatasetVersionError(f"{name}: bad magic, not an array container")
    version, rank = struct.unpack_from("<II", buf, offset + 8)
    if version != FORMAT_VERSION:
        raise DatasetVersionError(f"{name}: format version {version}, reader supports {FORMAT_VERSION}")
    dims_end = end_fixed + 4 * rank + 4
    if len(buf) < dims_end:
        raise TruncatedFileError(f"{name}: file ends inside the dimension header")
    dims = struct.unpack_from(f"<{rank}I", buf, end_fixed)
    (crc,) = struct.unpack_from("<I", buf, end_fixed + 4 * rank)
    n = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload_end = dims_end + 4 * n
    if len(buf) < payload_end:
        raise TruncatedFileError(f"{name}: payload truncated ({len(buf) - dims_end} of {4 * n} bytes)")
    payload = buf[dims_end:payload_end]
    if (zlib.crc32(payload) & 0xFFFFFFFF) != crc:
        raise ChecksumError(f"{name}: CRC32 mismatch, payload corrupted")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy(), payload_end


def write_array(path: str, arr: np.ndarray):
    _atomic_write(path, array_bytes(arr))


def read_array(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = parse_array(buf, os.path.basename(path))
    if end != len(buf):
        raise TruncatedFileError(f"{os.path.basename(path)}: {len(buf) - end} trailing bytes")
    return arr


# ---------------------------------------------------------------------------
# dataset directories


def write_dataset(dir_path: str, world: SynthWorld, clips: list[Clip]) -> dict:
    """Write clips + manifest; returns the manifest dict."""
    samples = os.path.join(dir_path, "samples")
    os.makedirs(samples, exist_ok=True)
    records = []
    for i, clip in enumerate(clips):
        stem = f"{i:05d}"
        write_array(os.path.join(samples, stem + ".aud"), clip.audio)
        write_array(os.path.join(samples, stem + ".mot"), clip.motion)
        records.append(
            {
                "id": stem,
                "emotion_id": clip.spec.emotion_id,
                "intensity": clip.spec.intensity,
                "identity_id": clip.spec.identity_id,
                "content_seed": clip.spec.content_seed,
                "duration": clip.duration,
            }
        )
    p = world.params
    manifest = {
        "format_version": FORMAT_VERSION,
        "world_seed": world.seed,
        "n_emotions": p.n_emotions,
        "n_identities": p.n_identities,
        "d_exp": p.d_exp,
        "d_audio": p.d_audio,
        "n_vertices": p.n_vertices,
        "sigma_noise": p.sigma_noise,
        "fps": p.fps,
        "audio_rate": p.audio_rate,
        "count": len(clips),
        "clips": records,
    }
    _atomic_write(os.path.join(dir_path, "manifest.json"), json.dumps(manifest, sort_keys=True, indent=1).encode())
    return manifest


def read_manifest(dir_path: str) -> dict:
    path = os.path.join(dir_path, "manifest.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest.json in {dir_path}")
    with open(path, "rb") as f:
        manifest = json.loads(f.read())
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetVersionError(f"manifest format version {version}, reader supports {FORMAT_VERSION}")
    return manifest


def world_from_manifest(manifest: dict) -> SynthWorld:
    params = WorldParams(
        n_emotions=manifest["n_emotions"],
        n_identities=manifest["n_identities"],
        d_exp=manifest["d_exp"],
        d_audio=manifest["d_audio"],
        n_vertices=manifest["n_vertices"],
        sigma_noise=manifest["sigma_noise"],
        fps=manifest["fps"],
        audio_rate=manifest["audio_rate"],
    )
    return SynthWorld(manifest["world_seed"], params)


def read_dataset(dir_path: str) -> tuple[SynthWorld, list[Clip]]:
    """Load a dataset directory; validates version and checksums before use."""
    manifest = read_manifest(dir_path)
    world = world_from_manifest(manifest)
    clips = []
    for rec in manifest["clips"]:
        stem = os.path.join(dir_path, "samples", rec["id"])
        spec = LatentSpec(
            emotion_id=rec["emotion_id"],
            intensity=rec["intensity"],
            identity_id=rec["identity_id"],
            content_seed=rec["content_seed"],
        )
        clips.append(
            Clip(
                audio=read_array(stem + ".aud"),
                motion=read_array(stem + ".mot"),
                spec=spec,
                duration=rec["duration"],
            )
        )
    return world, clips


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str, arrays: dict[str, np.ndarray], meta: dict | None = None):
    header = json.dumps({"version": FORMAT_VERSION, "names": list(arrays), "meta": meta or {}}, sort_keys=True).encode()
    blob = CKPT_MAGIC + struct.pack("<I", len(header)) + header
    for name in arrays:
        blob += array_bytes(arrays[name])
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    _atomic_write(path, blob)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    name = os.path.basename(path)
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 12:
        raise TruncatedFileError(f"{name}: file ends inside the fixed header")
    if buf[:8] != CKPT_MAGIC:
        raise DatasetVersionError(f"{name}: bad magic, not a checkpoint")
    (hlen,) = struct.unpack_from("<I", buf, 8)
    if len(buf) < 12 + hlen:
        raise TruncatedFileError(f"{name}: file ends inside the JSON header")
    header = json.loads(buf[12 : 12 + hlen])
    if header.get("version") != FORMAT_VERSION:
        raise DatasetVersionError(f"{name}: checkpoint version {header.get('version')}, reader supports {FORMAT_VERSION}")
    arrays = {}
    offset = 12 + hlen
    for tensor_name in header["names"]:
        arrays[tensor_name], offset = parse_array(buf, f"{name}:{tensor_name}", offset)
    return arrays, header.get("meta", {})


def save_model(path: str, model, meta: dict | None = None):
    """Persist a Module's parameters in declaration order."""
    arrays = {f"p{i:04d}": a for i, a in enumerate(model.state_arrays())}
    save_checkpoint(path, arrays, meta)


def load_model(path: str, model) -> dict:
    """Load parameters saved by :func:`save_model` into a same-shaped Module."""
    arrays, meta = load_checkpoint(path)
    model.load_state_arrays(list(arrays.values()))
    return meta
