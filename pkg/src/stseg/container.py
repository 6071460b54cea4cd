"""On-disk lattice container.

Binary layout, little-endian::

    b"CTCL" | version u32 | T u64 | V+1 u64 | frame_ms f64 | T*(V+1) f32 row-major

The vocabulary lives next to it in ``<stem>.vocab`` (UTF-8, one surface per
line, blank last) and an optional speech mask in ``<stem>.mask`` (one byte
per frame, 1 = speech). Small fixtures may use the JSON mirror instead.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from stseg.lattice import CtcLattice, ValidationError, Vocabulary, make_vocabulary

MAGIC = b"CTCL"
VERSION = 1
_HEADER = struct.Struct("<4sIQQd")


class ContainerError(ValueError):
    pass


class MagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class TruncationError(ContainerError):
    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


class NormalizationError(ValidationError):
    pass


def vocab_path(path: Path) -> Path:
    return Path(path).with_suffix(".vocab")


def mask_path(path: Path) -> Path:
    return Path(path).with_suffix(".mask")


def write_vocabulary(path: Path, vocab: Vocabulary) -> None:
    if vocab.blank_id != vocab.width - 1:
        raise ValidationError("container vocabularies store the blank last")
    Path(path).write_text("\n".join(vocab.surfaces) + "\n", encoding="utf-8")


def read_vocabulary(path: Path) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ContainerError(f"{path}: empty vocabulary")
    return make_vocabulary(lines[:-1], lines[-1])


def save_lattice(path: Path, lattice: CtcLattice, vocab: Vocabulary,
                 mask: np.ndarray | None = None) -> None:
    lattice.check_vocabulary(vocab)
    path = Path(path)
    if path.suffix == ".json":
        doc = {
            "format": "CTCL-json",
            "version": VERSION,
            "frame_duration_ms": lattice.frame_duration_ms,
            "vocabulary": list(vocab.surfaces),
            "log_probs": [[None if v == -np.inf else float(v) for v in row]
                          for row in lattice.log_probs],
        }
        if mask is not None:
            doc["speech_mask"] = [int(b) for b in mask]
        path.write_text(json.dumps(doc), encoding="utf-8")
        return
    header = _HEADER.pack(MAGIC, VERSION, lattice.frames, lattice.width,
                          float(lattice.frame_duration_ms))
    body = lattice.log_probs.astype("<f4").tobytes()
    path.write_bytes(header + body)
    write_vocabulary(vocab_path(path), vocab)
    if mask is not None:
        mask_path(path).write_bytes(np.asarray(mask, dtype=np.uint8).tobytes())


def _as_lattice(log_probs: np.ndarray, frame_ms: float) -> CtcLattice:
    try:
        return CtcLattice(log_probs, frame_ms)
    except ValidationError as exc:
        raise NormalizationError(str(exc)) from exc


def load_lattice_file(path: Path) -> tuple[CtcLattice, Vocabulary]:
    """Read and validate a lattice plus its vocabulary."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("version") != VERSION:
            raise VersionError(f"{path}: unsupported version {doc.get('version')}")
        surfaces = doc["vocabulary"]
        vocab = make_vocabulary(surfaces[:-1], surfaces[-1])
        rows = np.array([[-np.inf if v is None else v for v in row] for row in doc["log_probs"]],
                        dtype=np.float64).reshape(-1, vocab.width)
        lattice = _as_lattice(rows, float(doc["frame_duration_ms"]))
        return lattice, vocab

    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise TruncationError(
            f"{path}: header truncated at byte {len(data)} (need {_HEADER.size})", len(data))
    magic, version, frames, width, frame_ms = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    need = _HEADER.size + 4 * frames * width
    if len(data) < need:
        raise TruncationError(
            f"{path}: payload truncated at byte {len(data)} (need {need})", len(data))
    rows = np.frombuffer(data, dtype="<f4", count=frames * width, offset=_HEADER.size)
    lattice = _as_lattice(rows.astype(np.float64).reshape(frames, width), frame_ms)
    vocab = read_vocabulary(vocab_path(path))
    lattice.check_vocabulary(vocab)
    return lattice, vocab


def load_mask_sidecar(path: Path) -> np.ndarray | None:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        mask = doc.get("speech_mask")
        return None if mask is None else np.array(mask, dtype=bool)
    mp = mask_path(path)
    if not mp.exists():
        return None
    return np.frombuffer(mp.read_bytes(), dtype=np.uint8).astype(bool)
