"""File formats: DRFT tensors, KITTI-style 16-bit PNGs and flat text records."""
from __future__ import annotations

import struct
from pathlib import Path

import cv2
import numpy as np

MAGIC = b"DRFT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_HEADER = struct.Struct("<4sHBB")

FLOW_SCALE = 64.0
FLOW_OFFSET = 2**15
DEPTH_SCALE = 256.0


class FormatError(OSError):
    """A file exists but does not hold what the reader expects."""


# ---------------------------------------------------------------- DRFT tensors


def encode_tensor(array: np.ndarray) -> bytes:
    a = np.asarray(array)
    if a.dtype == np.bool_:
        code, payload = 1, a.astype("u1")
    elif np.issubdtype(a.dtype, np.number):
        code, payload = 0, a.astype("<f4")
    else:
        raise ValueError(f"unsupported dtype {a.dtype}")
    if a.ndim > 255:
        raise ValueError("rank too large")
    head = _HEADER.pack(MAGIC, VERSION, code, a.ndim)
    dims = struct.pack(f"<{a.ndim}I", *a.shape)
    return head + dims + np.ascontiguousarray(payload).tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, code, rank = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    off = _HEADER.size
    if len(data) < off + 4 * rank:
        raise FormatError("truncated dims")
    dims = struct.unpack_from(f"<{rank}I", data, off)
    off += 4 * rank
    dt = _DTYPES[code]
    n = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(data) - off != n:
        raise FormatError(f"payload is {len(data) - off} bytes, expected {n}")
    a = np.frombuffer(data, dtype=dt, offset=off).reshape(dims)
    return a.astype(bool) if code == 1 else a.copy()


def write_tensor(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# ---------------------------------------------------------------- 16-bit PNGs


def _read_png16(path, flags):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    img = cv2.imread(str(path), flags)
    if img is None:
        raise FormatError(f"{path}: not a readable PNG")
    if img.dtype != np.uint16:
        raise FormatError(f"{path}: expected 16-bit samples, got {img.dtype}")
    return img


def _write_png(path, img):
    if not cv2.imwrite(str(path), img):
        raise OSError(f"could not write {path}")


def write_kitti_flow_png(path, flow: np.ndarray, valid: np.ndarray | None = None) -> None:
    """Store flow as ``u * 64 + 2**15`` in 16-bit RGB, validity in the third channel.

    Representable components lie in ``[-512, 511.984375]``; anything outside
    raises ``ValueError`` instead of wrapping around.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    if valid is None:
        valid = np.ones(flow.shape[:2], dtype=bool)
    q = np.rint(flow * FLOW_SCALE + FLOW_OFFSET)
    if not np.all(np.isfinite(q)) or q.min() < 0 or q.max() > 65535:
        raise ValueError("flow outside the representable range")
    rgb = np.dstack([q[..., 0], q[..., 1], np.asarray(valid, dtype=np.float64)]).astype(np.uint16)
    _write_png(path, rgb[..., ::-1])  # OpenCV stores BGR


def read_kitti_flow_png(path) -> tuple[np.ndarray, np.ndarray]:
    img = _read_png16(path, cv2.IMREAD_UNCHANGED)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"{path}: expected 3 channels")
    rgb = img[..., ::-1].astype(np.float64)
    flow = (rgb[..., :2] - FLOW_OFFSET) / FLOW_SCALE
    return flow, rgb[..., 2] > 0


def write_depth_png16(path, depth: np.ndarray, valid: np.ndarray | None = None) -> None:
    """Depth in 1/256 m steps; 0 marks invalid pixels. Depths must stay below 256 m."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError("depth must be 2D")
    ok = np.isfinite(depth) & (depth > 0)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    q = np.where(ok, np.rint(depth * DEPTH_SCALE), 0.0)
    if q.max(initial=0) > 65535:
        raise ValueError("depth outside the representable range")
    _write_png(path, q.astype(np.uint16))


def read_depth_png16(path) -> tuple[np.ndarray, np.ndarray]:
    img = _read_png16(path, cv2.IMREAD_UNCHANGED)
    if img.ndim != 2:
        raise FormatError(f"{path}: expected a single channel")
    depth = img.astype(np.float64) / DEPTH_SCALE
    return depth, img > 0


def write_image_png(path, image: np.ndarray) -> None:
    """8-bit preview of an image in [0, 1] (lossy; use DRFT for exact data)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    q = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
    _write_png(path, q[..., ::-1] if q.ndim == 3 else q)


def write_mask_png(path, mask: np.ndarray) -> None:
    _write_png(path, np.asarray(mask, dtype=bool).astype(np.uint8) * 255)


def read_mask_png(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None or img.ndim != 2:
        raise FormatError(f"{path}: expected a single-channel PNG")
    return img > 0


# ---------------------------------------------------------------- records


def format_record(values: dict) -> str:
    """``name=value`` lines sorted by name; floats in shortest round-trip form."""
    lines = []
    for k in sorted(values):
        v = values[k]
        if isinstance(v, (bool, np.bool_)):
            v = int(v)
        if isinstance(v, (float, np.floating)):
            v = repr(float(v))
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def parse_record(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"line {n}: expected name=value")
        k, v = line.split("=", 1)
        try:
            out[k] = int(v) if v.lstrip("-").isdigit() else float(v)
        except ValueError:
            out[k] = v
    return out


def write_record(path, values: dict) -> None:
    Path(path).write_text(format_record(values))


def read_record(path) -> dict:
    return parse_record(Path(path).read_text())
