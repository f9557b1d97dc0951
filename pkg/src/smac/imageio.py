"""8-bit image files and the rgb/depth/gt dataset layout.

Binary PGM (P5) and PPM (P6) with maxval 255 are the primary formats.
Non-interlaced 8-bit grayscale or RGB PNGs are also read, by extension.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from smac.errors import DataError, ParseError

IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm", ".png")
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


# ------------------------------------------------------------------ PGM / PPM

def _read_token(buf: bytes, pos: int) -> Tuple[bytes, int, int]:
    """Next whitespace-delimited header token, skipping ``#`` comments.

    Returns (token, start offset, position after the token).
    """
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of header", start)
    return buf[start:pos], start, pos


def _header_int(buf: bytes, pos: int, what: str) -> Tuple[int, int, int]:
    """Returns (value, token start, position after the token)."""
    tok, start, pos = _read_token(buf, pos)
    if not tok.isdigit():
        raise ParseError(f"bad {what} {tok!r}", start)
    return int(tok), start, pos


def decode_pnm(buf: bytes) -> np.ndarray:
    """Decode P5 to (H, W) uint8 or P6 to (H, W, 3) uint8."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {magic!r}", 0)
    pos = 2
    width, width_start, pos = _header_int(buf, pos, "width")
    height, _, pos = _header_int(buf, pos, "height")
    maxval, maxval_start, pos = _header_int(buf, pos, "maxval")
    if width < 1 or height < 1:
        raise ParseError(f"empty image {width}x{height}", width_start)
    if maxval != 255:
        raise ParseError(f"maxval must be 255, got {maxval}", maxval_start)
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after maxval", pos)
    pos += 1
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    if len(buf) - pos < need:
        raise ParseError(f"truncated payload: need {need} bytes, have {len(buf) - pos}", len(buf))
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return data.reshape(shape).copy()


def encode_pnm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise DataError(f"encode_pnm expects uint8, got {img.dtype}")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise DataError(f"cannot encode array of shape {img.shape}")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


# ------------------------------------------------------------------------ PNG

def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, width: int, height: int, bpp: int) -> np.ndarray:
    stride = width * bpp
    if len(raw) != height * (stride + 1):
        raise ParseError(f"PNG image data has {len(raw)} bytes, expected {height * (stride + 1)}")
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(height, stride + 1)
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    for y in range(height):
        ftype = rows[y, 0]
        line = rows[y, 1:]
        if ftype == 0:
            cur = line.copy()
        elif ftype == 2:
            cur = line + prev
        elif ftype in (1, 3, 4):
            # Left-dependent filters run sequentially over pixels.
            cur = np.zeros(stride, dtype=np.uint8)
            for x in range(stride):
                left = int(cur[x - bpp]) if x >= bpp else 0
                up = int(prev[x])
                if ftype == 1:
                    pred = left
                elif ftype == 3:
                    pred = (left + up) // 2
                else:
                    ul = int(prev[x - bpp]) if x >= bpp else 0
                    pred = _paeth(left, up, ul)
                cur[x] = (int(line[x]) + pred) & 0xFF
        else:
            raise ParseError(f"PNG row {y} has unknown filter type {ftype}")
        out[y] = cur
        prev = cur
    return out


def decode_png(buf: bytes) -> np.ndarray:
    if buf[:8] != _PNG_SIGNATURE:
        raise ParseError("not a PNG file", 0)
    pos = 8
    header = None
    idat = []
    while pos < len(buf):
        if pos + 8 > len(buf):
            raise ParseError("truncated chunk header", pos)
        length, ctype = struct.unpack(">I4s", buf[pos:pos + 8])
        body_start = pos + 8
        if body_start + length + 4 > len(buf):
            raise ParseError(f"truncated {ctype!r} chunk", pos)
        body = buf[body_start:body_start + length]
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
            w, h, depth, color, _, _, interlace = header
            if depth != 8:
                raise ParseError(f"only 8-bit PNG is supported, got bit depth {depth}", body_start + 8)
            if color not in (0, 2):
                raise ParseError(f"only gray or RGB PNG is supported, got color type {color}",
                                 body_start + 9)
            if interlace != 0:
                raise ParseError("interlaced PNG is not supported", body_start + 12)
        elif ctype == b"IDAT":
            idat.append(body)
        elif ctype == b"IEND":
            break
        pos = body_start + length + 4
    if header is None:
        raise ParseError("PNG has no IHDR chunk", 8)
    w, h, _, color, _, _, _ = header
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise ParseError(f"corrupt PNG image data: {exc}", pos) from None
    bpp = 1 if color == 0 else 3
    pixels = _unfilter(raw, w, h, bpp)
    return pixels.reshape(h, w) if bpp == 1 else pixels.reshape(h, w, 3)


def encode_png(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim not in (2, 3):
        raise DataError(f"encode_png expects a uint8 gray or RGB array, got {img.dtype} {img.shape}")
    h, w = img.shape[:2]
    color = 0 if img.ndim == 2 else 2
    rows = img.reshape(h, -1)
    raw = b"".join(b"\x00" + rows[y].tobytes() for y in range(h))

    def chunk(kind: bytes, body: bytes) -> bytes:
        return (struct.pack(">I", len(body)) + kind + body
                + struct.pack(">I", zlib.crc32(kind + body) & 0xFFFFFFFF))

    ihdr = struct.pack(">IIBBBBB", w, h, 8, color, 0, 0, 0)
    return _PNG_SIGNATURE + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 9)) \
        + chunk(b"IEND", b"")


# ----------------------------------------------------------------- file level

def load_image(path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    try:
        if path.suffix.lower() == ".png":
            return decode_png(buf)
        return decode_pnm(buf)
    except ParseError as exc:
        err = ParseError(f"{path}: {exc.args[0]}")
        err.offset = exc.offset
        raise err from None


def save_image(path, img: np.ndarray) -> None:
    path = Path(path)
    data = encode_png(img) if path.suffix.lower() == ".png" else encode_pnm(img)
    path.write_bytes(data)


def to_bytes(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to uint8 by rounding to the nearest level."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_gray(path, values: np.ndarray) -> None:
    """Write a [0, 1] map as an 8-bit P5 file."""
    v = np.asarray(values)
    if v.ndim != 2:
        raise DataError(f"save_gray expects a 2-D map, got shape {v.shape}")
    Path(path).write_bytes(encode_pnm(to_bytes(v)))


def to_gray(img: np.ndarray) -> np.ndarray:
    """Collapse an RGB image to one plane; gray images pass through."""
    if img.ndim == 2:
        return img
    return np.floor(img.astype(np.float64) @ np.array([0.299, 0.587, 0.114]) + 0.5).astype(np.uint8)


def to_rgb(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        return img
    return np.repeat(img[:, :, None], 3, axis=2)


# -------------------------------------------------------------------- dataset

@dataclass
class Sample:
    """One RGB-D pair. rgb is (H, W, 3) uint8, depth and gt are (H, W) uint8."""

    stem: str
    rgb: np.ndarray
    depth: np.ndarray
    gt: Optional[np.ndarray] = None

    def check(self) -> None:
        hw = self.rgb.shape[:2]
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise DataError(f"{self.stem}: rgb must be HxWx3, got {self.rgb.shape}")
        if self.depth.shape != hw:
            raise DataError(f"{self.stem}: depth {self.depth.shape} does not match rgb {hw}")
        if self.gt is not None and self.gt.shape != hw:
            raise DataError(f"{self.stem}: gt {self.gt.shape} does not match rgb {hw}")


def _index(folder: Path) -> Dict[str, Path]:
    if not folder.is_dir():
        return {}
    out = {}
    for p in sorted(folder.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES:
            if p.stem in out:
                raise DataError(f"{folder}: stem {p.stem!r} appears twice")
            out[p.stem] = p
    return out


def dataset_stems(root, require_gt: bool = True) -> List[str]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    rgb, depth, gt = (_index(root / d) for d in ("rgb", "depth", "gt"))
    stems = sorted(rgb)
    missing = [s for s in stems if s not in depth or (require_gt and s not in gt)]
    if missing:
        raise DataError(f"{root}: stem {missing[0]!r} lacks a depth or gt file")
    orphans = sorted((set(depth) | set(gt)) - set(rgb))
    if orphans:
        raise DataError(f"{root}: stem {orphans[0]!r} has no rgb file")
    return stems


def load_sample(root, stem: str, require_gt: bool = True) -> Sample:
    root = Path(root)
    rgb, depth, gt = (_index(root / d) for d in ("rgb", "depth", "gt"))
    if stem not in rgb or stem not in depth:
        raise DataError(f"{root}: no rgb/depth pair for {stem!r}")
    gt_img = None
    if stem in gt:
        gt_img = to_gray(load_image(gt[stem]))
    elif require_gt:
        raise DataError(f"{root}: no gt for {stem!r}")
    sample = Sample(stem, to_rgb(load_image(rgb[stem])), to_gray(load_image(depth[stem])), gt_img)
    sample.check()
    return sample


def load_dataset(root, require_gt: bool = True) -> List[Sample]:
    return [load_sample(root, s, require_gt) for s in dataset_stems(root, require_gt)]


def write_sample(root, sample: Sample) -> None:
    """Store a sample in the dataset layout as PPM/PGM files."""
    root = Path(root)
    for sub in ("rgb", "depth", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    save_image(root / "rgb" / f"{sample.stem}.ppm", sample.rgb)
    save_image(root / "depth" / f"{sample.stem}.pgm", sample.depth)
    if sample.gt is not None:
        save_image(root / "gt" / f"{sample.stem}.pgm", sample.gt)
