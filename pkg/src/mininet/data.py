"""Dataset ingestion: manifests, image decoding, resizing, augmentation.

Manifest files are line-delimited UTF-8 text, one record per line:

    <id>\t<image_path>\t<mask_path>\t<split>

``#`` starts a comment, blank lines are skipped, relative paths resolve
against the manifest's directory, and split is train, val or test.

NetPBM P5/P6 (8-bit) images decode natively; PNG goes through Pillow.
Images are resized bilinearly and scaled to [0,1]; masks are resized with
nearest-neighbor and binarized at 127/255, which keeps them exactly {0,1}.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------------------
# NetPBM codec
# ---------------------------------------------------------------------------


def _read_pnm_token(buf: io.BytesIO) -> bytes:
    token = b""
    while True:
        ch = buf.read(1)
        if not ch:
            raise DataError("netpbm: header ended unexpectedly")
        if ch == b"#":
            while ch and ch != b"\n":
                ch = buf.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def decode_netpbm(raw: bytes) -> np.ndarray:
    """Decode binary P5 (gray) or P6 (RGB) bytes to a uint8 (C, H, W) array."""
    buf = io.BytesIO(raw)
    magic = buf.read(2)
    if magic not in (b"P5", b"P6"):
        raise DataError(f"netpbm: unsupported magic {magic!r}, expected P5 or P6")
    width = int(_read_pnm_token(buf))
    height = int(_read_pnm_token(buf))
    maxval = int(_read_pnm_token(buf))
    if not 0 < maxval < 256:
        raise DataError(f"netpbm: only 8-bit images supported, maxval={maxval}")
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    data = buf.read(count)
    if len(data) != count:
        raise DataError(f"netpbm: raster truncated, expected {count} bytes, "
                        f"got {len(data)}")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def encode_pgm(gray: np.ndarray) -> bytes:
    """uint8 (H, W) -> binary P5 bytes."""
    arr = np.ascontiguousarray(gray, dtype=np.uint8)
    h, w = arr.shape
    return b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes()


def encode_ppm(rgb: np.ndarray) -> bytes:
    """uint8 (3, H, W) -> binary P6 bytes."""
    arr = np.ascontiguousarray(rgb, dtype=np.uint8)
    _, h, w = arr.shape
    return b"P6\n%d %d\n255\n" % (w, h) + arr.transpose(1, 2, 0).tobytes()


def write_pgm(path, gray: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(gray))


def write_ppm(path, rgb: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(rgb))


# ---------------------------------------------------------------------------
# Decoding and resizing
# ---------------------------------------------------------------------------

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def decode_image_file(path) -> np.ndarray:
    """Decode a P5/P6 or 8-bit PNG file to uint8 (C, H, W)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    raw = path.read_bytes()
    if raw[:2] in (b"P5", b"P6"):
        return decode_netpbm(raw)
    if raw[:8] == _PNG_MAGIC:
        try:
            with Image.open(io.BytesIO(raw)) as img:
                if img.mode == "L":
                    arr = np.asarray(img, dtype=np.uint8)[None]
                else:
                    arr = np.asarray(img.convert("RGB"),
                                     dtype=np.uint8).transpose(2, 0, 1)
        except Exception as exc:
            raise DataError(f"undecodable PNG {path}: {exc}") from None
        return np.ascontiguousarray(arr)
    raise DataError(f"{path}: unsupported image format (need NetPBM P5/P6 or PNG)")


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-aligned bilinear resize of a float32 (C, H, W) image."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.astype(np.float32, copy=True)
    sy = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    sx = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0).astype(np.float32)[None, :, None]
    wx = (sx - x0).astype(np.float32)[None, None, :]
    f = img.astype(np.float32)
    top = f[:, y0][:, :, x0] * (1 - wx) + f[:, y0][:, :, x1] * wx
    bot = f[:, y1][:, :, x0] * (1 - wx) + f[:, y1][:, :, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize; preserves the source value set."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return np.ascontiguousarray(img[:, ys][:, :, xs])


def to_channel_mode(arr: np.ndarray, mode: str) -> np.ndarray:
    """Replicate gray to RGB or average RGB down to gray (float32 input)."""
    c = arr.shape[0]
    if mode == "rgb":
        if c == 3:
            return arr
        if c == 1:
            return np.repeat(arr, 3, axis=0)
    elif mode == "gray":
        if c == 1:
            return arr
        if c == 3:
            return arr.mean(axis=0, keepdims=True, dtype=np.float32)
    else:
        raise DataError(f"unknown channel mode {mode!r}")
    raise DataError(f"cannot convert a {c}-channel image to mode {mode!r}")


# ---------------------------------------------------------------------------
# Manifests and datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    record_id: str
    image_path: str
    mask_path: str
    split: str


@dataclass
class DatasetManifest:
    records: list
    target_size: tuple  # (H, W), both divisible by 4
    channel_mode: str = "rgb"
    base_dir: Path = Path(".")

    def __post_init__(self):
        h, w = self.target_size
        if h % 4 or w % 4:
            raise DataError(f"target size {h}x{w} must be divisible by 4")
        if self.channel_mode not in ("rgb", "gray"):
            raise DataError(f"unknown channel mode {self.channel_mode!r}")

    def count(self, split: str) -> int:
        return sum(1 for r in self.records if r.split == split)


def parse_manifest(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(
                f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}"
            )
        rid, image_path, mask_path, split = (p.strip() for p in parts)
        if split not in SPLITS:
            raise DataError(
                f"{path}:{lineno}: unknown split {split!r}, expected one of {SPLITS}"
            )
        records.append(ManifestRecord(rid, image_path, mask_path, split))
    if not records:
        raise DataError(f"{path}: manifest holds no records")
    return records


def load_manifest(path, target_size, channel_mode: str = "rgb") -> DatasetManifest:
    records = parse_manifest(path)
    return DatasetManifest(records, tuple(target_size), channel_mode,
                           Path(path).resolve().parent)


@dataclass
class LoadedSample:
    record: ManifestRecord
    image: np.ndarray  # float32 (C, H, W) in [0, 1]
    mask: np.ndarray   # float32 (1, H, W) in {0, 1}


class LoadedDataset:
    def __init__(self, samples, manifest: DatasetManifest):
        self.samples = samples
        self.manifest = manifest

    def split(self, name: str) -> list:
        return [s for s in self.samples if s.record.split == name]

    def __len__(self):
        return len(self.samples)


def load_dataset(manifest: DatasetManifest) -> LoadedDataset:
    """Decode every record eagerly; any bad record fails the load with a
    diagnostic naming it."""
    h, w = manifest.target_size
    samples = []
    problems = []
    for rec in manifest.records:
        try:
            image = _load_image(manifest.base_dir / rec.image_path,
                                manifest.channel_mode, h, w)
            mask = _load_mask(manifest.base_dir / rec.mask_path, h, w)
        except DataError as exc:
            problems.append(f"record {rec.record_id!r}: {exc}")
            continue
        samples.append(LoadedSample(rec, image, mask))
    if problems:
        raise DataError("; ".join(problems))
    return LoadedDataset(samples, manifest)


def _load_image(path, channel_mode, h, w):
    arr = decode_image_file(path).astype(np.float32) / np.float32(255.0)
    arr = to_channel_mode(arr, channel_mode)
    return resize_bilinear(arr, h, w)


def _load_mask(path, h, w):
    arr = decode_image_file(path).astype(np.float32)
    if arr.shape[0] == 3:
        arr = arr.mean(axis=0, keepdims=True, dtype=np.float32)
    arr = resize_nearest(arr, h, w)
    return (arr >= 127.5).astype(np.float32)  # 127/255 ingest threshold


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentFlags:
    hflip: bool = False
    vflip: bool = False
    rot90: bool = False

    @property
    def any(self) -> bool:
        return self.hflip or self.vflip or self.rot90


def augment_pair(image, mask, flags: AugmentFlags, rng: np.random.Generator):
    """Apply the enabled transforms, each drawn from the given generator."""
    if flags.hflip and rng.integers(2):
        image = image[:, :, ::-1]
        mask = mask[:, :, ::-1]
    if flags.vflip and rng.integers(2):
        image = image[:, ::-1, :]
        mask = mask[:, ::-1, :]
    if flags.rot90:
        # quarter turns only keep the shape on square images
        k = int(rng.integers(4)) if image.shape[1] == image.shape[2] \
            else int(rng.integers(2)) * 2
        if k:
            image = np.rot90(image, k, axes=(1, 2))
            mask = np.rot90(mask, k, axes=(1, 2))
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)
