"""PNG I/O, luma conversion, bicubic resampling and dataset preparation."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)


class DataError(Exception):
    """Unusable input data: missing, empty, malformed or too small."""


# --------------------------------------------------------------------------
# PNG

def load_png(path) -> np.ndarray:
    """Load an 8-bit PNG as an (h, w, 3) uint8 array; grayscale is expanded."""
    try:
        im = Image.open(path)
        im.load()
    except (OSError, SyntaxError) as e:
        raise DataError(f"{path}: cannot read PNG ({e})") from None
    if im.format != "PNG":
        raise DataError(f"{path}: not a PNG file (format {im.format})")
    if im.mode in ("I;16", "I;16B", "I;16L", "I") or im.info.get("bitdepth", 8) > 8:
        raise DataError(f"{path}: 16-bit PNG is not supported, convert to 8-bit first")
    if im.mode in ("L", "P", "1", "LA", "RGBA", "PA"):
        im = im.convert("RGB")
    elif im.mode != "RGB":
        raise DataError(f"{path}: unsupported PNG mode {im.mode}")
    return np.asarray(im, dtype=np.uint8).copy()


def save_png(img: np.ndarray, path) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) uint8 image, got {img.shape} {img.dtype}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, "RGB").save(path, format="PNG")


def quantize(x: np.ndarray) -> np.ndarray:
    """Round half away from zero and clip to uint8."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.sign(x) * np.floor(np.abs(x) + 0.5), 0, 255).astype(np.uint8)


def to_tensor(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(h, w, 3) uint8 -> (1, 3, h, w) in [0, 1]."""
    return (np.asarray(img, dtype=dtype).transpose(2, 0, 1)[None] / 255).astype(dtype)


def from_tensor(x: np.ndarray) -> np.ndarray:
    """(1, 3, h, w) in [0, 1] -> (h, w, 3) uint8, clamped."""
    return quantize(np.asarray(x[0], dtype=np.float64).transpose(1, 2, 0) * 255)


# --------------------------------------------------------------------------
# colour

def rgb_to_y(img: np.ndarray, full_range: bool = False) -> np.ndarray:
    """BT.601 luma as float64.

    Limited range maps black to 16 and white to 235; ``full_range`` uses
    0..255 luma weights without offset.
    """
    rgb = np.asarray(img, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    if full_range:
        return 0.299 * r + 0.587 * g + 0.114 * b
    return 16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0


# --------------------------------------------------------------------------
# bicubic

def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    return np.where(
        x <= 1, (a + 2) * x3 - (a + 3) * x2 + 1,
        np.where(x < 2, a * x3 - 5 * a * x2 + 8 * a * x - 4 * a, 0.0),
    )


def resize_weights(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """Dense (out_len, in_len) interpolation matrix for one axis.

    Output sample i sits at input coordinate (i + 0.5) * in/out - 0.5.  When
    shrinking, the kernel is stretched by the inverse scale.  Taps falling
    outside the image are folded onto the nearest edge pixel and each row is
    normalized to sum to one.
    """
    scale = out_len / in_len
    stretch = scale < 1 and antialias
    width = 4.0 / scale if stretch else 4.0
    centers = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(centers - width / 2).astype(np.int64)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = centers[:, None] - idx
    w = scale * cubic(dist * scale) if stretch else cubic(dist)
    w /= w.sum(axis=1, keepdims=True)
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, np.clip(idx, 0, in_len - 1).ravel()), w.ravel())
    return mat


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Resize an (h, w) or (h, w, c) image; returns float64 without rounding."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    x = np.asarray(img, dtype=np.float64)
    h, w = x.shape[:2]
    wy = resize_weights(h, out_h, antialias)
    wx = resize_weights(w, out_w, antialias)
    if x.ndim == 2:
        return wy @ x @ wx.T
    return np.einsum("ih,hwc,jw->ijc", wy, x, wx, optimize=True)


def downscale(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h % scale or w % scale:
        raise ValueError(f"{h}x{w} image is not divisible by scale {scale}")
    return quantize(bicubic_resize(img, h // scale, w // scale))


def upscale(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[:2]
    return quantize(bicubic_resize(img, h * scale, w * scale))


def modcrop(img: np.ndarray, multiple: int) -> np.ndarray:
    h, w = img.shape[:2]
    return img[: h - h % multiple, : w - w % multiple]


# --------------------------------------------------------------------------
# datasets

@dataclass
class DatasetItem:
    stem: str
    hr: str
    lr: dict[int, str] = field(default_factory=dict)


@dataclass
class DatasetManifest:
    name: str
    scales: list[int]
    items: list[DatasetItem]
    root: str = "."

    def path(self, rel: str) -> str:
        return rel if os.path.isabs(rel) else os.path.join(self.root, rel)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "scales": list(self.scales),
            "items": [{"hr": it.hr, "lr": {str(s): p for s, p in sorted(it.lr.items())}} for it in self.items],
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)
            f.write("\n")


def load_manifest(path) -> DatasetManifest:
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: cannot read manifest ({e})") from None
    root = os.path.dirname(os.path.abspath(path))
    items, seen = [], set()
    for entry in raw.get("items", []):
        stem = Path(entry["hr"]).stem
        if stem in seen:
            raise DataError(f"{path}: duplicate image stem {stem!r}")
        seen.add(stem)
        items.append(DatasetItem(stem, entry["hr"], {int(s): p for s, p in entry.get("lr", {}).items()}))
    m = DatasetManifest(raw.get("name", Path(path).stem), [int(s) for s in raw.get("scales", [])], items, root)
    for it in m.items:
        for p in [it.hr, *it.lr.values()]:
            if not os.path.exists(m.path(p)):
                raise DataError(f"{path}: referenced file {m.path(p)} does not exist")
    return m


def prepare_dataset(hr_dir, scales, out_dir, name: str | None = None) -> DatasetManifest:
    """Crop HR images to a multiple of every scale and synthesize LR PNGs.

    Writes ``out_dir/HR/<stem>.png``, ``out_dir/LR_x<s>/<stem>.png`` and
    ``out_dir/manifest.json`` (paths relative to ``out_dir``).
    """
    hr_dir, out_dir = Path(hr_dir), Path(out_dir)
    scales = sorted(set(int(s) for s in scales))
    if not hr_dir.is_dir():
        raise DataError(f"{hr_dir}: not a directory")
    files = sorted(hr_dir.glob("*.png"), key=lambda p: p.stem)
    if not files:
        raise DataError(f"{hr_dir}: empty directory, no PNG images found")
    multiple = math.lcm(*scales)
    items = []
    for f in files:
        try:
            img = load_png(f)
        except DataError as e:
            log.warning("skipping %s", e)
            continue
        hr = modcrop(img, multiple)
        if hr.shape[0] == 0 or hr.shape[1] == 0:
            log.warning("skipping %s: smaller than %d pixels", f, multiple)
            continue
        hr_rel = f"HR/{f.stem}.png"
        save_png(hr, out_dir / hr_rel)
        item = DatasetItem(f.stem, hr_rel)
        for s in scales:
            lr_rel = f"LR_x{s}/{f.stem}.png"
            save_png(downscale(hr, s), out_dir / lr_rel)
            item.lr[s] = lr_rel
        items.append(item)
    if not items:
        raise DataError(f"{hr_dir}: no readable PNG images")
    manifest = DatasetManifest(name or hr_dir.name, scales, items, str(out_dir))
    manifest.save(out_dir / "manifest.json")
    return manifest
