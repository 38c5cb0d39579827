"""Image quality metrics, complexity accounting and inference timing.

Reports
-------
EvalReport CSV columns: ``name, psnr, ssim, bicubic_psnr, bicubic_ssim``;
the last row is named ``mean``.  Infinite PSNR (identical images) is
written as ``inf`` per image and capped at ``PSNR_CAP`` dB in the mean.

ComplexityReport CSV columns: ``layer, c_in, c_out, k, params, macs,
flops``; the last row is named ``total``.  FLOPs are 2 * MACs plus one
add per output element for the bias; activations are not counted.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imageio import quantize, rgb_to_y
from .model import ModelGraph, model_forward

PSNR_CAP = 100.0

# Published Set5 bicubic baselines (PSNR dB, SSIM) by scale.
SET5_BICUBIC = {2: (33.66, 0.9299), 3: (30.39, 0.8682), 4: (28.42, 0.8104)}
# Published complexity figures: Table 3 (x4 ablations) and the LESRCNN row of Table 9.
PUBLISHED_PARAMS = {"hn": 368_000, "sn": 630_000, "lesrcnn": 516_000}
PUBLISHED_FLOPS = {"hn": 1.38e9, "sn": 3.06e9, "lesrcnn": 3.08e9}


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape {a.shape} != {b.shape}")
    if peak <= 0:
        raise ValueError("psnr: peak must be positive")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 255.0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully covered window positions of a single-channel pair."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"ssim expects equal 2-D shapes, got {a.shape} and {b.shape}")
    if min(a.shape) < window:
        raise ValueError(f"ssim: image {a.shape} smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def shave(img: np.ndarray, border: int) -> np.ndarray:
    if border == 0:
        return img
    return img[border:-border, border:-border]


def eval_y_channel(sr: np.ndarray, hr: np.ndarray, scale: int, quantized: bool = True) -> tuple[float, float]:
    """Y-channel PSNR/SSIM after removing a ``scale``-pixel border.

    Inputs are (h, w, 3) RGB in 0..255.  With ``quantized`` the luma is
    rounded to 8-bit levels first, as benchmark tables do.
    """
    if sr.shape != hr.shape:
        raise ValueError(f"eval: SR shape {sr.shape} != HR shape {hr.shape}")
    ys, yh = rgb_to_y(sr), rgb_to_y(hr)
    if quantized:
        ys, yh = quantize(ys).astype(np.float64), quantize(yh).astype(np.float64)
    ys, yh = shave(ys, scale), shave(yh, scale)
    if ys.size == 0 or min(ys.shape) < 11:
        raise ValueError(f"eval: image {hr.shape[:2]} too small after shaving {scale} pixels")
    if np.array_equal(ys, yh):
        return math.inf, 1.0
    return psnr(ys, yh, 255.0), ssim(ys, yh, 255.0)


@dataclass
class ImageScore:
    name: str
    psnr: float
    ssim: float
    bicubic_psnr: float | None = None
    bicubic_ssim: float | None = None


@dataclass
class EvalReport:
    scale: int
    images: list[ImageScore] = field(default_factory=list)
    notes: str = "Y = BT.601 limited range, 8-bit rounded; border shave = scale; SSIM 11x11 gaussian sigma 1.5"

    def _mean(self, attr: str) -> float | None:
        vals = [getattr(s, attr) for s in sorted(self.images, key=lambda s: s.name)]
        if not vals or any(v is None for v in vals):
            return None
        if "psnr" in attr:
            vals = [min(v, PSNR_CAP) for v in vals]
        return float(sum(vals) / len(vals))

    @property
    def mean_psnr(self):
        return self._mean("psnr")

    @property
    def mean_ssim(self):
        return self._mean("ssim")

    @property
    def mean_bicubic_psnr(self):
        return self._mean("bicubic_psnr")

    @property
    def mean_bicubic_ssim(self):
        return self._mean("bicubic_ssim")

    def rows(self):
        def fmt(v, digits):
            if v is None:
                return ""
            return "inf" if math.isinf(v) else f"{v:.{digits}f}"

        for s in sorted(self.images, key=lambda s: s.name):
            yield [s.name, fmt(s.psnr, 4), fmt(s.ssim, 6), fmt(s.bicubic_psnr, 4), fmt(s.bicubic_ssim, 6)]
        yield ["mean", fmt(self.mean_psnr, 4), fmt(self.mean_ssim, 6),
               fmt(self.mean_bicubic_psnr, 4), fmt(self.mean_bicubic_ssim, 6)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "psnr", "ssim", "bicubic_psnr", "bicubic_ssim"])
        w.writerows(self.rows())
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"x{self.scale}  ({self.notes})",
                 f"{'image':<16}{'PSNR':>10}{'SSIM':>10}{'bic PSNR':>10}{'bic SSIM':>10}"]
        for r in self.rows():
            lines.append(f"{r[0]:<16}" + "".join(f"{c:>10}" for c in r[1:]))
        return "\n".join(lines)


# --------------------------------------------------------------------------
# complexity

def conv_macs(c_in: int, c_out: int, k: int, h: int, w: int, n: int = 1) -> int:
    return n * c_out * h * w * c_in * k * k


@dataclass
class LayerCost:
    name: str
    c_in: int
    c_out: int
    k: int
    params: int
    macs: int
    flops: int


@dataclass
class ComplexityReport:
    variant: str
    scale: int
    convention: str
    input_hw: tuple[int, int] | None
    layers: list[LayerCost]

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(l.flops for l in self.layers)

    def published_delta(self) -> dict:
        """Relative differences from the published figures for this variant, if any."""
        out = {}
        if self.variant in PUBLISHED_PARAMS:
            ref = PUBLISHED_PARAMS[self.variant]
            out["params"] = (ref, (self.total_params - ref) / ref)
        if self.variant in PUBLISHED_FLOPS and self.input_hw is not None:
            ref = PUBLISHED_FLOPS[self.variant]
            out["flops"] = (ref, (self.total_flops - ref) / ref)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "c_in", "c_out", "k", "params", "macs", "flops"])
        for l in self.layers:
            w.writerow([l.name, l.c_in, l.c_out, l.k, l.params, l.macs, l.flops])
        w.writerow(["total", "", "", "", self.total_params, self.total_macs, self.total_flops])
        return buf.getvalue()

    def table(self) -> str:
        size = "n/a" if self.input_hw is None else f"{self.input_hw[0]}x{self.input_hw[1]} LR"
        lines = [f"{self.variant} x{self.scale} ({self.convention} sub-pixel convention), input {size}",
                 "FLOPs = 2*MACs + bias adds; activations excluded",
                 f"{'layer':<12}{'in':>6}{'out':>6}{'k':>3}{'params':>12}{'MACs':>16}{'FLOPs':>16}"]
        for l in self.layers:
            lines.append(f"{l.name:<12}{l.c_in:>6}{l.c_out:>6}{l.k:>3}{l.params:>12,}{l.macs:>16,}{l.flops:>16,}")
        lines.append(f"{'total':<27}{self.total_params:>12,}{self.total_macs:>16,}{self.total_flops:>16,}")
        for key, (ref, rel) in self.published_delta().items():
            lines.append(f"published {key}: {ref:,.0f}  delta {rel:+.2%}")
        return "\n".join(lines)


def _pick_scale(g: ModelGraph, scale: int | None) -> int:
    if scale is None:
        return g.scales[0] if len(g.scales) == 1 else max(g.scales)
    if scale not in g.scales:
        raise ValueError(f"scale x{scale} not built into this model (has {g.scales})")
    return scale


def count_params(g: ModelGraph) -> ComplexityReport:
    """Weight and bias element counts for every layer of the graph."""
    layers = []
    for spec in g.layers:
        n = int(np.prod(g.params[f"{spec.name}.weight"].shape)) + g.params[f"{spec.name}.bias"].size
        layers.append(LayerCost(spec.name, spec.c_in, spec.c_out, spec.k, n, 0, 0))
    scale = g.scales[0] if len(g.scales) == 1 else 0
    return ComplexityReport(g.variant, scale, g.convention, None, layers)


def count_flops(g: ModelGraph, lr_h: int, lr_w: int, scale: int | None = None) -> ComplexityReport:
    """Closed-form MACs/FLOPs of one forward pass on a single lr_h x lr_w image.

    Layer params are reported for the layers the pass touches only.
    """
    if lr_h < 1 or lr_w < 1:
        raise ValueError("input size must be positive")
    scale = _pick_scale(g, scale)
    layers = []
    for spec in g.layers_for_scale(scale):
        up = scale if spec.upscale == 0 else spec.upscale
        h, w = lr_h * up, lr_w * up
        macs = conv_macs(spec.c_in, spec.c_out, spec.k, h, w) * spec.uses
        bias_adds = spec.c_out * h * w * spec.uses
        params = spec.c_out * spec.c_in * spec.k * spec.k + spec.c_out
        layers.append(LayerCost(spec.name, spec.c_in, spec.c_out, spec.k, params, macs, 2 * macs + bias_adds))
    return ComplexityReport(g.variant, scale, g.convention, (lr_h, lr_w), layers)


# --------------------------------------------------------------------------
# timing

@dataclass
class TimingRow:
    size: int  # SR output side length
    lr_size: int
    median_s: float
    times_s: list[float]


def time_inference(g: ModelGraph, sizes=(256, 512, 1024), repeats: int = 3, scale: int | None = None,
                   seed: int = 0) -> list[TimingRow]:
    """Median wall time of one forward pass producing a size x size SR image.

    One untimed warm-up run precedes the timed repeats for each size.
    """
    scale = _pick_scale(g, scale)
    rng = np.random.default_rng(seed)
    rows = []
    for size in sizes:
        lr = size // scale
        x = rng.random((1, 3, lr, lr)).astype(g.dtype)
        model_forward(g, x, scale)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            model_forward(g, x, scale)
            times.append(time.perf_counter() - t0)
        rows.append(TimingRow(size, lr, statistics.median(times), times))
    return rows


def timing_csv(rows: list[TimingRow], label: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "sr_size", "lr_size", "median_s", "runs"])
    for r in rows:
        w.writerow([label, r.size, r.lr_size, f"{r.median_s:.6f}", len(r.times_s)])
    return buf.getvalue()
