"""LESRCNN and its ablation networks as explicit layer graphs.

A network is three blocks applied in sequence:

* the trunk (``ieeb``): 17 layers alternating 3x3 and 1x1 convolutions,
  each followed by ReLU.  In LESRCNN every odd layer also adds the
  running sum of all earlier odd-layer convolution outputs before its ReLU.
* the reconstruction block (``rb``): one sub-pixel head applied with
  shared weights to both the first and the last trunk activations; the
  two upsampled maps are summed and passed through ReLU.
* the refinement block (``irb``): four 3x3 Conv+ReLU and a final 3x3 conv
  to RGB.

The HN and SN ablations have no accumulation and no refinement block:
their trunk output goes through a plain sub-pixel head and a single 3x3
conv to RGB (``tail``).  HN keeps the 3x3/1x1 alternation, SN uses 3x3
everywhere.

Forward functions optionally record a cache that the matching backward
functions consume; gradients accumulate into the graph's ParamStore.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ConvParams,
    ShapeError,
    check_tensor4,
    conv2d_backward,
    conv2d_forward,
    pixel_shuffle,
    pixel_unshuffle,
    relu_backward,
    relu_forward,
)

VARIANTS = ("lesrcnn", "lesrcnn-s", "hn", "sn")
CONVENTIONS = ("standard", "compact")
SUPPORTED_SCALES = (2, 3, 4)

_VARIANT_ALIASES = {
    "lesrcnn": "lesrcnn",
    "lesrcnn-s": "lesrcnn-s",
    "lesrcnn_s": "lesrcnn-s",
    "hn": "hn",
    "sn": "sn",
}


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint file."""


def normalize_variant(variant: str) -> str:
    try:
        return _VARIANT_ALIASES[variant.lower()]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}") from None


def head_stages(scale: int) -> list[int]:
    """Shuffle factors of the sub-pixel head for ``scale``: x4 is two x2 stages."""
    if scale == 2:
        return [2]
    if scale == 3:
        return [3]
    if scale == 4:
        return [2, 2]
    raise ValueError(f"unsupported scale {scale}; expected one of {SUPPORTED_SCALES}")


@dataclass(frozen=True)
class LayerSpec:
    """One convolution of the graph.

    ``upscale`` is the resolution (relative to the LR input) at which the
    layer executes, ``uses`` how many times it runs per forward pass, and
    ``scale`` the head it belongs to (None for layers shared by all scales).
    ``upscale=0`` marks layers that run at the full output resolution.
    """

    name: str
    block: str
    c_in: int
    c_out: int
    k: int
    upscale: int = 1
    uses: int = 1
    scale: int | None = None
    shuffle: int = 1  # pixel-shuffle factor applied right after the conv

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.c_out, self.c_in, self.k, self.k)


class ParamStore:
    """Ordered named parameters with same-shaped gradient buffers."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self._fresh: set[str] = set()
        self._expected: set[str] | None = None

    def register(self, name: str, value: np.ndarray) -> None:
        if name in self._values:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if value.shape != self._values[name].shape:
            raise ShapeError(f"{name}: shape {value.shape} != {self._values[name].shape}")
        self._values[name][...] = value

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def accumulate_grad(self, name: str, g: np.ndarray) -> None:
        self._grads[name] += g
        self._fresh.add(name)

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0)
        self._fresh.clear()
        self._expected = None

    def expect(self, names) -> None:
        """Restrict the parameters that the next optimizer step must update."""
        self._expected = set(names)

    def mark_consumed(self) -> None:
        self._fresh.clear()
        self._expected = None

    def trainable(self) -> list[str]:
        """Parameters taking part in the current step (all unless restricted)."""
        if self._expected is None:
            return list(self._values)
        return [n for n in self._values if n in self._expected]

    def stale(self) -> list[str]:
        """Trainable names whose gradient was not written since zero_grad."""
        return [n for n in self.trainable() if n not in self._fresh]

    def conv(self, layer: str) -> ConvParams:
        return ConvParams(self._values[f"{layer}.weight"], self._values[f"{layer}.bias"])

    def copy(self, dtype=None) -> "ParamStore":
        out = ParamStore()
        for n, v in self._values.items():
            out.register(n, np.array(v, dtype=dtype or v.dtype))
        return out

    def size(self) -> int:
        return sum(v.size for v in self._values.values())


@dataclass
class ModelGraph:
    variant: str
    scales: tuple[int, ...]
    channels: int = 64
    ieeb_depth: int = 17
    irb_depth: int = 5
    convention: str = "standard"
    layers: list[LayerSpec] = field(default_factory=list)
    params: ParamStore = field(default_factory=ParamStore)
    linear: bool = False  # bypass every ReLU; used for gradient-check sanity runs

    @property
    def accumulate(self) -> bool:
        return self.variant in ("lesrcnn", "lesrcnn-s")

    @property
    def has_irb(self) -> bool:
        return self.variant in ("lesrcnn", "lesrcnn-s")

    @property
    def dtype(self):
        return next(iter(self.params.items()))[1].dtype

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def head_layers(self, scale: int) -> list[LayerSpec]:
        return [s for s in self.layers if s.block == "rb" and s.scale == scale]

    def irb_entry(self, scale: int) -> str:
        """Name of the first refinement (or tail) conv used at ``scale``."""
        block = "irb" if self.has_irb else "tail"
        shared = f"{block}.1"
        if f"{shared}.weight" in self.params:
            return shared
        return f"{block}.1_x{scale}"

    def layers_for_scale(self, scale: int) -> list[LayerSpec]:
        if scale not in self.scales:
            raise ValueError(f"scale x{scale} not built into this {self.variant} model (has {self.scales})")
        entry = self.irb_entry(scale)
        out = []
        for s in self.layers:
            if s.block == "rb" and s.scale != scale:
                continue
            if s.block in ("irb", "tail") and s.scale is not None and s.name != entry:
                continue
            out.append(s)
        return out

    def astype(self, dtype) -> "ModelGraph":
        return ModelGraph(
            variant=self.variant,
            scales=self.scales,
            channels=self.channels,
            ieeb_depth=self.ieeb_depth,
            irb_depth=self.irb_depth,
            convention=self.convention,
            layers=list(self.layers),
            params=self.params.copy(dtype),
            linear=self.linear,
        )


def _trunk_kernel(variant: str, i: int, depth: int) -> int:
    if variant == "sn":
        return 3
    if i == depth:
        return 3
    return 3 if i % 2 == 1 else 1


def plan_layers(variant: str, scales, channels: int = 64, ieeb_depth: int = 17,
                irb_depth: int = 5, convention: str = "standard") -> list[LayerSpec]:
    """Enumerate the convolutions of a variant in registration order."""
    variant = normalize_variant(variant)
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    if ieeb_depth < 3 or ieeb_depth % 2 == 0:
        raise ValueError(f"ieeb_depth must be odd and >= 3, got {ieeb_depth}")
    if irb_depth < 1:
        raise ValueError(f"irb_depth must be >= 1, got {irb_depth}")
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    scales = tuple(sorted(set(int(s) for s in scales)))
    for s in scales:
        head_stages(s)
    if variant == "lesrcnn-s":
        if scales != SUPPORTED_SCALES:
            raise ValueError(f"lesrcnn-s carries scales {SUPPORTED_SCALES}, got {scales}")
    elif len(scales) != 1:
        raise ValueError(f"{variant} carries exactly one scale, got {scales}")

    c = channels
    layers = []
    for i in range(1, ieeb_depth + 1):
        k = _trunk_kernel(variant, i, ieeb_depth)
        layers.append(LayerSpec(f"ieeb.{i}", "ieeb", 3 if i == 1 else c, c, k))

    head_uses = 2 if variant in ("lesrcnn", "lesrcnn-s") else 1
    head_out = {}
    for s in scales:
        cur, up = c, 1
        for j, r in enumerate(head_stages(s)):
            if convention == "standard":
                conv_out, after = cur * r * r, cur
            else:
                conv_out = (cur // (r * r)) * r * r
                after = conv_out // (r * r)
                if after < 1:
                    raise ValueError(f"compact head x{s}: {cur} channels cannot be shuffled by {r}")
            name = f"rb.x{s}" if len(head_stages(s)) == 1 else f"rb.x{s}_{j + 1}"
            layers.append(LayerSpec(name, "rb", cur, conv_out, 3, upscale=up, uses=head_uses,
                                    scale=s, shuffle=r))
            cur, up = after, up * r
        head_out[s] = cur

    entry_widths = set(head_out.values())
    if variant in ("lesrcnn", "lesrcnn-s"):
        if len(entry_widths) == 1:
            (w,) = entry_widths
            layers.append(LayerSpec("irb.1", "irb", w, c if irb_depth > 1 else 3, 3, upscale=0))
        else:
            for s in scales:
                layers.append(LayerSpec(f"irb.1_x{s}", "irb", head_out[s], c if irb_depth > 1 else 3, 3,
                                        upscale=0, scale=s))
        for i in range(2, irb_depth + 1):
            layers.append(LayerSpec(f"irb.{i}", "irb", c, c if i < irb_depth else 3, 3, upscale=0))
    else:
        (s,) = scales
        layers.append(LayerSpec("tail.1", "tail", head_out[s], 3, 3, upscale=0))
    return layers


def build_model(variant: str = "lesrcnn", scales=(2,), channels: int = 64, convention: str = "standard",
                seed: int = 0, ieeb_depth: int = 17, irb_depth: int = 5, dtype=np.float32) -> ModelGraph:
    """Build a graph with fan-in-scaled uniform weights and zero biases."""
    variant = normalize_variant(variant)
    if isinstance(scales, int):
        scales = (scales,)
    layers = plan_layers(variant, scales, channels, ieeb_depth, irb_depth, convention)
    rng = np.random.default_rng(seed)
    params = ParamStore()
    for spec in layers:
        fan_in = spec.c_in * spec.k * spec.k
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=spec.weight_shape).astype(dtype)
        params.register(f"{spec.name}.weight", w)
        params.register(f"{spec.name}.bias", np.zeros(spec.c_out, dtype=dtype))
    return ModelGraph(
        variant=variant,
        scales=tuple(sorted(set(scales))),
        channels=channels,
        ieeb_depth=ieeb_depth,
        irb_depth=irb_depth,
        convention=convention,
        layers=layers,
        params=params,
    )


# --------------------------------------------------------------------------
# forward / backward

@dataclass
class IEEBTrace:
    o1: np.ndarray
    o_final: np.ndarray
    conv_outputs: list[np.ndarray] | None = None  # O_c^i, i = 1..depth
    pre_activations: list[np.ndarray] | None = None
    cache: dict | None = None


def _relu(g: ModelGraph, x: np.ndarray) -> np.ndarray:
    return x if g.linear else relu_forward(x)


def _relu_back(g: ModelGraph, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return grad if g.linear else relu_backward(x, grad)


def _conv(params: ParamStore, name: str, x: np.ndarray, cache: list | None):
    p = params.conv(name)
    if cache is None:
        return conv2d_forward(x, p)
    y, cols = conv2d_forward(x, p, return_cols=True)
    cache.append((name, x.shape, cols))
    return y


def _conv_back(params: ParamStore, entry, grad_y: np.ndarray, need_input_grad: bool = True):
    name, x_shape, cols = entry
    p = params.conv(name)
    gx, gw, gb = conv2d_backward(np.empty(x_shape, dtype=grad_y.dtype), p, grad_y, cols=cols)
    params.accumulate_grad(f"{name}.weight", gw)
    params.accumulate_grad(f"{name}.bias", gb)
    return gx if need_input_grad else None


def ieeb_forward(g: ModelGraph, x: np.ndarray, *, accumulate: bool | None = None,
                 record: bool = False, keep_cache: bool = False) -> IEEBTrace:
    """Run the trunk.

    Odd layer j >= 3 (with accumulation) uses the pre-activation
    ``O_c^j + S_{j-2}`` where ``S_1 = O_c^1`` and ``S_j = S_{j-2} + O_c^j``
    (a left-to-right running sum over odd layers).
    """
    check_tensor4(x)
    if x.shape[1] != 3:
        raise ShapeError(f"trunk expects 3 input channels, got {x.shape[1]}")
    if accumulate is None:
        accumulate = g.accumulate
    cache = [] if keep_cache else None
    convs, pres = [], []
    o, running, o1 = x, None, None
    for i in range(1, g.ieeb_depth + 1):
        oc = _conv(g.params, f"ieeb.{i}", o, cache)
        if accumulate and i % 2 == 1:
            pre = oc if running is None else oc + running
            running = oc if running is None else running + oc
        else:
            pre = oc
        o = _relu(g, pre)
        if i == 1:
            o1 = o
        if record:
            convs.append(oc)
        if record or keep_cache:
            pres.append(pre)
    return IEEBTrace(
        o1=o1,
        o_final=o,
        conv_outputs=convs if record else None,
        pre_activations=pres if (record or keep_cache) else None,
        cache={"convs": cache, "pres": pres, "accumulate": accumulate} if keep_cache else None,
    )


def ieeb_backward(g: ModelGraph, trace: IEEBTrace, grad_o1: np.ndarray | None,
                  grad_final: np.ndarray) -> np.ndarray:
    convs = trace.cache["convs"]
    pres = trace.cache["pres"]
    accumulate = trace.cache["accumulate"]
    depth = g.ieeb_depth
    g_out = grad_final
    later_odd = None  # sum of pre-activation grads of odd layers after the current one
    for i in range(depth, 0, -1):
        if i == 1 and grad_o1 is not None:
            g_out = g_out + grad_o1
        g_pre = _relu_back(g, pres[i - 1], g_out)
        if accumulate and i % 2 == 1:
            g_oc = g_pre if later_odd is None else g_pre + later_odd
            later_odd = g_pre if later_odd is None else later_odd + g_pre
        else:
            g_oc = g_pre
        g_out = _conv_back(g.params, convs[i - 1], g_oc)
    return g_out


def _head_forward(g: ModelGraph, x: np.ndarray, scale: int, cache: list | None) -> np.ndarray:
    h = x
    for spec in g.head_layers(scale):
        h = pixel_shuffle(_conv(g.params, spec.name, h, cache), spec.shuffle)
    return h


def _head_backward(g: ModelGraph, scale: int, cache: list, grad: np.ndarray) -> np.ndarray:
    for spec, entry in zip(reversed(g.head_layers(scale)), reversed(cache)):
        grad = _conv_back(g.params, entry, pixel_unshuffle(grad, spec.shuffle))
    return grad


def rb_forward(g: ModelGraph, trace: IEEBTrace, scale: int, cache: dict | None = None) -> np.ndarray:
    """Fuse the upsampled first-layer and last-layer trunk features."""
    if scale not in g.scales:
        raise ValueError(f"no x{scale} head in this model (has {g.scales})")
    c1 = [] if cache is not None else None
    c2 = [] if cache is not None else None
    s1 = _head_forward(g, trace.o1, scale, c1)
    s2 = _head_forward(g, trace.o_final, scale, c2)
    pre = s1 + s2
    if cache is not None:
        cache.update(rb_o1=c1, rb_final=c2, rb_pre=pre)
    return _relu(g, pre)


def irb_forward(g: ModelGraph, o_rb: np.ndarray, scale: int | None = None, cache: list | None = None) -> np.ndarray:
    """Four 3x3 Conv+ReLU stages and a final 3x3 conv to RGB."""
    if scale is None:
        scale = g.scales[0]
    entry = g.irb_entry(scale)
    expected = g.layer(entry).c_in
    if o_rb.shape[1] != expected:
        raise ShapeError(f"refinement block expects {expected} channels, got {o_rb.shape[1]}")
    names = [entry] + [f"irb.{i}" for i in range(2, g.irb_depth + 1)]
    h = o_rb
    for i, name in enumerate(names):
        h = _conv(g.params, name, h, cache)
        if i < len(names) - 1:
            if cache is not None:
                cache.append(("relu", h))
            h = _relu(g, h)
    return h


def _irb_backward(g: ModelGraph, cache: list, grad: np.ndarray) -> np.ndarray:
    for entry in reversed(cache):
        if entry[0] == "relu":
            grad = _relu_back(g, entry[1], grad)
        else:
            grad = _conv_back(g.params, entry, grad)
    return grad


@dataclass
class Tape:
    scale: int
    trace: IEEBTrace
    rb: dict
    irb: list


def model_forward(g: ModelGraph, x: np.ndarray, scale: int | None = None, *, tape: bool = False):
    """Map an LR batch in [0, 1] to its SR estimate at ``scale``.

    With ``tape=True`` returns ``(output, Tape)`` for :func:`model_backward`.
    """
    if scale is None:
        if len(g.scales) != 1:
            raise ValueError("scale is required for a multi-scale model")
        scale = g.scales[0]
    if scale not in g.scales:
        raise ValueError(f"scale x{scale} not built into this model (has {g.scales})")
    trace = ieeb_forward(g, x, keep_cache=tape)
    rb_cache = {} if tape else None
    irb_cache = [] if tape else None
    if g.has_irb:
        o_rb = rb_forward(g, trace, scale, rb_cache)
        y = irb_forward(g, o_rb, scale, irb_cache)
    else:
        c = [] if tape else None
        up = _head_forward(g, trace.o_final, scale, c)
        if tape:
            rb_cache["rb_final"] = c
        y = _conv(g.params, g.irb_entry(scale), up, irb_cache)
    if tape:
        return y, Tape(scale, trace, rb_cache, irb_cache)
    return y


def model_backward(g: ModelGraph, tape: Tape, grad_y: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients for ``grad_y``; returns the input gradient."""
    g.params.expect(f"{s.name}.{kind}" for s in g.layers_for_scale(tape.scale) for kind in ("weight", "bias"))
    g_rb = _irb_backward(g, tape.irb, grad_y)
    if g.has_irb:
        g_pre = _relu_back(g, tape.rb["rb_pre"], g_rb)
        g_o1 = _head_backward(g, tape.scale, tape.rb["rb_o1"], g_pre)
        g_final = _head_backward(g, tape.scale, tape.rb["rb_final"], g_pre)
    else:
        g_o1 = None
        g_final = _head_backward(g, tape.scale, tape.rb["rb_final"], g_rb)
    return ieeb_backward(g, tape.trace, g_o1, g_final)


# --------------------------------------------------------------------------
# checkpoints
#
# "LESR" | u32 version | u32 count | count x (u16 len, utf-8 name, u8 rank,
# u32 dims[rank], little-endian float32 data), all integers little-endian.

MAGIC = b"LESR"
VERSION = 1


def save_checkpoint(g: ModelGraph, path) -> None:
    write_tensors(path, [(n, v) for n, v in g.params.items()])


def write_tensors(path, tensors) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors:
        raw = name.encode("utf-8")
        value = np.asarray(value)
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp, path)


def read_tensors(path) -> list[tuple[str, np.ndarray]]:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 12:
        raise CheckpointError(f"{path}: file too short ({len(buf)} bytes) for a checkpoint header")
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos, out = 12, []

    def need(n):
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated (needs {pos + n} bytes, has {len(buf)})")

    for _ in range(count):
        need(2)
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(nlen + 1)
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        rank = buf[pos]
        pos += 1
        need(4 * rank)
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        need(nbytes)
        data = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims)
        pos += nbytes
        out.append((name, data.astype(np.float32)))
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes after {count} tensors")
    return out


def infer_config(manifest: dict[str, tuple]) -> dict:
    """Recover build_model arguments from parameter names and shapes."""
    try:
        channels = manifest["ieeb.1.weight"][0]
    except KeyError:
        raise CheckpointError("checkpoint has no ieeb.1.weight") from None
    depth = 0
    while f"ieeb.{depth + 1}.weight" in manifest:
        depth += 1
    scales = sorted({int(n[4:].split(".")[0].split("_")[0]) for n in manifest if n.startswith("rb.x")})
    if not scales:
        raise CheckpointError("checkpoint has no sub-pixel head")
    if any(n.startswith("tail.") for n in manifest):
        variant = "sn" if depth > 1 and manifest["ieeb.2.weight"][2] == 3 else "hn"
        irb_depth = 5
    else:
        variant = "lesrcnn-s" if len(scales) > 1 else "lesrcnn"
        irb_depth = max(int(n.split(".")[1].split("_")[0]) for n in manifest if n.startswith("irb."))
    s = scales[0]
    first = f"rb.x{s}" if s != 4 else "rb.x4_1"
    convention = "standard" if manifest[first + ".weight"][0] == channels * head_stages(s)[0] ** 2 else "compact"
    return dict(variant=variant, scales=tuple(scales), channels=channels, convention=convention,
                ieeb_depth=depth, irb_depth=irb_depth)


def _manifest_diff(expected: dict, found: dict) -> list[str]:
    problems = []
    for n, shape in expected.items():
        if n not in found:
            problems.append(f"missing {n} {shape}")
        elif tuple(found[n]) != tuple(shape):
            problems.append(f"{n}: checkpoint shape {tuple(found[n])} != expected {tuple(shape)}")
    for n in found:
        if n not in expected:
            problems.append(f"unexpected {n} {tuple(found[n])}")
    return problems


def load_checkpoint(path, variant: str | None = None, scales=None, channels: int | None = None,
                    convention: str | None = None, dtype=np.float32) -> ModelGraph:
    """Load a checkpoint; any given architecture arguments are enforced.

    Raises CheckpointError listing every disagreement between the file's
    manifest and the declared graph; no partially loaded model escapes.
    """
    tensors = read_tensors(path)
    found = {n: v.shape for n, v in tensors}
    if len(found) != len(tensors):
        raise CheckpointError(f"{path}: duplicate parameter names")
    cfg = infer_config(found)
    declared = dict(cfg)
    if variant is not None:
        declared["variant"] = normalize_variant(variant)
        if declared["variant"] == "lesrcnn-s":
            declared["scales"] = SUPPORTED_SCALES
    if scales is not None:
        declared["scales"] = tuple(sorted(set((scales,) if isinstance(scales, int) else scales)))
    if channels is not None:
        declared["channels"] = channels
    if convention is not None:
        declared["convention"] = convention
    try:
        layers = plan_layers(**declared)
    except ValueError as e:
        raise CheckpointError(f"{path}: declared graph is invalid: {e}") from None
    expected = {}
    for spec in layers:
        expected[f"{spec.name}.weight"] = spec.weight_shape
        expected[f"{spec.name}.bias"] = (spec.c_out,)
    problems = _manifest_diff(expected, found)
    if problems:
        raise CheckpointError(f"{path}: shape disagreement with declared {declared['variant']} graph: "
                              + "; ".join(problems))
    if list(expected) != [n for n, _ in tensors]:
        raise CheckpointError(f"{path}: parameters not in registration order")
    params = ParamStore()
    for n, v in tensors:
        params.register(n, np.array(v, dtype=dtype))
    return ModelGraph(layers=layers, params=params, **declared)
