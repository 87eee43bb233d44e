"""
Multi-scale multi-label lesion network in numpy.

Each stage is conv3x3 (pad 1) -> ReLU -> 2x2 max-pool. In ``multiscale``
fusion every stage's ReLU map is ROI max-pooled to a fixed grid (lesion box
for the early stages, whole patch for the late ones), sent through its own
FC layer, concatenated, and mapped to K logits by a final FC layer followed
by an elementwise sigmoid. ``global_pool`` fusion is the single-scale
baseline: the last stage is average-pooled and fed to the output layer.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from utils.errors import DataError, ModelError

logger = logging.getLogger(__name__)

Gradients = Dict[str, np.ndarray]

# elements per masked-max temporary in ROI pooling
_ROI_CHUNK_ELEMENTS = 8_000_000


class Fusion(str, Enum):
    MULTISCALE = "multiscale"
    GLOBAL_POOL = "global_pool"


class NetworkConfig(BaseModel):
    """Topology and numeric settings of the network."""

    n_stages: int = Field(default=5, ge=2)
    channels: Optional[List[int]] = None
    roi_grid: Tuple[int, int] = (5, 5)
    fc_dim: int = Field(default=32, ge=1)
    n_labels: int = Field(default=1, ge=1)
    # 1-based stages pooled over the lesion box; the rest use the whole patch
    lesion_roi_stages: Optional[List[int]] = None
    fusion: Fusion = Fusion.MULTISCALE
    patch_size: int = Field(default=120, ge=4)
    input_channels: int = Field(default=3, ge=1)
    input_downsample: int = Field(default=1, ge=1)
    dtype: str = "float32"
    feature_standardize: bool = False
    init_seed: int = 0

    @field_validator("roi_grid")
    @classmethod
    def grid_positive(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if v[0] < 1 or v[1] < 1:
            raise ValueError(f"roi_grid must be positive, got {v}")
        return v

    @field_validator("dtype")
    @classmethod
    def supported_dtype(cls, v: str) -> str:
        if v not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {v!r}")
        return v

    @model_validator(mode="after")
    def resolve_stages(self) -> "NetworkConfig":
        if self.channels is None:
            self.channels = [8 * 2 ** min(s // 2, 2) for s in range(self.n_stages)]
        if len(self.channels) != self.n_stages or min(self.channels) < 1:
            raise ValueError(
                f"channels must list {self.n_stages} positive widths, got {self.channels}"
            )
        if self.lesion_roi_stages is None:
            self.lesion_roi_stages = list(range(1, min(3, self.n_stages - 1) + 1))
        bad = [s for s in self.lesion_roi_stages if not 1 <= s <= self.n_stages]
        if bad:
            raise ValueError(f"lesion_roi_stages {bad} outside 1..{self.n_stages}")
        if self.patch_size % self.input_downsample:
            raise ValueError(
                f"patch_size {self.patch_size} not divisible by input_downsample "
                f"{self.input_downsample}"
            )
        if self.input_size // 2 ** (self.n_stages - 1) < 1:
            raise ValueError(
                f"{self.n_stages} stages leave no pixels for a {self.input_size}px input"
            )
        return self

    @property
    def input_size(self) -> int:
        return self.patch_size // self.input_downsample

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    def stage_size(self, stage: int) -> int:
        """Side length of a stage's feature map (1-based stage)."""
        size = self.input_size
        for _ in range(stage - 1):
            size //= 2
        return size

    def stage_scale(self, stage: int) -> float:
        """Patch pixels -> stage pixels."""
        return 1.0 / (self.input_downsample * 2 ** (stage - 1))

    def uses_lesion_roi(self, stage: int) -> bool:
        return stage in self.lesion_roi_stages


class Parameters:
    """Ordered named tensors with a version counter."""

    def __init__(self, config: NetworkConfig, tensors: "OrderedDict[str, np.ndarray]"):
        self.config = config
        self.tensors = tensors
        self.version = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> List[str]:
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def assign(self, updates: Dict[str, np.ndarray]) -> None:
        """Replace tensors; any forward state taken before becomes stale."""
        for name, value in updates.items():
            if name not in self.tensors:
                raise ModelError(f"Unknown parameter '{name}'", code="unknown_parameter")
            if value.shape != self.tensors[name].shape:
                raise ModelError(
                    f"Parameter '{name}' shape {value.shape} != {self.tensors[name].shape}",
                    code="shape_mismatch",
                )
            self.tensors[name] = value.astype(self.config.np_dtype, copy=False)
        self.version += 1

    def copy(self) -> "Parameters":
        return Parameters(
            self.config, OrderedDict((k, v.copy()) for k, v in self.tensors.items())
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())

    def n_values(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


def parameter_shapes(cfg: NetworkConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    c_in = cfg.input_channels
    for s, c_out in enumerate(cfg.channels, start=1):
        shapes[f"conv{s}.weight"] = (c_out, c_in, 3, 3)
        shapes[f"conv{s}.bias"] = (c_out,)
        c_in = c_out
    gh, gw = cfg.roi_grid
    if cfg.fusion == Fusion.MULTISCALE:
        for s, c in enumerate(cfg.channels, start=1):
            shapes[f"fc{s}.weight"] = (cfg.fc_dim, c * gh * gw)
            shapes[f"fc{s}.bias"] = (cfg.fc_dim,)
        fused = cfg.fc_dim * cfg.n_stages
    else:
        fused = cfg.channels[-1]
    shapes["out.weight"] = (cfg.n_labels, fused)
    shapes["out.bias"] = (cfg.n_labels,)
    return shapes


def init_parameters(cfg: NetworkConfig, seed: Optional[int] = None) -> Parameters:
    """He-style uniform weights from a seeded generator, zero biases."""
    rng = np.random.default_rng(cfg.init_seed if seed is None else seed)
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=cfg.np_dtype)
            continue
        fan_in = int(np.prod(shape[1:]))
        limit = np.sqrt(6.0 / fan_in)
        tensors[name] = rng.uniform(-limit, limit, size=shape).astype(cfg.np_dtype)
    return Parameters(cfg, tensors)


def zero_parameters(cfg: NetworkConfig) -> Parameters:
    return Parameters(
        cfg,
        OrderedDict(
            (name, np.zeros(shape, dtype=cfg.np_dtype))
            for name, shape in parameter_shapes(cfg).items()
        ),
    )


# ----------------------------------------------------------------------------
# ROI max pooling


def roi_pixel_range(lo: float, hi: float, size: int) -> Tuple[int, int]:
    """Integer [start, end) pixel range covered by a box edge pair, at least 1 px."""
    start = int(np.floor(lo))
    end = max(int(np.ceil(hi)), start + 1)
    start, end = max(start, 0), min(end, size)
    if start >= end:
        raise DataError(
            f"ROI [{lo}, {hi}) lies outside a feature map of size {size}",
            code="roi_outside_map",
        )
    return start, end


def roi_bin_edges(start: int, end: int, n_bins: int) -> Tuple[np.ndarray, np.ndarray]:
    """Bin i spans start+round(i*h/n) .. start+round((i+1)*h/n), clamped to >= 1 px."""
    h = end - start
    cuts = start + np.floor(np.arange(n_bins + 1) * h / n_bins + 0.5).astype(np.int64)
    lo, hi = cuts[:-1].copy(), cuts[1:].copy()
    hi = np.maximum(hi, lo + 1)
    overflow = hi > end
    lo[overflow] = end - 1
    hi[overflow] = end
    return lo, hi


def _bin_masks(rois: np.ndarray, size_h: int, size_w: int, grid: Tuple[int, int]):
    gh, gw = grid
    n = rois.shape[0]
    row_mask = np.zeros((n, gh, size_h), dtype=bool)
    col_mask = np.zeros((n, gw, size_w), dtype=bool)
    rows = np.arange(size_h)
    cols = np.arange(size_w)
    for k, (x0, y0, x1, y1) in enumerate(rois):
        r_lo, r_hi = roi_bin_edges(*roi_pixel_range(y0, y1, size_h), gh)
        c_lo, c_hi = roi_bin_edges(*roi_pixel_range(x0, x1, size_w), gw)
        row_mask[k] = (rows[None, :] >= r_lo[:, None]) & (rows[None, :] < r_hi[:, None])
        col_mask[k] = (cols[None, :] >= c_lo[:, None]) & (cols[None, :] < c_hi[:, None])
    return row_mask, col_mask


def roi_max_pool_batch(
    fmaps: np.ndarray, rois: np.ndarray, grid: Tuple[int, int] = (5, 5)
) -> Tuple[np.ndarray, np.ndarray]:
    """
    ROI max pooling of (N, C, H, W) maps with one (x0, y0, x1, y1) box per sample,
    in the map's pixel coordinates.

    Returns pooled (N, C, gh, gw) values and the flat H*W index of each maximum.
    """
    n, c, h, w = fmaps.shape
    rois = np.asarray(rois, dtype=np.float64).reshape(n, 4)
    gh, gw = grid
    row_mask, col_mask = _bin_masks(rois, h, w, grid)

    pooled = np.empty((n, c, gh, gw), dtype=fmaps.dtype)
    argmax = np.empty((n, c, gh, gw), dtype=np.int64)
    step = max(1, _ROI_CHUNK_ELEMENTS // max(c * h * w * max(gh, gw), 1))
    for lo in range(0, n, step):
        sl = slice(lo, min(lo + step, n))
        f = fmaps[sl]
        # max over the columns of each column bin: (n, c, h, gw)
        by_col = np.where(col_mask[sl][:, None, None, :, :], f[:, :, :, None, :], -np.inf)
        col_arg = by_col.argmax(axis=-1)
        col_max = np.take_along_axis(by_col, col_arg[..., None], axis=-1)[..., 0]
        # then over the rows of each row bin: (n, c, gh, gw)
        by_row = np.where(
            row_mask[sl][:, None, :, :, None], col_max[:, :, None, :, :], -np.inf
        )
        row_arg = by_row.argmax(axis=3)
        pooled[sl] = np.take_along_axis(by_row, row_arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        cols = np.take_along_axis(col_arg, row_arg, axis=2)
        argmax[sl] = row_arg * w + cols
    return pooled, argmax


def roi_max_pool(
    fmap: np.ndarray, roi: Sequence[float], grid: Tuple[int, int] = (5, 5)
) -> Tuple[np.ndarray, np.ndarray]:
    """Single C x H x W map version of roi_max_pool_batch."""
    if fmap.ndim != 3:
        raise ModelError(f"Expected a C x H x W map, got shape {fmap.shape}", code="shape_mismatch")
    pooled, argmax = roi_max_pool_batch(fmap[None], np.asarray(roi, dtype=np.float64)[None], grid)
    return pooled[0], argmax[0]


def roi_max_pool_backward(
    grad: np.ndarray, argmax: np.ndarray, map_shape: Tuple[int, int]
) -> np.ndarray:
    """Route pooled gradients back to the recorded maxima; overlapping bins accumulate."""
    n, c = grad.shape[:2]
    h, w = map_shape
    base = (np.arange(n)[:, None] * c + np.arange(c)[None, :]) * (h * w)
    flat = (argmax.reshape(n, c, -1) + base[:, :, None]).ravel()
    summed = np.bincount(flat, weights=grad.reshape(-1).astype(np.float64), minlength=n * c * h * w)
    return summed.reshape(n, c, h, w).astype(grad.dtype, copy=False)


# ----------------------------------------------------------------------------
# Stage primitives


def conv3x3(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    n, _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, h, w, weight.shape[0]), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            out += np.tensordot(xp[:, :, i : i + h, j : j + w], weight[:, :, i, j], axes=([1], [1]))
    out += bias
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv3x3_backward(
    x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray, need_input_grad: bool = True
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    grad_w = np.empty_like(weight)
    grad_xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype) if need_input_grad else None
    for i in range(3):
        for j in range(3):
            window = xp[:, :, i : i + h, j : j + w]
            grad_w[:, :, i, j] = np.tensordot(grad_out, window, axes=([0, 2, 3], [0, 2, 3]))
            if need_input_grad:
                grad_xp[:, i : i + h, j : j + w, :] += np.tensordot(
                    grad_out, weight[:, :, i, j], axes=([1], [0])
                )
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_x = None
    if need_input_grad:
        grad_x = np.ascontiguousarray(grad_xp[:, 1:-1, 1:-1, :].transpose(0, 3, 1, 2))
    return grad_w, grad_b, grad_x


def max_pool2x2(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """2x2/stride-2 max pooling (odd trailing row/column dropped) with argmax."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    blocks = (
        x[:, :, : 2 * h2, : 2 * w2]
        .reshape(n, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2, w2, 4)
    )
    arg = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0], arg


def max_pool2x2_backward(grad: np.ndarray, arg: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    n, c, h, w = shape
    h2, w2 = grad.shape[2:]
    blocks = np.zeros((n, c, h2, w2, 4), dtype=grad.dtype)
    np.put_along_axis(blocks, arg[..., None], grad[..., None], axis=-1)
    out = np.zeros(shape, dtype=grad.dtype)
    out[:, :, : 2 * h2, : 2 * w2] = (
        blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    )
    return out


def average_downsample(x: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return x
    n, c, h, w = x.shape
    return x.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic in float64, clipped so the result stays inside (0, 1) in z's dtype."""
    z = np.asarray(z)
    dtype = z.dtype if np.issubdtype(z.dtype, np.floating) else np.dtype(np.float64)
    z64 = z.astype(np.float64, copy=False)
    out = np.empty_like(z64)
    pos = z64 >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z64[pos]))
    ez = np.exp(z64[~pos])
    out[~pos] = ez / (1.0 + ez)
    eps = float(np.finfo(dtype).eps)
    return np.clip(out, eps, 1.0 - eps).astype(dtype, copy=False)


def prepare_inputs(patches: np.ndarray, cfg: NetworkConfig) -> np.ndarray:
    """Cast, downsample and optionally standardize a batch of patches."""
    x = np.asarray(patches, dtype=cfg.np_dtype)
    expected = (cfg.input_channels, cfg.patch_size, cfg.patch_size)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ModelError(
            f"Expected patches of shape (N, {expected[0]}, {expected[1]}, {expected[2]}), "
            f"got {x.shape}",
            code="shape_mismatch",
        )
    x = average_downsample(x, cfg.input_downsample)
    if cfg.feature_standardize:
        mean = x.mean(axis=(1, 2, 3), keepdims=True)
        std = x.std(axis=(1, 2, 3), keepdims=True)
        x = (x - mean) / (std + 1e-6)
    return x


# ----------------------------------------------------------------------------
# Network


@dataclass
class ForwardState:
    """Everything backward needs; tied to one parameter version."""

    params: Parameters
    version: int
    single: bool
    inputs: List[np.ndarray] = field(default_factory=list)
    pre_relu: List[np.ndarray] = field(default_factory=list)
    relu: List[np.ndarray] = field(default_factory=list)
    pool_arg: List[Optional[np.ndarray]] = field(default_factory=list)
    roi_arg: List[Optional[np.ndarray]] = field(default_factory=list)
    roi_flat: List[Optional[np.ndarray]] = field(default_factory=list)
    fused: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None


def forward(
    params: Parameters, patches: np.ndarray, lesion_bbox_px: np.ndarray
) -> Tuple[np.ndarray, ForwardState]:
    """
    Scores in (0, 1) for one patch (C, P, P) or a batch (N, C, P, P).
    Boxes are (x0, y0, x1, y1) in patch pixels.
    """
    cfg = params.config
    patches = np.asarray(patches)
    single = patches.ndim == 3
    if single:
        patches = patches[None]
    boxes = np.asarray(lesion_bbox_px, dtype=np.float64).reshape(-1, 4)
    if boxes.shape[0] != patches.shape[0]:
        raise ModelError(
            f"{patches.shape[0]} patches but {boxes.shape[0]} lesion boxes",
            code="shape_mismatch",
        )

    state = ForwardState(params=params, version=params.version, single=single)
    x = prepare_inputs(patches, cfg)
    features = []
    for s in range(1, cfg.n_stages + 1):
        state.inputs.append(x)
        a = conv3x3(x, params[f"conv{s}.weight"], params[f"conv{s}.bias"])
        r = np.maximum(a, 0)
        state.pre_relu.append(a)
        state.relu.append(r)
        if s < cfg.n_stages:
            x, arg = max_pool2x2(r)
            state.pool_arg.append(arg)
        else:
            state.pool_arg.append(None)

        if cfg.fusion == Fusion.MULTISCALE:
            _, _, h, w = r.shape
            if cfg.uses_lesion_roi(s):
                rois = boxes * cfg.stage_scale(s)
            else:
                rois = np.tile(np.array([0.0, 0.0, w, h]), (r.shape[0], 1))
            pooled, roi_arg = roi_max_pool_batch(r, rois, cfg.roi_grid)
            flat = pooled.reshape(r.shape[0], -1)
            state.roi_arg.append(roi_arg)
            state.roi_flat.append(flat)
            features.append(flat @ params[f"fc{s}.weight"].T + params[f"fc{s}.bias"])

    if cfg.fusion == Fusion.MULTISCALE:
        fused = np.concatenate(features, axis=1)
    else:
        fused = state.relu[-1].mean(axis=(2, 3))
    logits = fused @ params["out.weight"].T + params["out.bias"]
    scores = sigmoid(logits)

    state.fused = fused
    state.logits = logits
    state.scores = scores
    return (scores[0] if single else scores), state


def backward(state: ForwardState, dL_dscores: np.ndarray) -> Gradients:
    """Exact parameter gradients for the batch summed loss behind dL_dscores."""
    params = state.params
    cfg = params.config
    if state.version != params.version:
        raise ModelError(
            f"Forward state was computed for parameter version {state.version}, "
            f"parameters are now at version {params.version}",
            code="stale_state",
        )
    g = np.asarray(dL_dscores, dtype=cfg.np_dtype)
    if state.single:
        g = g[None]
    if g.shape != state.scores.shape:
        raise ModelError(
            f"Score gradient shape {g.shape} != scores shape {state.scores.shape}",
            code="shape_mismatch",
        )

    grads: Gradients = OrderedDict((name, None) for name in params.names())
    d_logits = g * state.scores * (1.0 - state.scores)
    grads["out.weight"] = d_logits.T @ state.fused
    grads["out.bias"] = d_logits.sum(axis=0)
    d_fused = d_logits @ params["out.weight"]

    n_stages = cfg.n_stages
    d_relu: List[Optional[np.ndarray]] = [None] * n_stages
    if cfg.fusion == Fusion.MULTISCALE:
        for k in range(n_stages):
            s = k + 1
            d_h = d_fused[:, k * cfg.fc_dim : (k + 1) * cfg.fc_dim]
            grads[f"fc{s}.weight"] = d_h.T @ state.roi_flat[k]
            grads[f"fc{s}.bias"] = d_h.sum(axis=0)
            d_pooled = (d_h @ params[f"fc{s}.weight"]).reshape(
                (d_h.shape[0], cfg.channels[k]) + tuple(cfg.roi_grid)
            )
            d_relu[k] = roi_max_pool_backward(
                d_pooled, state.roi_arg[k], state.relu[k].shape[2:]
            )
    else:
        last = state.relu[-1]
        h, w = last.shape[2:]
        d_relu[-1] = np.broadcast_to(
            (d_fused / (h * w))[:, :, None, None], last.shape
        ).copy()

    d_next: Optional[np.ndarray] = None
    for k in reversed(range(n_stages)):
        s = k + 1
        d_r = d_relu[k] if d_relu[k] is not None else np.zeros_like(state.relu[k])
        if d_next is not None:
            d_r = d_r + max_pool2x2_backward(d_next, state.pool_arg[k], state.relu[k].shape)
        d_a = d_r * (state.pre_relu[k] > 0)
        grad_w, grad_b, d_x = conv3x3_backward(
            state.inputs[k], params[f"conv{s}.weight"], d_a, need_input_grad=k > 0
        )
        grads[f"conv{s}.weight"] = grad_w
        grads[f"conv{s}.bias"] = grad_b
        d_next = d_x
    return grads


def predict_scores(
    params: Parameters,
    patches: np.ndarray,
    bboxes: np.ndarray,
    batch_size: int = 64,
) -> np.ndarray:
    """Batched inference; returns (N, K) float64 scores."""
    n = len(patches)
    scores = np.empty((n, params.config.n_labels), dtype=np.float64)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        batch_scores, _ = forward(params, patches[lo:hi], bboxes[lo:hi])
        scores[lo:hi] = batch_scores
    return scores


def predict_topk(scores: np.ndarray, k: int = 5) -> List[int]:
    """Ids of the k largest scores, ties broken by lower id."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= scores.shape[0]:
        raise DataError(f"k={k} must be in [1, {scores.shape[0]}]", code="invalid_k")
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return [int(i) for i in order[:k]]
