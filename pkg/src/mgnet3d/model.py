"""The multigrid classification network.

A volume is lifted into a data map, then processed on a hierarchy of
grids. On each grid a few smoothing passes extract features by reducing
the residual between the data map and the operator applied to the
feature map; stride-2 transfer convolutions then move both maps to the
next coarser grid. The coarsest feature map is globally pooled and fed
to an affine softmax head.

Stride-1 kernels are 3x3x3 with padding 1 so both maps stay on their
grid. The stride-2 grid-transfer kernels are 1x1x1 (pure channel
reprojection); they produce the same coarse extent ceil(n/2) a padded
3x3x3 stride-2 convolution would, while keeping the parameter budget
well below a comparable 3D residual network.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .tensor import (
    Tensor,
    add,
    avg_pool3d,
    channel_norm,
    conv3d,
    conv_output_extent,
    global_avg_pool,
    linear,
    relu,
    sub,
)

__all__ = [
    "MgNetConfig",
    "LevelParams",
    "MgNetParams",
    "build",
    "smooth",
    "restrict",
    "forward",
    "level_shapes",
    "param_count",
    "param_breakdown",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "SMOOTHER_KERNEL_SIZE",
    "TRANSFER_KERNEL_SIZE",
]

CHECKPOINT_MAGIC = b"MGN3"
CHECKPOINT_VERSION = 1
SMOOTHER_KERNEL_SIZE = 3
TRANSFER_KERNEL_SIZE = 1


@dataclass
class MgNetConfig:
    """Architecture hyperparameters.

    ``smoothing_iters`` may be one int (applied to every grid) or one int
    per grid. ``feature_channels`` and ``data_channels`` must agree so the
    operator kernels can map between the two spaces on every grid.
    """

    num_grids: int = 5
    smoothing_iters: int | tuple[int, ...] = 2
    feature_channels: int = 128
    data_channels: int = 128
    input_channels: int = 1
    num_classes: int = 2
    use_avg_pool: bool = True
    use_channel_norm: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.smoothing_iters, (int, np.integer)):
            self.smoothing_iters = (int(self.smoothing_iters),) * int(self.num_grids)
        else:
            self.smoothing_iters = tuple(int(v) for v in self.smoothing_iters)
        self.validate()

    def validate(self) -> None:
        if self.num_grids < 1:
            raise ConfigError(f"num_grids must be >= 1, got {self.num_grids}")
        if len(self.smoothing_iters) != self.num_grids:
            raise ConfigError(
                f"smoothing_iters has {len(self.smoothing_iters)} entries for {self.num_grids} grids"
            )
        if any(v < 1 for v in self.smoothing_iters):
            raise ConfigError(f"smoothing_iters must all be >= 1, got {self.smoothing_iters}")
        for name in ("feature_channels", "data_channels", "input_channels", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.feature_channels != self.data_channels:
            raise ConfigError(
                "feature_channels and data_channels must match: the operator kernels map "
                f"feature maps into data space on every grid (got {self.feature_channels} "
                f"and {self.data_channels})"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass
class LevelParams:
    """Learnable kernels for one grid level.

    The coarsest grid has no transfer kernels.
    """

    operator_kernel: Tensor
    smoother_kernels: list[Tensor]
    prolongation_kernel: Tensor | None
    restriction_kernel: Tensor | None


@dataclass
class MgNetParams:
    config: MgNetConfig
    input_kernel: Tensor
    levels: list[LevelParams]
    head_weight: Tensor
    head_bias: Tensor

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        """Fixed traversal order shared by checkpoints, SGD, and counting."""
        yield "input_kernel", self.input_kernel
        for i, level in enumerate(self.levels, start=1):
            yield f"level{i}.operator", level.operator_kernel
            for j, smoother in enumerate(level.smoother_kernels, start=1):
                yield f"level{i}.smoother{j}", smoother
            if level.prolongation_kernel is not None:
                yield f"level{i}.prolongation", level.prolongation_kernel
            if level.restriction_kernel is not None:
                yield f"level{i}.restriction", level.restriction_kernel
        yield "head.weight", self.head_weight
        yield "head.bias", self.head_bias

    def tensors(self) -> Iterator[Tensor]:
        for _, t in self.named_tensors():
            yield t


def _kernel_specs(config: MgNetConfig) -> list[tuple[str, tuple[int, ...], int | None]]:
    """(name, shape, fan_in) per tensor in traversal order; fan_in None means zero-init."""
    cu, cf = config.feature_channels, config.data_channels
    k3, k1 = SMOOTHER_KERNEL_SIZE, TRANSFER_KERNEL_SIZE
    specs: list[tuple[str, tuple[int, ...], int | None]] = [
        ("input_kernel", (cf, config.input_channels, k3, k3, k3), config.input_channels * k3**3)
    ]
    for i in range(1, config.num_grids + 1):
        specs.append((f"level{i}.operator", (cf, cu, k3, k3, k3), cu * k3**3))
        for j in range(1, config.smoothing_iters[i - 1] + 1):
            specs.append((f"level{i}.smoother{j}", (cu, cf, k3, k3, k3), cf * k3**3))
        if i < config.num_grids:
            specs.append((f"level{i}.prolongation", (cu, cu, k1, k1, k1), cu * k1**3))
            specs.append((f"level{i}.restriction", (cf, cf, k1, k1, k1), cf * k1**3))
    specs.append(("head.weight", (config.num_classes, cu), cu))
    specs.append(("head.bias", (config.num_classes,), None))
    return specs


def _assemble(config: MgNetConfig, tensors: list[Tensor]) -> MgNetParams:
    it = iter(tensors)
    input_kernel = next(it)
    levels = []
    for i in range(config.num_grids):
        operator = next(it)
        smoothers = [next(it) for _ in range(config.smoothing_iters[i])]
        last = i == config.num_grids - 1
        prolongation = None if last else next(it)
        restriction = None if last else next(it)
        levels.append(LevelParams(operator, smoothers, prolongation, restriction))
    head_weight = next(it)
    head_bias = next(it)
    return MgNetParams(config, input_kernel, levels, head_weight, head_bias)


def build(config: MgNetConfig) -> MgNetParams:
    """Allocate and seed every learnable tensor.

    Kernels draw from U[-s, s] with s = sqrt(1 / fan_in) and fan_in =
    in_channels * kernel_volume; the head bias starts at zero. Draws
    happen in ``named_tensors`` order, so identical seeds give bitwise
    identical parameters.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    tensors = []
    for _, shape, fan_in in _kernel_specs(config):
        if fan_in is None:
            tensors.append(Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True))
        else:
            bound = float(np.sqrt(1.0 / fan_in))
            values = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            tensors.append(Tensor(values, requires_grad=True))
    return _assemble(config, tensors)


def _activate(x: Tensor, use_channel_norm: bool) -> Tensor:
    return relu(channel_norm(x)) if use_channel_norm else relu(x)


def smooth(
    u: Tensor,
    f: Tensor,
    operator_kernel: Tensor,
    smoother_kernel: Tensor,
    use_channel_norm: bool = False,
) -> Tensor:
    """One smoothing pass: u + act(smoother * act(f - operator * u)).

    A zero residual is a strict fixed point: the activation zeroes it and
    the correction vanishes, returning u unchanged.
    """
    residual = sub(f, conv3d(u, operator_kernel, stride=1, padding=1))
    correction = conv3d(_activate(residual, use_channel_norm), smoother_kernel, stride=1, padding=1)
    return add(u, _activate(correction, use_channel_norm))


def restrict(
    u: Tensor,
    f: Tensor,
    level: LevelParams,
    next_operator_kernel: Tensor,
    use_avg_pool: bool,
) -> tuple[Tensor, Tensor]:
    """Move the feature map and the data map to the next coarser grid.

    The coarse data map is assembled from the pre-pooling coarse feature
    map; average pooling (when enabled) is applied afterwards. Both
    outputs share the coarse spatial shape.
    """
    if level.prolongation_kernel is None or level.restriction_kernel is None:
        raise ShapeError("the coarsest grid has no transfer kernels")
    u_coarse = conv3d(u, level.prolongation_kernel, stride=2, padding=0)
    residual = sub(f, conv3d(u, level.operator_kernel, stride=1, padding=1))
    f_coarse = add(
        conv3d(residual, level.restriction_kernel, stride=2, padding=0),
        conv3d(u_coarse, next_operator_kernel, stride=1, padding=1),
    )
    if use_avg_pool:
        u_coarse = avg_pool3d(u_coarse)
    return u_coarse, f_coarse


def level_shapes(config: MgNetConfig, spatial) -> list[tuple[int, int, int]]:
    """Spatial extents on each grid, finest to coarsest.

    Each transfer halves every extent, rounding up. Raises ConfigError
    naming the offending grid if any extent would collapse below 1.
    """
    shapes = [tuple(int(n) for n in spatial)]
    for grid in range(2, config.num_grids + 1):
        nxt = tuple(conv_output_extent(n, TRANSFER_KERNEL_SIZE, 2, 0) for n in shapes[-1])
        if min(nxt) < 1:
            raise ConfigError(f"grid {grid} would have non-positive spatial extent {nxt}")
        shapes.append(nxt)
    return shapes


def forward(params: MgNetParams, volume: Tensor, trace: list | None = None) -> Tensor:
    """Run the full multigrid pass and return class logits.

    When ``trace`` is a list, the spatial shape of the feature map on each
    grid is appended to it as the pass runs.
    """
    cfg = params.config
    if volume.ndim != 4:
        raise ShapeError(f"volume must be [c,D,H,W], got shape {volume.shape}")
    if volume.shape[0] != cfg.input_channels:
        raise ShapeError(
            f"model expects {cfg.input_channels} input channel(s), volume has shape {volume.shape}"
        )
    level_shapes(cfg, volume.shape[1:])
    f = _activate(conv3d(volume, params.input_kernel, stride=1, padding=1), cfg.use_channel_norm)
    u = Tensor(
        np.zeros((cfg.feature_channels,) + volume.shape[1:], dtype=volume.data.dtype),
        dtype=volume.data.dtype,
    )
    for idx, level in enumerate(params.levels):
        for smoother in level.smoother_kernels:
            u = smooth(u, f, level.operator_kernel, smoother, cfg.use_channel_norm)
        if trace is not None:
            trace.append(u.shape[1:])
        if idx + 1 < cfg.num_grids:
            u, f = restrict(u, f, level, params.levels[idx + 1].operator_kernel, cfg.use_avg_pool)
    return linear(global_avg_pool(u), params.head_weight, params.head_bias)


def param_count(params: MgNetParams) -> int:
    """Exact number of learnable scalars."""
    return sum(t.size for t in params.tensors())


def param_breakdown(params: MgNetParams) -> list[tuple[str, int]]:
    """Subtotals per component: input kernel, each level, head."""
    groups: dict[str, int] = {}
    for name, t in params.named_tensors():
        key = name.split(".")[0] if name.startswith(("level", "head")) else name
        groups[key] = groups.get(key, 0) + t.size
    return list(groups.items())


def _config_to_bytes(config: MgNetConfig) -> bytes:
    lines = [
        f"num_grids={config.num_grids}",
        "smoothing_iters=" + ",".join(str(v) for v in config.smoothing_iters),
        f"feature_channels={config.feature_channels}",
        f"data_channels={config.data_channels}",
        f"input_channels={config.input_channels}",
        f"num_classes={config.num_classes}",
        f"use_avg_pool={int(config.use_avg_pool)}",
        f"use_channel_norm={int(config.use_channel_norm)}",
        f"seed={config.seed}",
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _config_from_bytes(blob: bytes) -> MgNetConfig:
    fields: dict[str, str] = {}
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"checkpoint config block is not UTF-8: {exc}") from None
    for line in text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"malformed checkpoint config line: {line!r}")
        key, value = line.split("=", 1)
        fields[key] = value
    expected = {
        "num_grids",
        "smoothing_iters",
        "feature_channels",
        "data_channels",
        "input_channels",
        "num_classes",
        "use_avg_pool",
        "use_channel_norm",
        "seed",
    }
    if set(fields) != expected:
        raise FormatError(
            f"checkpoint config keys {sorted(fields)} do not match expected {sorted(expected)}"
        )
    try:
        return MgNetConfig(
            num_grids=int(fields["num_grids"]),
            smoothing_iters=tuple(int(v) for v in fields["smoothing_iters"].split(",")),
            feature_channels=int(fields["feature_channels"]),
            data_channels=int(fields["data_channels"]),
            input_channels=int(fields["input_channels"]),
            num_classes=int(fields["num_classes"]),
            use_avg_pool=bool(int(fields["use_avg_pool"])),
            use_channel_norm=bool(int(fields["use_channel_norm"])),
            seed=int(fields["seed"]),
        )
    except (ValueError, ConfigError) as exc:
        raise FormatError(f"invalid checkpoint config: {exc}") from None


def save_checkpoint(params: MgNetParams, path) -> None:
    """Serialize parameters: magic, version, config block, then each tensor
    as (rank u32, extents u32 x rank, little-endian f32 payload) in
    ``named_tensors`` order."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.asarray([CHECKPOINT_VERSION], dtype="<u4").tobytes())
        blob = _config_to_bytes(params.config)
        fh.write(np.asarray([len(blob)], dtype="<u4").tobytes())
        fh.write(blob)
        for _, t in params.named_tensors():
            fh.write(np.asarray([t.ndim], dtype="<u4").tobytes())
            fh.write(np.asarray(t.shape, dtype="<u4").tobytes())
            fh.write(t.data.astype("<f4", copy=False).tobytes())


def load_checkpoint(path) -> MgNetParams:
    """Read a checkpoint, validating magic, version, and structural
    consistency with the embedded config."""
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"{path}: truncated while reading {what}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    magic = take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version = int(np.frombuffer(take(4, "version"), dtype="<u4")[0])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    blob_len = int(np.frombuffer(take(4, "config length"), dtype="<u4")[0])
    config = _config_from_bytes(take(blob_len, "config block"))

    tensors = []
    for name, shape, _ in _kernel_specs(config):
        rank = int(np.frombuffer(take(4, f"{name} rank"), dtype="<u4")[0])
        if rank != len(shape):
            raise FormatError(f"{path}: tensor {name} has rank {rank}, expected {len(shape)}")
        extents = tuple(int(v) for v in np.frombuffer(take(4 * rank, f"{name} extents"), dtype="<u4"))
        if extents != shape:
            raise FormatError(f"{path}: tensor {name} has shape {extents}, expected {shape}")
        count = int(np.prod(shape))
        payload = take(4 * count, f"{name} payload")
        data = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        if not np.isfinite(data).all():
            raise FormatError(f"{path}: tensor {name} contains non-finite values")
        tensors.append(Tensor(data, requires_grad=True))
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes after last tensor")
    return _assemble(config, tensors)
