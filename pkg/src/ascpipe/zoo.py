"""Model zoo: builders for the six CNN architectures.

All builders share the conv+batchnorm+relu block vocabulary and emit a
validated ModelGraph with freshly initialized parameters. Channel
progressions are scaled by a width multiplier so the same topology can
train at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .nn import LayerSpec, ModelGraph, initialize

FCNN_CHANNELS = (32, 32, 64, 64, 128, 128, 128, 256, 256)
FSFCNN_CHANNELS = (32, 32, 64, 64, 128, 128, 256, 256, 256, 256, 256)
RESNET_BASE_FILTERS = 32
MOBNET_STEM = 32
MOBNET_BLOCKS = (  # (out_channels, depthwise stride)
    (32, 1),
    (48, 2),
    (48, 1),
    (64, 2),
    (64, 1),
    (128, 2),
    (128, 1),
    (192, 1),
)
MOBNET_EXPANSION = 6
MOBNET_HEAD = 256
SMALL_FCNN_BASE_WIDTH = 0.7  # keeps the float32 checkpoint under 2.9 MB
DROPOUT_RATE = 0.3

ARCH_NAMES = ("fcnn", "fsfcnn", "fsfcnn_s", "resnet", "resnet_d", "mobnet", "small_fcnn")


@dataclass(frozen=True)
class ArchConfig:
    arch: str
    width_mult: float = 1.0
    n_classes: int = 10
    input_shape: tuple[int, int, int] = (423, 128, 3)

    def __post_init__(self):
        if self.arch not in ARCH_NAMES:
            raise ConfigError(f"unknown architecture {self.arch!r}; pick from {ARCH_NAMES}")
        if self.width_mult <= 0:
            raise ConfigError("width_mult must be positive")
        if self.n_classes not in (3, 10):
            raise ConfigError("n_classes must be 3 or 10")


def _scale(channels: int, width: float) -> int:
    return max(1, int(channels * width + 0.5))


def _spec(kind, name, inputs, **attrs):
    return LayerSpec(kind, name, tuple(inputs) if isinstance(inputs, (list, tuple)) else (inputs,), attrs)


def _conv_block(layers, name, src, filters, stride=(1, 1)):
    """conv(3x3, no bias) + batchnorm + relu; returns the relu layer name."""
    layers.append(_spec("conv2d", f"conv{name}", src, filters=filters, kernel=(3, 3), stride=stride))
    layers.append(_spec("batchnorm", f"bn{name}", f"conv{name}"))
    layers.append(_spec("relu", f"relu{name}", f"bn{name}"))
    return f"relu{name}"


def _head(layers, src, n_classes):
    layers.append(_spec("global_avg_pool", "gap", src))
    layers.append(_spec("dense", "fc", "gap", units=n_classes))
    layers.append(_spec("softmax", "probs", "fc"))


def _fcnn_layers(cfg: ArchConfig, width: float):
    layers = []
    src = "input"
    for i, base in enumerate(FCNN_CHANNELS, start=1):
        src = _conv_block(layers, str(i), src, _scale(base, width))
        if i in (2, 4, 8):
            layers.append(_spec("maxpool", f"pool{i}", src, pool=(2, 2)))
            src = f"pool{i}"
        if i >= 5:
            layers.append(_spec("dropout", f"drop{i}", src, rate=DROPOUT_RATE))
            src = f"drop{i}"
    layers.append(_spec("channel_attention", "se", src, reduction=4))
    _head(layers, "se", cfg.n_classes)
    return layers


def build_fcnn(cfg: ArchConfig, seed: int = 0) -> ModelGraph:
    """9 conv blocks, 2x2 pools after blocks 2/4/8, dropout on 5-9, SE gate."""
    graph = ModelGraph("fcnn", cfg.input_shape, _fcnn_layers(cfg, cfg.width_mult))
    return initialize(graph, seed)


def build_small_fcnn(cfg: ArchConfig, seed: int = 0) -> ModelGraph:
    """The fcnn topology at a reduced base width."""
    width = cfg.width_mult * SMALL_FCNN_BASE_WIDTH
    graph = ModelGraph("small_fcnn", cfg.input_shape, _fcnn_layers(cfg, width))
    return initialize(graph, seed)


def _fsfcnn_trunk(layers, prefix, src, width):
    """11 conv blocks; 2x2 pools after 2/4, 1x2 pools after 6/8, dropout 5-11."""
    for i, base in enumerate(FSFCNN_CHANNELS, start=1):
        src = _conv_block(layers, f"{prefix}{i}", src, _scale(base, width))
        if i in (2, 4):
            layers.append(_spec("maxpool", f"pool{prefix}{i}", src, pool=(2, 2)))
            src = f"pool{prefix}{i}"
        elif i in (6, 8):
            layers.append(_spec("maxpool", f"pool{prefix}{i}", src, pool=(1, 2)))
            src = f"pool{prefix}{i}"
        if i >= 5:
            layers.append(_spec("dropout", f"drop{prefix}{i}", src, rate=DROPOUT_RATE))
            src = f"drop{prefix}{i}"
    return src


def build_fsfcnn(cfg: ArchConfig, seed: int = 0) -> ModelGraph:
    """11 conv blocks; frequency is pooled twice more than time."""
    layers = []
    src = _fsfcnn_trunk(layers, "", "input", cfg.width_mult)
    layers.append(_spec("channel_attention", "se", src, reduction=4))
    _head(layers, "se", cfg.n_classes)
    return initialize(ModelGraph("fsfcnn", cfg.input_shape, layers), seed)


def build_fsfcnn_s(cfg: ArchConfig, seed: int = 0) -> ModelGraph:
    """Two independent trunks on the low and high frequency halves."""
    if cfg.input_shape[1] % 2:
        raise ConfigError("fsfcnn_s needs an even number of frequency bins")
    layers = [
        _spec("freq_split", "band_lo", "input", part=0),
        _spec("freq_split", "band_hi", "input", part=1),
    ]
    lo = _fsfcnn_trunk(layers, "lo", "band_lo", cfg.width_mult)
    hi = _fsfcnn_trunk(layers, "hi", "band_hi", cfg.width_mult)
    layers.append(_spec("concat", "merge", (lo, hi), axis="channel"))
    merged = _scale(FSFCNN_CHANNELS[-1], cfg.width_mult)
    src = _conv_block(layers, "12", "merge", merged)
    src = _conv_block(layers, "13", src, merged)
    _head(layers, src, cfg.n_classes)
    return initialize(ModelGraph("fsfcnn_s", cfg.input_shape, layers), seed)


def build_resnet(cfg: ArchConfig, doubled: bool = False, seed: int = 0) -> ModelGraph:
    """Entry conv + two per-band stacks of 4 identity-shortcut blocks.

    17 convolutions in total and no layer subsamples time or frequency.
    """
    if cfg.input_shape[1] % 2:
        raise ConfigError("resnet needs an even number of frequency bins")
    filters = _scale(RESNET_BASE_FILTERS * (2 if doubled else 1), cfg.width_mult)
    layers = []
    src = _conv_block(layers, "_in", "input", filters)
    layers.append(_spec("freq_split", "band_lo", src, part=0))
    layers.append(_spec("freq_split", "band_hi", src, part=1))
    for prefix, band in (("lo", "band_lo"), ("hi", "band_hi")):
        src = band
        for b in range(1, 5):
            tag = f"{prefix}{b}"
            a = _conv_block(layers, f"{tag}a", src, filters)
            layers.append(_spec("conv2d", f"conv{tag}b", a, filters=filters, kernel=(3, 3)))
            layers.append(_spec("batchnorm", f"bn{tag}b", f"conv{tag}b"))
            layers.append(_spec("residual_add", f"add{tag}", (f"bn{tag}b", src)))
            layers.append(_spec("relu", f"relu{tag}", f"add{tag}"))
            src = f"relu{tag}"
    layers.append(_spec("concat", "merge", ("relulo4", "reluhi4"), axis="freq"))
    _head(layers, "merge", cfg.n_classes)
    name = "resnet_d" if doubled else "resnet"
    return initialize(ModelGraph(name, cfg.input_shape, layers), seed)


def _inverted_residual(layers, name, src, c_in, c_out, stride):
    expanded = c_in * MOBNET_EXPANSION
    layers.append(_spec("conv2d", f"conv{name}x", src, filters=expanded, kernel=(1, 1)))
    layers.append(_spec("batchnorm", f"bn{name}x", f"conv{name}x"))
    layers.append(_spec("relu", f"relu{name}x", f"bn{name}x"))
    layers.append(
        _spec("depthwise_conv2d", f"dw{name}", f"relu{name}x", kernel=(3, 3), stride=(stride, stride))
    )
    layers.append(_spec("batchnorm", f"bn{name}d", f"dw{name}"))
    layers.append(_spec("relu", f"relu{name}d", f"bn{name}d"))
    layers.append(_spec("conv2d", f"conv{name}p", f"relu{name}d", filters=c_out, kernel=(1, 1)))
    layers.append(_spec("batchnorm", f"bn{name}p", f"conv{name}p"))
    if stride == 1 and c_in == c_out:
        layers.append(_spec("residual_add", f"add{name}", (f"bn{name}p", src)))
        return f"add{name}"
    return f"bn{name}p"


def build_mobnet(cfg: ArchConfig, seed: int = 0) -> ModelGraph:
    """Inverted-residual stack: 1x1 expand, depthwise 3x3, 1x1 project."""
    w = cfg.width_mult
    layers = []
    stem = _scale(MOBNET_STEM, w)
    src = _conv_block(layers, "_stem", "input", stem, stride=(2, 2))
    c_in = stem
    for i, (out, stride) in enumerate(MOBNET_BLOCKS, start=1):
        c_out = _scale(out, w)
        src = _inverted_residual(layers, f"b{i}", src, c_in, c_out, stride)
        c_in = c_out
    layers.append(_spec("conv2d", "conv_head", src, filters=_scale(MOBNET_HEAD, w), kernel=(1, 1)))
    layers.append(_spec("batchnorm", "bn_head", "conv_head"))
    layers.append(_spec("relu", "relu_head", "bn_head"))
    _head(layers, "relu_head", cfg.n_classes)
    return initialize(ModelGraph("mobnet", cfg.input_shape, layers), seed)


def build(cfg: ArchConfig, seed: int = 0) -> ModelGraph:
    """Build any zoo architecture by name."""
    if cfg.arch == "fcnn":
        return build_fcnn(cfg, seed)
    if cfg.arch == "small_fcnn":
        return build_small_fcnn(cfg, seed)
    if cfg.arch == "fsfcnn":
        return build_fsfcnn(cfg, seed)
    if cfg.arch == "fsfcnn_s":
        return build_fsfcnn_s(cfg, seed)
    if cfg.arch == "resnet":
        return build_resnet(cfg, doubled=False, seed=seed)
    if cfg.arch == "resnet_d":
        return build_resnet(cfg, doubled=True, seed=seed)
    if cfg.arch == "mobnet":
        return build_mobnet(cfg, seed)
    raise ConfigError(f"unknown architecture {cfg.arch!r}")
