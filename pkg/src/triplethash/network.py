"""The full hashing network and its checkpoint format.

Layout: a residual block plus max-pooling (stage one), the spatial-attention
block, a second residual block plus average-pooling (stage two), a 1x1
convolution collapsing channels into one square activation map, and two
fully connected heads off that flattened map: a tanh-bounded hash head with
one unit per code bit and a linear classification head with one unit per
class. One parameter set serves all three images of a triplet.

Each residual block is conv(3x3, stride 2) - BN - ReLU - conv(3x3, stride 1)
- BN, added to a 1x1 stride-2 projection of the input, then ReLU. With the
two pooling layers this divides the input extent by 16, so the activation
map side is input_size / 16.
"""

import io
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .attention import SpatialAttention
from .errors import ConfigError, FormatError, ShapeError
from .index import HashCode, pack_bits

CHECKPOINT_MAGIC = b"ATHM"
CHECKPOINT_VERSION = 1


@dataclass
class NetConfig:
    """Model plus training hyperparameters; the checkpoint header payload."""

    input_size: int = 64
    in_channels: int = 1
    hash_bits: int = 36
    num_classes: int = 4
    margin_weight: float = 0.5
    base_channels: int = 16
    mlp_hidden: int = 0  # 0 means the activation-map size (dense_side ** 2)
    use_attention: bool = True
    seed: int = 0
    lr: float = 0.01
    momentum: float = 0.9
    batch: int = 10
    epochs: int = 50

    @property
    def dense_side(self):
        return self.input_size // 16

    def resolved_mlp_hidden(self):
        return self.mlp_hidden if self.mlp_hidden > 0 else self.dense_side**2

    def validate(self):
        if self.input_size < 16 or self.input_size % 16 != 0:
            raise ConfigError(f"input_size must be a positive multiple of 16, got {self.input_size}")
        if self.hash_bits < 1:
            raise ConfigError(f"hash_bits must be >= 1, got {self.hash_bits}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.margin_weight <= 1.0:
            raise ConfigError(f"margin_weight must be in [0, 1], got {self.margin_weight}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        return self


def spatial_plan(cfg):
    """Spatial extents after each stage, without allocating parameters."""
    s = cfg.input_size
    return {
        "input": s,
        "stage1": s // 4,
        "attention": s // 4,
        "stage2": s // 16,
        "dense_map": s // 16,
        "hash_bits": cfg.hash_bits,
        "classes": cfg.num_classes,
    }


@dataclass
class ForwardOutput:
    dense_map: ad.Tensor  # (N, 1, side, side)
    hash_vec: ad.Tensor  # (N, k), values in (-1, 1)
    logits: ad.Tensor  # (N, c)


class _ResidualBlock:
    def __init__(self, in_ch, out_ch, rng):
        k = 3
        self.conv1_w = ad.uniform_init(rng, (out_ch, in_ch, k, k), in_ch * k * k, out_ch * k * k)
        self.conv1_b = ad.Tensor(np.zeros(out_ch), requires_grad=True)
        self.bn1_gamma = ad.Tensor(np.ones(out_ch), requires_grad=True)
        self.bn1_beta = ad.Tensor(np.zeros(out_ch), requires_grad=True)
        self.bn1_stats = ad.RunningStats(out_ch)
        self.conv2_w = ad.uniform_init(rng, (out_ch, out_ch, k, k), out_ch * k * k, out_ch * k * k)
        self.conv2_b = ad.Tensor(np.zeros(out_ch), requires_grad=True)
        self.bn2_gamma = ad.Tensor(np.ones(out_ch), requires_grad=True)
        self.bn2_beta = ad.Tensor(np.zeros(out_ch), requires_grad=True)
        self.bn2_stats = ad.RunningStats(out_ch)
        self.proj_w = ad.uniform_init(rng, (out_ch, in_ch, 1, 1), in_ch, out_ch)
        self.proj_b = ad.Tensor(np.zeros(out_ch), requires_grad=True)

    def parameters(self):
        return [
            self.conv1_w, self.conv1_b, self.bn1_gamma, self.bn1_beta,
            self.conv2_w, self.conv2_b, self.bn2_gamma, self.bn2_beta,
            self.proj_w, self.proj_b,
        ]

    def stats(self):
        return [self.bn1_stats, self.bn2_stats]

    def forward(self, x, mode):
        h = ad.conv2d(x, self.conv1_w, self.conv1_b, stride=2, padding="same")
        h = ad.relu(ad.batchnorm(h, self.bn1_gamma, self.bn1_beta, self.bn1_stats, mode))
        h = ad.conv2d(h, self.conv2_w, self.conv2_b, stride=1, padding="same")
        h = ad.batchnorm(h, self.bn2_gamma, self.bn2_beta, self.bn2_stats, mode)
        skip = ad.conv2d(x, self.proj_w, self.proj_b, stride=2, padding="same")
        return ad.relu(ad.add(h, skip))


class TripletHashNet:
    def __init__(self, cfg: NetConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        ch = cfg.base_channels
        side = cfg.dense_side
        att_extent = cfg.input_size // 4
        self.block1 = _ResidualBlock(cfg.in_channels, ch, rng)
        self.attention = SpatialAttention(att_extent, att_extent, cfg.resolved_mlp_hidden(), rng)
        self.block2 = _ResidualBlock(ch, ch, rng)
        self.dense_w = ad.uniform_init(rng, (1, ch, 1, 1), ch, 1)
        self.dense_b = ad.Tensor(np.zeros(1), requires_grad=True)
        flat = side * side
        self.hash_w = ad.uniform_init(rng, (flat, cfg.hash_bits), flat, cfg.hash_bits)
        self.hash_b = ad.Tensor(np.zeros(cfg.hash_bits), requires_grad=True)
        self.cls_w = ad.uniform_init(rng, (flat, cfg.num_classes), flat, cfg.num_classes)
        self.cls_b = ad.Tensor(np.zeros(cfg.num_classes), requires_grad=True)

    def parameters(self):
        return (
            self.block1.parameters()
            + self.attention.parameters()
            + self.block2.parameters()
            + [self.dense_w, self.dense_b, self.hash_w, self.hash_b, self.cls_w, self.cls_b]
        )

    def running_stats(self):
        return self.block1.stats() + self.block2.stats()

    def forward(self, images, mode="eval"):
        """Run a batch of images through the network.

        images: Tensor or array of shape (N, in_channels, S, S).
        """
        if not isinstance(images, ad.Tensor):
            images = ad.Tensor(images)
        cfg = self.cfg
        if images.ndim != 4:
            raise ShapeError(f"expected 4-D image batch, got shape {images.shape}")
        n, c, h, w = images.shape
        if c != cfg.in_channels or h != cfg.input_size or w != cfg.input_size:
            raise ShapeError(
                f"expected images of shape (N, {cfg.in_channels}, {cfg.input_size}, "
                f"{cfg.input_size}), got {images.shape}"
            )
        f = self.block1.forward(images, mode)
        f = ad.maxpool2d(f, window=3, stride=2, padding="same")
        if cfg.use_attention:
            f = self.attention(f)
        f = self.block2.forward(f, mode)
        f = ad.avgpool2d(f, window=3, stride=2, padding="same")
        dense_map = ad.conv2d(f, self.dense_w, self.dense_b, stride=1, padding="same")
        flat = ad.reshape(dense_map, (n, cfg.dense_side**2))
        hash_vec = ad.tanh_act(ad.dense(flat, self.hash_w, self.hash_b))
        logits = ad.dense(flat, self.cls_w, self.cls_b)
        return ForwardOutput(dense_map=dense_map, hash_vec=hash_vec, logits=logits)

    def forward_triplet(self, q, p, n, mode="train"):
        """Three forwards through the single shared parameter set."""
        return self.forward(q, mode), self.forward(p, mode), self.forward(n, mode)


def binarize(hash_vec) -> HashCode:
    """Sign-binarize one real-valued hash vector: bit i = 1 iff value >= 0."""
    v = np.asarray(hash_vec, dtype=np.float64).reshape(-1)
    return pack_bits((v >= 0.0).astype(np.uint8))


def cam_heatmap(dense_map, out_size) -> np.ndarray:
    """Min-max normalize an activation map to 8-bit gray, upsampled to out_size.

    A constant map normalizes to all zeros. Upsampling is nearest-neighbor;
    out_size must be a multiple of the map side.
    """
    m = np.asarray(dense_map, dtype=np.float64)
    m = m.reshape(m.shape[-2], m.shape[-1])
    if not np.isfinite(m).all():
        raise ShapeError("activation map contains non-finite values")
    lo, hi = m.min(), m.max()
    if hi > lo:
        scaled = np.rint((m - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        scaled = np.zeros_like(m, dtype=np.uint8)
    factor = out_size // m.shape[0]
    if factor * m.shape[0] != out_size:
        raise ShapeError(
            f"output extent {out_size} is not a multiple of the map side {m.shape[0]}"
        )
    return np.repeat(np.repeat(scaled, factor, axis=0), factor, axis=1)


# ---------------------------------------------------------------------------
# checkpoint format: magic, version byte, config fields (fixed-width LE),
# then every parameter tensor and batchnorm running array in declaration
# order as (ndim u8, extents u32 each, raw float64 LE data)

_CONFIG_FIELDS = [
    ("input_size", "I"),
    ("in_channels", "I"),
    ("hash_bits", "I"),
    ("num_classes", "I"),
    ("base_channels", "I"),
    ("mlp_hidden", "I"),
    ("use_attention", "B"),
    ("seed", "Q"),
    ("margin_weight", "d"),
    ("lr", "d"),
    ("momentum", "d"),
    ("batch", "I"),
    ("epochs", "I"),
]


def _checkpoint_arrays(model):
    arrays = [p.data for p in model.parameters()]
    for st in model.running_stats():
        arrays.append(st.mean)
        arrays.append(st.var)
    return arrays


def save_checkpoint(model, path):
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<B", CHECKPOINT_VERSION))
    cfg = model.cfg
    for name, code in _CONFIG_FIELDS:
        value = getattr(cfg, name)
        if code == "B":
            value = int(bool(value))
        buf.write(struct.pack("<" + code, value))
    arrays = _checkpoint_arrays(model)
    buf.write(struct.pack("<I", len(arrays)))
    for arr in arrays:
        buf.write(struct.pack("<B", arr.ndim))
        for extent in arr.shape:
            buf.write(struct.pack("<I", extent))
        buf.write(arr.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, count, path, what):
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"{path}: truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> TripletHashNet:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a model checkpoint (bad magic {magic!r})")
        (version,) = struct.unpack("<B", _read_exact(fh, 1, path, "version"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        kwargs = {}
        for name, code in _CONFIG_FIELDS:
            size = struct.calcsize("<" + code)
            (value,) = struct.unpack("<" + code, _read_exact(fh, size, path, name))
            if code == "B":
                value = bool(value)
            kwargs[name] = value
        cfg = NetConfig(**kwargs)
        try:
            cfg.validate()
        except ConfigError as exc:
            raise FormatError(f"{path}: invalid checkpoint config: {exc}") from exc
        model = TripletHashNet(cfg)
        arrays = _checkpoint_arrays(model)
        (count,) = struct.unpack("<I", _read_exact(fh, 4, path, "tensor count"))
        if count != len(arrays):
            raise FormatError(
                f"{path}: checkpoint holds {count} tensors, model needs {len(arrays)}"
            )
        for arr in arrays:
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, path, "tensor rank"))
            if ndim != arr.ndim:
                raise FormatError(f"{path}: tensor rank {ndim} does not match model ({arr.ndim})")
            shape = struct.unpack(
                "<" + "I" * ndim, _read_exact(fh, 4 * ndim, path, "tensor shape")
            )
            if shape != arr.shape:
                raise FormatError(f"{path}: tensor shape {shape} does not match model {arr.shape}")
            raw = _read_exact(fh, arr.size * 8, path, "tensor data")
            arr[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after checkpoint payload")
    return model


def config_fields():
    """Names of the NetConfig fields, in declaration order."""
    return [f.name for f in fields(NetConfig)]
