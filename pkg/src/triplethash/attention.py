"""Spatial attention over convolutional feature maps.

Builds a single-channel map in (-1, 1) from three channel-axis descriptors
of the input feature maps: the per-pixel channel maximum, the per-pixel
channel mean, and a 3x3 local-window maximum (stride 1 so all three keep the
input's spatial extent, then reduced over channels). Each descriptor passes
through one shared MLP, the results are concatenated and convolved down to
one channel, and a tanh bounds the map. Multiplying the map back onto the
feature maps reweights locations.
"""

import numpy as np

from . import autodiff as ad
from .errors import ShapeError

channel_max_map = ad.channel_max
channel_mean_map = ad.channel_mean


def local_max_map(f):
    """3x3 stride-1 window maximum, then channel maximum; keeps H x W."""
    return ad.channel_max(ad.maxpool2d(f, window=3, stride=1, padding="same"))


def apply_attention(f, m):
    """Per-channel broadcast product of feature maps with the attention map."""
    if f.shape[2:] != m.shape[2:]:
        raise ShapeError(
            f"attention map spatial extent {m.shape[2:]} does not match feature maps {f.shape[2:]}"
        )
    return ad.elementwise_mul(f, m)


class SpatialAttention:
    """Parameters and forward pass of the attention block.

    The MLP flattens the H*W map, projects it to ``hidden`` units with ReLU,
    and projects back; one weight set serves all three descriptors.
    """

    def __init__(self, height, width, hidden, rng):
        if hidden < 1:
            raise ShapeError(f"attention MLP hidden size must be >= 1, got {hidden}")
        self.height = height
        self.width = width
        hw = height * width
        self.w1 = ad.uniform_init(rng, (hw, hidden), hw, hidden)
        self.b1 = ad.Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = ad.uniform_init(rng, (hidden, hw), hidden, hw)
        self.b2 = ad.Tensor(np.zeros(hw), requires_grad=True)
        # the map multiplies the feature maps, so it must start near-open:
        # near-zero init would gate off both signal and gradient
        conv_w = ad.uniform_init(rng, (1, 3, 3, 3), 3 * 9, 9)
        conv_w.data *= 0.1
        self.conv_w = conv_w
        self.conv_b = ad.Tensor(np.full(1, np.arctanh(0.8)), requires_grad=True)

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2, self.conv_w, self.conv_b]

    def shared_mlp(self, d):
        n = d.shape[0]
        flat = ad.reshape(d, (n, self.height * self.width))
        hidden = ad.relu(ad.dense(flat, self.w1, self.b1))
        out = ad.dense(hidden, self.w2, self.b2)
        return ad.reshape(out, (n, 1, self.height, self.width))

    def attention_map(self, f):
        """Single-channel map in (-1, 1) with the input's spatial extent."""
        if f.shape[2] != self.height or f.shape[3] != self.width:
            raise ShapeError(
                f"attention expects {self.height}x{self.width} maps, got {f.shape[2]}x{f.shape[3]}"
            )
        descriptors = [
            self.shared_mlp(channel_mean_map(f)),
            self.shared_mlp(channel_max_map(f)),
            self.shared_mlp(local_max_map(f)),
        ]
        stacked = ad.concat(descriptors, axis=1)
        conv = ad.conv2d(stacked, self.conv_w, self.conv_b, stride=1, padding="same")
        return ad.tanh_act(conv)

    def __call__(self, f):
        return apply_attention(f, self.attention_map(f))
