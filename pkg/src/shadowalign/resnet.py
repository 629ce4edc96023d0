"""Permutation propagation through a residual network head.

Skip connections tie the channel ordering of a block's output to the ordering
of its input, so permuting the classifier's input features requires touching
two residual blocks. This module models the top of such a network — a block
with a projection shortcut, a block with an identity shortcut, global average
pooling and the final classifier — in evaluation mode (fixed batch-norm
statistics), and implements the channel permutation that preserves the
composed function.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError
from .nn.layers import Conv2D, conv2d_forward
from .symmetry import Permutation

BN_EPS = 1e-5


@dataclass
class BatchNorm:
    """Per-channel affine normalisation with frozen statistics."""

    mean: np.ndarray
    var: np.ndarray
    weight: np.ndarray
    bias: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        scale = self.weight / np.sqrt(self.var + BN_EPS)
        shift = self.bias - self.mean * scale
        return x * scale[None, :, None, None] + shift[None, :, None, None]

    def permuted(self, mapping: np.ndarray) -> "BatchNorm":
        out = BatchNorm(*(np.empty_like(v) for v in (self.mean, self.var, self.weight, self.bias)))
        for src, dst in (
            (self.mean, out.mean),
            (self.var, out.var),
            (self.weight, out.weight),
            (self.bias, out.bias),
        ):
            dst[mapping] = src
        return out


@dataclass
class ResidualBlock:
    conv1: np.ndarray  # (C, C_in, k, k)
    bn1: BatchNorm
    conv2: np.ndarray  # (C, C, k, k)
    bn2: BatchNorm


@dataclass
class ResNetHead:
    """Projection block, identity block, average pool and classifier."""

    block_low: ResidualBlock  # has the projection shortcut
    proj_conv: np.ndarray  # (C, C_in, 1, 1)
    proj_bn: BatchNorm
    block_top: ResidualBlock  # identity shortcut, channels C -> C
    fc_w: np.ndarray  # (n_classes, C)
    fc_b: np.ndarray

    @property
    def channels(self) -> int:
        return self.fc_w.shape[1]


def _conv(x: np.ndarray, w: np.ndarray, padding: int) -> np.ndarray:
    layer = Conv2D(w=w, b=np.zeros(w.shape[0], dtype=np.float32), padding=padding)
    return conv2d_forward(layer, x)


def _block(x: np.ndarray, blk: ResidualBlock) -> np.ndarray:
    k = blk.conv1.shape[2]
    h = blk.bn1.apply(_conv(x, blk.conv1, padding=k // 2))
    h = np.maximum(h, 0.0)
    return blk.bn2.apply(_conv(h, blk.conv2, padding=k // 2))


def head_forward(head: ResNetHead, x: np.ndarray) -> np.ndarray:
    """Logits of the head on a batch of (B, C_in, H, W) inputs."""
    low = _block(x, head.block_low)
    shortcut = head.proj_bn.apply(_conv(x, head.proj_conv, padding=0))
    h = np.maximum(low + shortcut, 0.0)
    top = _block(h, head.block_top)
    h = np.maximum(top + h, 0.0)
    pooled = h.mean(axis=(2, 3))
    return pooled @ head.fc_w.T + head.fc_b


def permute_resnet_head(
    head: ResNetHead, perm: Permutation, skip_input_channels: bool = False
) -> ResNetHead:
    """Permute the classifier's input channels and propagate the permutation
    down through the identity block, the lower block and its projection.

    The steps, in order: the top block's second batch norm, the output
    channels of its second convolution, the input channels of its first
    convolution (so the identity shortcut stays consistent), and then the
    producers of that input — the lower block's second conv/bn pair and the
    projection conv/bn pair. ``skip_input_channels`` deliberately omits the
    input-channel step; it exists for negative-control tests and breaks
    function preservation.
    """
    m = perm.mapping
    c = head.channels
    if perm.size != c:
        raise ShapeError(f"permutation size {perm.size} != head channels {c}")
    if head.block_top.conv1.shape[0] != c or head.block_top.conv1.shape[1] != c:
        raise ShapeError("identity block must map C channels to C channels")

    def permute_out(w: np.ndarray) -> np.ndarray:
        out = np.empty_like(w)
        out[m] = w
        return out

    def permute_in(w: np.ndarray) -> np.ndarray:
        out = np.empty_like(w)
        out[:, m] = w
        return out

    new_fc = np.empty_like(head.fc_w)
    new_fc[:, m] = head.fc_w

    top = head.block_top
    new_top = ResidualBlock(
        conv1=top.conv1 if skip_input_channels else permute_in(top.conv1),
        bn1=replace(
            top.bn1,
            mean=top.bn1.mean.copy(),
            var=top.bn1.var.copy(),
            weight=top.bn1.weight.copy(),
            bias=top.bn1.bias.copy(),
        ),
        conv2=permute_out(top.conv2),
        bn2=top.bn2.permuted(m),
    )
    low = head.block_low
    new_low = ResidualBlock(
        conv1=low.conv1.copy(),
        bn1=replace(
            low.bn1,
            mean=low.bn1.mean.copy(),
            var=low.bn1.var.copy(),
            weight=low.bn1.weight.copy(),
            bias=low.bn1.bias.copy(),
        ),
        conv2=permute_out(low.conv2),
        bn2=low.bn2.permuted(m),
    )
    return ResNetHead(
        block_low=new_low,
        proj_conv=permute_out(head.proj_conv),
        proj_bn=head.proj_bn.permuted(m),
        block_top=new_top,
        fc_w=new_fc,
        fc_b=head.fc_b.copy(),
    )


def random_head(
    rng: np.random.Generator, channels: int = 8, in_channels: int = 6, n_classes: int = 5, kernel: int = 3
) -> ResNetHead:
    """Random synthetic head weights for oracle tests."""

    def bn(c):
        return BatchNorm(
            mean=rng.normal(0, 0.5, c).astype(np.float32),
            var=rng.uniform(0.5, 1.5, c).astype(np.float32),
            weight=rng.normal(1.0, 0.2, c).astype(np.float32),
            bias=rng.normal(0, 0.2, c).astype(np.float32),
        )

    def conv(c_out, c_in, k):
        scale = 1.0 / np.sqrt(c_in * k * k)
        return rng.uniform(-scale, scale, (c_out, c_in, k, k)).astype(np.float32)

    return ResNetHead(
        block_low=ResidualBlock(
            conv1=conv(channels, in_channels, kernel),
            bn1=bn(channels),
            conv2=conv(channels, channels, kernel),
            bn2=bn(channels),
        ),
        proj_conv=conv(channels, in_channels, 1),
        proj_bn=bn(channels),
        block_top=ResidualBlock(
            conv1=conv(channels, channels, kernel),
            bn1=bn(channels),
            conv2=conv(channels, channels, kernel),
            bn2=bn(channels),
        ),
        fc_w=rng.uniform(-0.3, 0.3, (n_classes, channels)).astype(np.float32),
        fc_b=rng.uniform(-0.1, 0.1, n_classes).astype(np.float32),
    )
