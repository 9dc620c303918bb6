"""Vision feature path: patch encoder, mask branch, fusion, projector.

The image is patchified into a feature grid; each segmentation mask goes
through three stride-2 convolutions, global average pooling, and a fully
connected layer; per-patch image features are concatenated channel-wise
with the broadcast target and hand mask vectors (target first) and a
2-layer perceptron projects the fused tokens into the policy embedding
space. The whole module runs frozen in the paper-faithful training
regime; an autodiff twin of the forward pass exists for gradient checks.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .perception import RESOLUTION

PATCH = 16
GRID = RESOLUTION // PATCH      # 14 patches per side
C_IMG = 64
C_MASK = 32
EMBED_DIM = 128
CONV_CHANNELS = (8, 16, 32)
FUSED_DIM = C_IMG + 2 * C_MASK


@dataclass(frozen=True)
class FeatureGrid:
    data: np.ndarray            # (GRID, GRID, C_IMG)

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.shape != (GRID, GRID, C_IMG) or not np.all(np.isfinite(d)):
            raise ValueError("bad feature grid")


@dataclass(frozen=True)
class MaskFeature:
    vector: np.ndarray          # (C_MASK,)
    subject: str

    def __post_init__(self):
        v = np.asarray(self.vector)
        if v.shape != (C_MASK,) or not np.all(np.isfinite(v)):
            raise ValueError("bad mask feature")


@dataclass(frozen=True)
class FusedTokens:
    tokens: np.ndarray          # (GRID*GRID, FUSED_DIM)

    def __post_init__(self):
        t = np.asarray(self.tokens)
        if t.shape != (GRID * GRID, FUSED_DIM):
            raise ValueError("fused token channel dim must be C_img + 2*C_mask")


@dataclass(frozen=True)
class EmbeddingSequence:
    tokens: np.ndarray          # (GRID*GRID, EMBED_DIM)

    def __post_init__(self):
        t = np.asarray(self.tokens)
        if t.shape != (GRID * GRID, EMBED_DIM) or not np.all(np.isfinite(t)):
            raise ValueError("bad embedding sequence")


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_fusion_params(seed=0):
    """Seeded fan-in-scaled uniform initialization of every named tensor."""
    rng = np.random.default_rng(seed)
    p = {}
    p["patch_w"] = _uniform(rng, (PATCH * PATCH * 3, C_IMG), PATCH * PATCH * 3)
    p["patch_b"] = np.zeros(C_IMG)
    c_in = 1
    for i, c_out in enumerate(CONV_CHANNELS):
        p[f"conv{i}_w"] = _uniform(rng, (c_out, c_in, 3, 3), c_in * 9)
        p[f"conv{i}_b"] = np.zeros(c_out)
        c_in = c_out
    p["mask_fc_w"] = _uniform(rng, (CONV_CHANNELS[-1], C_MASK), CONV_CHANNELS[-1])
    p["mask_fc_b"] = np.zeros(C_MASK)
    p["proj_w1"] = _uniform(rng, (FUSED_DIM, EMBED_DIM), FUSED_DIM)
    p["proj_b1"] = np.zeros(EMBED_DIM)
    p["proj_w2"] = _uniform(rng, (EMBED_DIM, EMBED_DIM), EMBED_DIM)
    p["proj_b2"] = np.zeros(EMBED_DIM)
    return p


def _patchify(pixels):
    x = pixels.reshape(GRID, PATCH, GRID, PATCH, 3)
    return x.transpose(0, 2, 1, 3, 4).reshape(GRID, GRID, PATCH * PATCH * 3)


# ---------------------------------------------------------------------------
# fast numpy forward (frozen-module path)

def encode_image(image, params):
    """Non-overlapping patchification, per-patch affine map, tanh."""
    px = image.pixels if hasattr(image, "pixels") else np.asarray(image, dtype=float)
    if px.shape != (RESOLUTION, RESOLUTION, 3):
        raise ValueError("expected a 224x224x3 image")
    grid = np.tanh(_patchify(px) @ params["patch_w"] + params["patch_b"])
    return FeatureGrid(grid)


def encode_mask(mask, params):
    """Three stride-2 convolutions, global average pooling, one FC layer."""
    bm = mask.bitmap if hasattr(mask, "bitmap") else np.asarray(mask)
    if bm.shape != (RESOLUTION, RESOLUTION):
        raise ValueError("expected a 224x224 mask")
    x = bm.astype(float)[None, None]
    for i in range(len(CONV_CHANNELS)):
        x = _conv_forward_np(x, params[f"conv{i}_w"], params[f"conv{i}_b"])
        x = np.tanh(x)
    pooled = x.mean(axis=(2, 3))[0]
    vec = pooled @ params["mask_fc_w"] + params["mask_fc_b"]
    subject = getattr(mask, "subject", "target_instrument")
    return MaskFeature(vec, subject)


def _conv_forward_np(x, w, b, stride=2, pad=1):
    k = w.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    view = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    pat = view[:, :, ::stride, ::stride].transpose(0, 2, 3, 1, 4, 5)
    cols = pat.reshape(pat.shape[0], pat.shape[1], pat.shape[2], -1)
    y = cols @ w.reshape(w.shape[0], -1).T + b
    return y.transpose(0, 3, 1, 2)


def fuse(grid, target, hand):
    """Per-patch channel-wise concatenation: [image || target || hand]."""
    g = grid.data.reshape(GRID * GRID, C_IMG)
    t = np.broadcast_to(target.vector, (GRID * GRID, C_MASK))
    h = np.broadcast_to(hand.vector, (GRID * GRID, C_MASK))
    return FusedTokens(np.concatenate([g, t, h], axis=1))


def project(fused, params):
    """Two-layer perceptron applied token-wise."""
    x = np.tanh(fused.tokens @ params["proj_w1"] + params["proj_b1"])
    return EmbeddingSequence(x @ params["proj_w2"] + params["proj_b2"])


def encode_observation(image, target_mask, hand_mask, params):
    grid = encode_image(image, params)
    tfeat = encode_mask(target_mask, params)
    hfeat = encode_mask(hand_mask, params)
    return project(fuse(grid, tfeat, hfeat), params)


# ---------------------------------------------------------------------------
# autodiff twin (gradient checks; matches the fast path bit-for-bit)

def tensor_params(params):
    return {k: ad.parameter(v) for k, v in params.items()}


def encode_image_t(pixels, tp):
    cols = ad.Tensor(_patchify(np.asarray(pixels, dtype=float)).reshape(GRID * GRID, -1))
    return ad.tanh(cols @ tp["patch_w"] + tp["patch_b"])


def encode_mask_t(bitmap, tp):
    x = ad.Tensor(np.asarray(bitmap, dtype=float)[None, None])
    for i in range(len(CONV_CHANNELS)):
        x = ad.tanh(ad.conv2d(x, tp[f"conv{i}_w"], tp[f"conv{i}_b"]))
    pooled = ad.reshape(ad.mean(x, axis=(2, 3)), (CONV_CHANNELS[-1],))
    return ad.reshape(pooled, (1, -1)) @ tp["mask_fc_w"] + tp["mask_fc_b"]


def fuse_t(grid_t, target_t, hand_t):
    n = GRID * GRID
    ones = ad.Tensor(np.ones((n, 1)))
    return ad.concatenate([grid_t, ones @ target_t, ones @ hand_t], axis=1)


def project_t(fused_t, tp):
    h = ad.tanh(fused_t @ tp["proj_w1"] + tp["proj_b1"])
    return h @ tp["proj_w2"] + tp["proj_b2"]


def encode_observation_t(pixels, target_bitmap, hand_bitmap, tp):
    grid = encode_image_t(pixels, tp)
    tfeat = encode_mask_t(target_bitmap, tp)
    hfeat = encode_mask_t(hand_bitmap, tp)
    return project_t(fuse_t(grid, tfeat, hfeat), tp)
