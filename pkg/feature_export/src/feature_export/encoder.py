"""Image-crop encoders producing 512-dimensional feature vectors.

The default backend, :func:`descriptor512`, is a deterministic
hand-designed visual descriptor: every crop is resized to a fixed
64 x 64 RGB raster and summarised by intensity-layout, colour-histogram,
edge-orientation and radial-profile blocks that concatenate to exactly
512 numbers. It needs no downloaded weights, is bit-reproducible, and
places perceptually similar crops (same object class) closer in cosine
similarity than dissimilar ones — which is the property downstream
consumers rely on.

Any callable mapping a PIL image to a length-512 float vector can be
used instead (e.g. a pretrained image-text encoder); register it in
:data:`ENCODERS` or pass it directly to ``export``.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

FEATURE_DIM = 512
_RASTER = 64  # crops are resampled to this square size before encoding


def _block_means(channel: np.ndarray, blocks: int) -> np.ndarray:
    """Mean of each cell of a blocks x blocks partition, flattened."""
    side = channel.shape[0] // blocks
    return channel.reshape(blocks, side, blocks, side).mean(axis=(1, 3)).ravel()


def _normed(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v / n if n > 0 else v


def descriptor512(image: Image.Image) -> np.ndarray:
    """Encode one crop as a deterministic 512-dim descriptor.

    Blocks (each L2-normalised before the final whole-vector
    normalisation, so no single statistic dominates):

    - 8 x 8 grey-level cell means                  (64)
    - edge-orientation histograms, 8 orientation bins
      over a 4 x 4 spatial grid, magnitude-weighted (128)
    - 32-bin histograms of R, G, B                 (96)
    - 32-bin histograms of H, S, V                 (96)
    - 64-annulus radial grey profile               (64)
    - 8 x 8 gradient-magnitude cell means          (64)
    """
    rgb = image.convert("RGB").resize((_RASTER, _RASTER), Image.LANCZOS)
    arr = np.asarray(rgb, dtype=np.float64) / 255.0
    grey = arr @ np.array([0.299, 0.587, 0.114])

    gy, gx = np.gradient(grey)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)  # [-pi, pi]

    blocks = [_normed(_block_means(grey, 8))]

    cell = _RASTER // 4
    ori = []
    for by in range(4):
        for bx in range(4):
            sl = (slice(by * cell, (by + 1) * cell),
                  slice(bx * cell, (bx + 1) * cell))
            hist, _ = np.histogram(ang[sl], bins=8, range=(-np.pi, np.pi),
                                   weights=mag[sl])
            ori.append(hist)
    blocks.append(_normed(np.concatenate(ori)))

    rgb_hist = [np.histogram(arr[..., c], bins=32, range=(0.0, 1.0))[0]
                for c in range(3)]
    blocks.append(_normed(np.concatenate(rgb_hist).astype(np.float64)))

    hsv = np.asarray(rgb.convert("HSV"), dtype=np.float64) / 255.0
    hsv_hist = [np.histogram(hsv[..., c], bins=32, range=(0.0, 1.0))[0]
                for c in range(3)]
    blocks.append(_normed(np.concatenate(hsv_hist).astype(np.float64)))

    yy, xx = np.indices(grey.shape)
    centre = (_RASTER - 1) / 2.0
    r = np.hypot(yy - centre, xx - centre).ravel()
    edges = np.linspace(0.0, float(r.max()) + 1e-9, 65)
    which = np.digitize(r, edges) - 1
    flat = grey.ravel()
    sums = np.bincount(which, weights=flat, minlength=64)[:64]
    counts = np.bincount(which, minlength=64)[:64]
    profile = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    blocks.append(_normed(profile))

    blocks.append(_normed(_block_means(mag, 8)))

    vec = _normed(np.concatenate(blocks))
    assert vec.shape == (FEATURE_DIM,)
    return vec


ENCODERS = {
    "descriptor512": descriptor512,
}


def get_encoder(name: str):
    try:
        return ENCODERS[name]
    except KeyError:
        raise KeyError(
            f"unknown encoder {name!r}; available: {sorted(ENCODERS)}"
        ) from None
