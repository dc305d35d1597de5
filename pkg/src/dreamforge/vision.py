"""Frozen patch encoder and the trainable visual projector.

The encoder stands in for a pretrained image tower: it cuts the 16x16x3
image into 16 non-overlapping 4x4 patches and multiplies each flattened
patch (48 values) by a fixed random orthogonal matrix. Orthogonality makes
the map information-preserving; the matrix is seeded once, never trained,
and serialized with checkpoints.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .world import IMG_SIZE

PATCH = 4
N_PATCHES = (IMG_SIZE // PATCH) ** 2   # 16
PATCH_DIM = PATCH * PATCH * 3          # 48


def orthogonal_matrix(seed, n, dtype=np.float64):
    """Deterministic random orthogonal n x n matrix (QR with sign fix)."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q.astype(dtype)


class PatchEncoder:
    """Frozen map: image (16,16,3) -> raw patch matrix (16, d_enc)."""

    def __init__(self, seed=77, d_enc=PATCH_DIM, dtype=np.float64):
        if d_enc < PATCH_DIM:
            raise ValueError(f"d_enc must be >= {PATCH_DIM} to preserve information")
        self.seed = seed
        self.d_enc = d_enc
        full = orthogonal_matrix(seed, max(d_enc, PATCH_DIM), dtype)
        self.matrix = np.ascontiguousarray(full[:PATCH_DIM, :d_enc])

    @staticmethod
    def patchify(images):
        """(..., 16, 16, 3) -> (..., 16, 48), patches in row-major order."""
        images = np.asarray(images)
        lead = images.shape[:-3]
        if images.shape[-3:] != (IMG_SIZE, IMG_SIZE, 3):
            raise ValueError(f"expected trailing dims (16, 16, 3), got {images.shape}")
        g = IMG_SIZE // PATCH
        x = images.reshape(lead + (g, PATCH, g, PATCH, 3))
        x = np.moveaxis(x, -3, -4)  # (..., g, g, PATCH, PATCH, 3)
        return x.reshape(lead + (N_PATCHES, PATCH_DIM))

    def encode(self, images):
        """Deterministic raw patch embeddings; accepts one image or a stack."""
        patches = self.patchify(np.asarray(images, dtype=self.matrix.dtype))
        return patches @ self.matrix

    def pooled_features(self, images):
        """Mean over patches of the raw embeddings; used by the Frechet metric."""
        return self.encode(images).mean(axis=-2)


class VisualProjector:
    """Trainable linear map from encoder space to the LM embedding space."""

    def __init__(self, d_enc, d_lm, seed=0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.weight = ad.Tensor(
            (rng.standard_normal((d_enc, d_lm)) * 0.02).astype(dtype), requires_grad=True)
        self.bias = ad.Tensor(np.zeros(d_lm, dtype=dtype), requires_grad=True)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, raw):
        """raw: Tensor or array (..., d_enc) -> Tensor (..., d_lm)."""
        return ad.as_tensor(raw) @ self.weight + self.bias
