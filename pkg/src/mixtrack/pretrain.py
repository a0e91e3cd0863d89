"""Masked pretraining: reconstruct hidden search patches, templates visible.

Three quarters of the search tokens are dropped before encoding; the
templates stay fully visible so the encoder learns to pull target
information across groups. A light decoder fills the dropped positions
with a shared mask token and regresses the missing patch pixels. Only
masked patches contribute to the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import PlainBackbone, sincos_table
from .nn import LayerNorm, Linear, Module, ModuleList, trunc_normal
from .attention import SlimMixBlock
from .tensor import DimensionError, Tensor, UsageError, concat, take_rows


@dataclass(frozen=True)
class MaskedPretrainConfig:
    mask_ratio: float = 0.75
    decoder_depth: int = 4
    decoder_width: int = 256
    decoder_heads: int = 4
    normalize_targets: bool = True

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise UsageError("mask ratio must lie strictly inside (0, 1)")


def mask_search_tokens(num_search: int, ratio: float, rng: np.random.Generator):
    """Uniform split of [0, n_s) into (visible, masked) index arrays.

    floor(ratio * n_s) tokens are masked; both arrays come back sorted so
    gather order is deterministic.
    """
    if not 0.0 < ratio < 1.0:
        raise UsageError("mask ratio must lie strictly inside (0, 1)")
    if num_search < 2:
        raise UsageError("need at least two search tokens to mask")
    n_mask = int(np.floor(ratio * num_search))
    perm = rng.permutation(num_search)
    masked = np.sort(perm[:n_mask])
    visible = np.sort(perm[n_mask:])
    return visible, masked


def patch_targets(image: np.ndarray, patch: int, normalize: bool = True,
                  eps: float = 1e-6) -> np.ndarray:
    """Per-patch pixel vectors (n, patch*patch*3) in row-major patch order.

    With normalization on, every patch is standardized by its own mean and
    variance.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError("patch_targets expects a (3, H, W) image")
    _, h, w = image.shape
    if h % patch or w % patch:
        raise DimensionError("image extents must divide into patches")
    gh, gw = h // patch, w // patch
    tiles = image.reshape(3, gh, patch, gw, patch).transpose(1, 3, 2, 4, 0)
    flat = tiles.reshape(gh * gw, patch * patch * 3)
    if normalize:
        mu = flat.mean(axis=1, keepdims=True)
        var = flat.var(axis=1, keepdims=True)
        flat = (flat - mu) / np.sqrt(var + eps)
    return flat


def unpatchify(flat: np.ndarray, grid: tuple[int, int], patch: int) -> np.ndarray:
    """Inverse of patch_targets (without normalization)."""
    gh, gw = grid
    tiles = flat.reshape(gh, gw, patch, patch, 3).transpose(4, 0, 2, 1, 3)
    return tiles.reshape(3, gh * patch, gw * patch)


class MaskedPretrainer(Module):
    """Plain-backbone encoder over [templates | visible search tokens] plus
    a full-attention decoder that reconstructs the masked search patches."""

    def __init__(self, encoder: PlainBackbone, cfg: MaskedPretrainConfig, rng):
        super().__init__()
        if encoder.cfg.variant != "plain":
            raise UsageError("masked pretraining requires the plain (token-dropping) backbone")
        self.encoder = encoder
        self.cfg = cfg
        spec = encoder.cfg.stages[0]
        self.patch_size = spec.patch_kernel
        width, dwidth = spec.width, cfg.decoder_width
        self.decoder_embed = Linear(width, dwidth, rng)
        self.mask_token = Tensor(trunc_normal((1, 1, dwidth), 0.02, rng), requires_grad=True)
        self.register_buffer(
            "dec_pos_template", Tensor(sincos_table(encoder.template_grid, dwidth))
        )
        self.register_buffer(
            "dec_pos_search", Tensor(sincos_table(encoder.search_grid, dwidth))
        )
        self.decoder_blocks = ModuleList(
            SlimMixBlock(dwidth, cfg.decoder_heads, rng) for _ in range(cfg.decoder_depth)
        )
        self.decoder_norm = LayerNorm(dwidth)
        self.pred = Linear(dwidth, self.patch_size * self.patch_size * 3, rng)

    def masks_for_batch(self, batch: int, rng: np.random.Generator):
        n_s = self.encoder.search_grid[0] * self.encoder.search_grid[1]
        vis, msk = [], []
        for _ in range(batch):
            v, m = mask_search_tokens(n_s, self.cfg.mask_ratio, rng)
            vis.append(v)
            msk.append(m)
        return np.stack(vis), np.stack(msk)

    def reconstruct(self, templates: Tensor, search: Tensor, visible: np.ndarray,
                    masked: np.ndarray) -> Tensor:
        """Predicted patch pixels for every search position, (B, n_s, p*p*3)."""
        b, t = templates.shape[0], templates.shape[1]
        enc = self.encoder
        tpl = enc.embed_templates(templates)
        srch_full = enc.embed_search(search)
        tpl, srch_full = enc.pos.add_to(tpl, srch_full, t)
        srch_vis = take_rows(srch_full, visible)
        # full mixed attention: reconstruction benefits from template-to-search flow
        tpl_out, vis_out = enc.forward_tokens(tpl, srch_vis, t, asymmetric=False)

        dtpl = self.decoder_embed(tpl_out)
        dvis = self.decoder_embed(vis_out)
        n_mask = masked.shape[1]
        mask_seq = self.mask_token + Tensor(np.zeros((b, n_mask, 1)))
        # rows currently ordered [visible | masked]; restore grid order
        order = np.argsort(np.concatenate([visible, masked], axis=1), axis=1)
        dsearch = take_rows(concat([dvis, mask_seq], axis=-2), order)

        dec_tpl_table = self.dec_pos_template
        if t > 1:
            dec_tpl_table = concat([dec_tpl_table] * t, axis=0)
        dtpl = dtpl + dec_tpl_table
        dsearch = dsearch + self.dec_pos_search
        for block in self.decoder_blocks:
            dtpl, dsearch = block.forward_parts(dtpl, dsearch, asymmetric=False)
        return self.pred(self.decoder_norm(dsearch))

    def loss(self, templates: Tensor, search: Tensor, search_images: np.ndarray,
             visible: np.ndarray, masked: np.ndarray) -> Tensor:
        """Mean squared error over masked search patches only."""
        pred = self.reconstruct(templates, search, visible, masked)
        targets = np.stack([
            patch_targets(img, self.patch_size, self.cfg.normalize_targets)
            for img in search_images
        ])
        tgt_masked = np.take_along_axis(targets, masked[:, :, None], axis=1)
        pred_masked = take_rows(pred, masked)
        diff = pred_masked - Tensor(tgt_masked)
        return (diff * diff).mean()


def masked_step(pretrainer: MaskedPretrainer, templates: Tensor, search: Tensor,
                search_images: np.ndarray, rng: np.random.Generator) -> Tensor:
    """One pretraining forward: draw masks, return the reconstruction loss."""
    visible, masked = pretrainer.masks_for_batch(search.shape[0], rng)
    return pretrainer.loss(templates, search, search_images, visible, masked)
