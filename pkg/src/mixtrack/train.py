"""Training loops: localization, score prediction, and masked pretraining."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .backbone import PlainBackbone
from .data import SampleConfig, SyntheticSequenceConfig, make_corpus, sample_localization_batch, sample_score_batch
from .losses import LossWeights, combined_loc_loss
from .model import ModelConfig, TrackModel, build_model, images_to_tensor
from .optim import Adam, AdamW, StepDecay
from .pretrain import MaskedPretrainConfig, MaskedPretrainer, masked_step
from .rng import stream
from .score import ScorePredictor, roi_pool, score_loss
from .tensor import NumericError, Tensor, no_grad
import numpy as _np


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    corpus_sequences: int = 48
    decay_at: float = 0.8
    decay_factor: float = 0.1
    log_every: int = 25


def _sample_cfg(model_cfg: ModelConfig, num_templates: int) -> SampleConfig:
    b = model_cfg.backbone
    return SampleConfig(
        num_templates=num_templates,
        template_size=b.template_size,
        search_size=b.search_size,
    )


def _make_optimizer(model_cfg: ModelConfig, params, cfg: TrainConfig):
    # decoupled weight decay for the plain variant, coupled for hierarchical
    if model_cfg.backbone.variant == "plain":
        return AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    return Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)


def _loss_weights(model_cfg: ModelConfig) -> LossWeights:
    kind = "ciou" if model_cfg.backbone.variant == "plain" else "giou"
    return LossWeights(iou_kind=kind)


def write_loss_csv(path, rows) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr"])
        for step, loss, lr in rows:
            writer.writerow([step, f"{loss:.8f}", f"{lr:.2e}"])


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)      # (step, loss, lr)
    probes: list = field(default_factory=list)      # (step, value)
    steps_to_target: int | None = None


def train_tracker(model_cfg: ModelConfig, train_cfg: TrainConfig,
                  data_cfg: SyntheticSequenceConfig | None = None,
                  num_templates: int = 2,
                  init_states: dict | None = None,
                  probe=None, probe_every: int = 0, probe_target: float | None = None,
                  stop_at_target: bool = False) -> tuple[TrackModel, TrainHistory]:
    """Minimize the combined localization loss on synthetic crops.

    ``init_states`` optionally seeds the backbone (pretrained encoder).
    ``probe(model, step) -> float`` is evaluated every ``probe_every``
    steps; when it reaches ``probe_target`` the step count is recorded
    (and training stops early if ``stop_at_target``).
    """
    data_cfg = data_cfg or SyntheticSequenceConfig(seed=train_cfg.seed)
    corpus = make_corpus(data_cfg, train_cfg.corpus_sequences)
    model = build_model(model_cfg, train_cfg.seed)
    if init_states is not None:
        own = dict(model.backbone.named_states())
        model.backbone.load_states({k: init_states[k] for k in own})
    model.train()

    params = list(model.parameters())
    opt = _make_optimizer(model_cfg, params, train_cfg)
    sched = StepDecay(opt, train_cfg.steps, train_cfg.decay_at, train_cfg.decay_factor)
    weights = _loss_weights(model_cfg)
    scfg = _sample_cfg(model_cfg, num_templates)
    rng = stream(train_cfg.seed, "train-sampler")
    history = TrainHistory()

    for step in range(1, train_cfg.steps + 1):
        tpl, srch, labels = sample_localization_batch(corpus, train_cfg.batch, scfg, rng)
        out = model(images_to_tensor(tpl), images_to_tensor(srch))
        loss = combined_loc_loss(out.boxes, Tensor(labels), weights)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss at step {step}; aborting")
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.after_step(step)
        if step % train_cfg.log_every == 0 or step == 1:
            history.losses.append((step, value, opt.lr))
        if probe is not None and probe_every and step % probe_every == 0:
            model.eval()
            with no_grad():
                probe_value = probe(model, step)
            model.train()
            history.probes.append((step, probe_value))
            if probe_target is not None and probe_value >= probe_target and history.steps_to_target is None:
                history.steps_to_target = step
                if stop_at_target:
                    break
    model.eval()
    return model, history


def train_spm(model: TrackModel, train_cfg: TrainConfig,
              data_cfg: SyntheticSequenceConfig | None = None,
              num_templates: int = 2, roi_grid: int = 8) -> tuple[ScorePredictor, TrainHistory]:
    """Fit the score module on candidate crops with the backbone frozen."""
    data_cfg = data_cfg or SyntheticSequenceConfig(seed=train_cfg.seed)
    corpus = make_corpus(data_cfg, train_cfg.corpus_sequences, first_index=10_000)
    model.eval()
    model.freeze()
    width = model.cfg.backbone.final_width()
    spm = ScorePredictor(width, stream(train_cfg.seed, "spm-init"), roi_grid=roi_grid)
    opt = AdamW(spm.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    sched = StepDecay(opt, train_cfg.steps, train_cfg.decay_at, train_cfg.decay_factor)
    scfg = _sample_cfg(model.cfg, num_templates)
    rng = stream(train_cfg.seed, "spm-sampler")
    history = TrainHistory()

    for step in range(1, train_cfg.steps + 1):
        tpl, srch, cand, labels = sample_score_batch(corpus, train_cfg.batch, scfg, rng)
        with no_grad():
            out = model(images_to_tensor(tpl), images_to_tensor(srch))
            feats = out.search_feat
            n_t = out.batch.tokens_per_template
            tpl_tokens = out.batch.split()[0]
        rois = []
        for i, box in enumerate(cand):
            feat_i = Tensor(feats.data[i])
            rois.append(roi_pool(feat_i, box, roi_grid))
        roi_batch = _stack_tensors(rois)
        static_tokens = Tensor(tpl_tokens.data[:, :n_t, :])
        scores = spm(roi_batch, static_tokens)
        loss = score_loss(scores, labels)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite score loss at step {step}; aborting")
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.after_step(step)
        if step % train_cfg.log_every == 0 or step == 1:
            history.losses.append((step, value, opt.lr))
    spm.eval()
    return spm, history


def _stack_tensors(tensors) -> Tensor:
    from .tensor import concat

    return concat([t.reshape((1,) + t.shape) for t in tensors], axis=0)


def spm_accuracy(model: TrackModel, spm: ScorePredictor, train_cfg: TrainConfig,
                 data_cfg: SyntheticSequenceConfig, samples: int = 128,
                 num_templates: int = 2, threshold: float = 0.5) -> float:
    """Held-out balanced accuracy of the score module."""
    corpus = make_corpus(data_cfg, 12, first_index=50_000)
    rng = stream(train_cfg.seed, "spm-holdout")
    scfg = _sample_cfg(model.cfg, num_templates)
    correct = total = 0
    batch = 16
    with no_grad():
        while total < samples:
            tpl, srch, cand, labels = sample_score_batch(corpus, batch, scfg, rng)
            out = model(images_to_tensor(tpl), images_to_tensor(srch))
            n_t = out.batch.tokens_per_template
            tpl_tokens = out.batch.split()[0]
            rois = [roi_pool(Tensor(out.search_feat.data[i]), box, spm.roi_grid)
                    for i, box in enumerate(cand)]
            scores = spm(_stack_tensors(rois), Tensor(tpl_tokens.data[:, :n_t, :]))
            pred = scores.data >= threshold
            correct += int((pred == (labels > 0.5)).sum())
            total += batch
    return correct / total


def pretrain_masked(model_cfg: ModelConfig, pre_cfg: MaskedPretrainConfig,
                    train_cfg: TrainConfig,
                    data_cfg: SyntheticSequenceConfig | None = None,
                    num_templates: int = 1) -> tuple[MaskedPretrainer, TrainHistory]:
    """Masked-reconstruction pretraining of the plain encoder on synthetic
    crops with the fine-tuning crop geometry."""
    data_cfg = data_cfg or SyntheticSequenceConfig(seed=train_cfg.seed)
    corpus = make_corpus(data_cfg, train_cfg.corpus_sequences, first_index=20_000)
    init_rng = stream(train_cfg.seed, "pretrain-init")
    encoder = PlainBackbone(model_cfg.backbone, init_rng)
    pre = MaskedPretrainer(encoder, pre_cfg, init_rng)
    pre.train()
    opt = AdamW(pre.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    sched = StepDecay(opt, train_cfg.steps, train_cfg.decay_at, train_cfg.decay_factor)
    scfg = _sample_cfg(model_cfg, num_templates)
    rng = stream(train_cfg.seed, "pretrain-sampler")
    mask_rng = stream(train_cfg.seed, "pretrain-masks")
    history = TrainHistory()

    for step in range(1, train_cfg.steps + 1):
        tpl, srch, _ = sample_localization_batch(corpus, train_cfg.batch, scfg, rng)
        loss = masked_step(pre, images_to_tensor(tpl), images_to_tensor(srch), srch, mask_rng)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite reconstruction loss at step {step}; aborting")
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.after_step(step)
        if step % train_cfg.log_every == 0 or step == 1:
            history.losses.append((step, value, opt.lr))
    pre.eval()
    return pre, history
