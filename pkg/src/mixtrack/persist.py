"""Saving and loading models, encoders, and score modules."""

from __future__ import annotations

import os

from .checkpoint import load_checkpoint, save_checkpoint
from .config import model_config_from_kv, model_config_to_kv, parse_kv_file, write_kv_file
from .model import TrackModel, build_model
from .rng import stream
from .score import ScorePredictor

ARCH_FILE = "config.txt"


def save_model(directory: str, model: TrackModel) -> None:
    os.makedirs(directory, exist_ok=True)
    save_checkpoint(directory, model.named_states())
    write_kv_file(os.path.join(directory, ARCH_FILE), model_config_to_kv(model.cfg))


def load_model(directory: str) -> TrackModel:
    cfg = model_config_from_kv(parse_kv_file(os.path.join(directory, ARCH_FILE)))
    model = build_model(cfg, seed=0)
    model.load_states(load_checkpoint(directory))
    model.eval()
    return model


def save_encoder(directory: str, encoder) -> None:
    os.makedirs(directory, exist_ok=True)
    save_checkpoint(directory, encoder.named_states())


def load_encoder_states(directory: str) -> dict:
    return load_checkpoint(directory)


def save_spm(directory: str, spm: ScorePredictor) -> None:
    os.makedirs(directory, exist_ok=True)
    save_checkpoint(directory, spm.named_states())
    write_kv_file(os.path.join(directory, ARCH_FILE), {
        "spm.width": str(spm.width),
        "spm.heads": str(spm.roi_block.heads),
        "spm.roi_grid": str(spm.roi_grid),
    })


def load_spm(directory: str) -> ScorePredictor:
    kv = parse_kv_file(os.path.join(directory, ARCH_FILE))
    spm = ScorePredictor(int(kv["spm.width"]), stream(0, "spm-load"),
                         heads=int(kv["spm.heads"]), roi_grid=int(kv["spm.roi_grid"]))
    spm.load_states(load_checkpoint(directory))
    spm.eval()
    return spm
