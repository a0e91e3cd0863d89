"""Plain-text configuration: dotted `key = value` files plus CLI overrides.

A config is a flat dict of dotted keys with typed defaults. Files use one
`key = value` per line ('#' comments allowed); any key can be overridden
on the command line as `--key value`. Model configs serialize with full
fidelity so checkpoints can be rebuilt without the original preset.
"""

from __future__ import annotations

from dataclasses import replace

from .backbone import BackboneConfig, StageSpec
from .model import BACKBONE_PRESETS, ModelConfig
from .tensor import UsageError


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_kv_file(path: str) -> dict[str, str]:
    with open(path) as fh:
        return parse_kv_text(fh.read())


def parse_override_args(args: list[str]) -> dict[str, str]:
    """Turn leftover CLI tokens ['--a.b', '1', ...] into a key/value dict."""
    out: dict[str, str] = {}
    i = 0
    while i < len(args):
        tok = args[i]
        if not tok.startswith("--"):
            raise UsageError(f"expected --key, got {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(args):
                raise UsageError(f"missing value for --{key}")
            value = args[i + 1]
            i += 1
        out[key] = value
        i += 1
    return out


def _coerce(value: str, like) -> object:
    if isinstance(like, bool):
        low = str(value).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return str(value)


def resolve_config(defaults: dict, path: str | None = None,
                   overrides: dict[str, str] | None = None) -> dict:
    """defaults <- file <- CLI, with types taken from the defaults."""
    cfg = dict(defaults)
    for source in (parse_kv_file(path) if path else {}, overrides or {}):
        for key, value in source.items():
            if key not in cfg:
                raise UsageError(f"unknown config key {key!r}")
            cfg[key] = _coerce(value, cfg[key]) if not isinstance(cfg[key], str) else str(value)
    return cfg


# -- sections ------------------------------------------------------------------


MODEL_DEFAULTS = {
    "model.preset": "plain-tiny",
    "model.head": "pyramid",
    "model.head_norm": "group",
    "model.asymmetric": True,
    "model.pos_embed": "sincos-frozen",
    "model.template_size": 0,   # 0 keeps the preset value
    "model.search_size": 0,
    "model.layers": 0,          # plain-variant overrides
    "model.width": 0,
    "model.heads": 0,
    "model.patch": 0,
}

TRAIN_DEFAULTS = {
    "train.steps": 2000,
    "train.batch": 8,
    "train.lr": 1e-3,
    "train.weight_decay": 1e-4,
    "train.seed": 0,
    "train.corpus_sequences": 48,
    "train.decay_at": 0.8,
    "train.decay_factor": 0.1,
    "train.templates": 2,
}

DATA_DEFAULTS = {
    "data.frame_size": 128,
    "data.length": 40,
    "data.base_side": 26.0,
    "data.scale_amplitude": 0.15,
    "data.scale_period": 24.0,
    "data.clutter_count": 6,
    "data.noise": 0.02,
    "data.occluder_prob": 0.0,
}

TRACK_DEFAULTS = {
    "track.update_interval": 200,
    "track.score_threshold": 0.5,
    "track.online_templates": 1,
    "track.template_factor": 2.0,
    "track.search_factor": 5.0,
    "track.gate_updates": True,
}

PRETRAIN_DEFAULTS = {
    "pretrain.mask_ratio": 0.75,
    "pretrain.decoder_depth": 4,
    "pretrain.decoder_width": 256,
    "pretrain.decoder_heads": 4,
    "pretrain.normalize_targets": True,
}

EVAL_DEFAULTS = {
    "eval.sequences": 20,
    "eval.length": 40,
    "eval.seed": 777,
    "eval.precision_threshold": 0.2,
}

SPM_DEFAULTS = {
    "spm.roi_grid": 8,
}


def build_model_config(cfg: dict) -> ModelConfig:
    preset = cfg["model.preset"]
    if preset not in BACKBONE_PRESETS:
        raise UsageError(f"unknown model preset {preset!r} (have {sorted(BACKBONE_PRESETS)})")
    backbone = BACKBONE_PRESETS[preset]()
    updates = {}
    if cfg["model.template_size"]:
        updates["template_size"] = cfg["model.template_size"]
    if cfg["model.search_size"]:
        updates["search_size"] = cfg["model.search_size"]
    updates["asymmetric"] = cfg["model.asymmetric"]
    if backbone.variant == "plain":
        updates["pos_embed"] = cfg["model.pos_embed"]
        spec = backbone.stages[0]
        spec = StageSpec(
            blocks=cfg["model.layers"] or spec.blocks,
            width=cfg["model.width"] or spec.width,
            heads=cfg["model.heads"] or spec.heads,
            patch_kernel=cfg["model.patch"] or spec.patch_kernel,
            patch_stride=cfg["model.patch"] or spec.patch_stride,
            patch_padding=0,
            mlp_ratio=spec.mlp_ratio,
        )
        updates["stages"] = (spec,)
    backbone = replace(backbone, **updates)
    return ModelConfig(backbone=backbone, head=cfg["model.head"], head_norm=cfg["model.head_norm"])


# -- full-fidelity model config round-trip (checkpoints) -------------------------


def _int_list(text: str) -> list[int]:
    return [int(p) for p in str(text).split(",") if p != ""]


def model_config_to_kv(cfg: ModelConfig) -> dict[str, str]:
    b = cfg.backbone
    return {
        "arch.variant": b.variant,
        "arch.blocks": ",".join(str(s.blocks) for s in b.stages),
        "arch.widths": ",".join(str(s.width) for s in b.stages),
        "arch.heads": ",".join(str(s.heads) for s in b.stages),
        "arch.mlp_ratios": ",".join(str(s.mlp_ratio) for s in b.stages),
        "arch.kernels": ",".join(str(s.patch_kernel) for s in b.stages),
        "arch.strides": ",".join(str(s.patch_stride) for s in b.stages),
        "arch.paddings": ",".join(str(s.patch_padding) for s in b.stages),
        "arch.template_size": str(b.template_size),
        "arch.search_size": str(b.search_size),
        "arch.asymmetric": str(b.asymmetric).lower(),
        "arch.pos_embed": b.pos_embed,
        "arch.use_reg_token": str(b.use_reg_token).lower(),
        "arch.head": cfg.head,
        "arch.head_norm": cfg.head_norm,
    }


def model_config_from_kv(kv: dict[str, str]) -> ModelConfig:
    blocks = _int_list(kv["arch.blocks"])
    widths = _int_list(kv["arch.widths"])
    heads = _int_list(kv["arch.heads"])
    ratios = _int_list(kv["arch.mlp_ratios"])
    kernels = _int_list(kv["arch.kernels"])
    strides = _int_list(kv["arch.strides"])
    paddings = _int_list(kv["arch.paddings"])
    stages = tuple(
        StageSpec(blocks=b, width=w, heads=h, patch_kernel=k, patch_stride=s,
                  patch_padding=p, mlp_ratio=r)
        for b, w, h, r, k, s, p in zip(blocks, widths, heads, ratios, kernels, strides, paddings)
    )
    backbone = BackboneConfig(
        variant=kv["arch.variant"],
        stages=stages,
        template_size=int(kv["arch.template_size"]),
        search_size=int(kv["arch.search_size"]),
        asymmetric=kv["arch.asymmetric"] == "true",
        pos_embed=kv["arch.pos_embed"],
        use_reg_token=kv["arch.use_reg_token"] == "true",
    )
    return ModelConfig(backbone=backbone, head=kv["arch.head"], head_norm=kv["arch.head_norm"])


def write_kv_file(path: str, kv: dict[str, str]) -> None:
    with open(path, "w") as fh:
        for key in kv:
            fh.write(f"{key} = {kv[key]}\n")
