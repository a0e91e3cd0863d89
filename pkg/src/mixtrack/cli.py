"""Command-line interface.

Subcommands: pretrain, train, train-spm, track, eval, bench-attn,
export-attn. Every subcommand reads an optional `key = value` config file
(--config) and accepts `--key value` overrides for any known key.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from .attention import AttentionInputs, attention_score_entries, attention_score_flops, mixed_attention
from .backbone import export_attention_maps, hierarchical_base, plain_base
from .box import Box
from .data import SyntheticSequenceConfig, make_corpus
from .metrics import evaluate_tracker, write_report_csv
from .model import images_to_tensor
from .netpbm import read_ppm, write_pgm
from .persist import load_model, load_spm, save_encoder, save_model, save_spm
from .pretrain import MaskedPretrainConfig
from .rng import stream
from .tensor import Tensor, UsageError, no_grad
from .tracker import TrackerConfig, crop_region, format_result_line, track_sequence
from .train import TrainConfig, pretrain_masked, train_spm, train_tracker, write_loss_csv


def _resolve(defaults: dict, args, extra: list[str]) -> dict:
    return cfgmod.resolve_config(defaults, args.config, cfgmod.parse_override_args(extra))


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        steps=cfg["train.steps"], batch=cfg["train.batch"], lr=cfg["train.lr"],
        weight_decay=cfg["train.weight_decay"], seed=cfg["train.seed"],
        corpus_sequences=cfg["train.corpus_sequences"], decay_at=cfg["train.decay_at"],
        decay_factor=cfg["train.decay_factor"],
    )


def _data_config(cfg: dict, seed: int) -> SyntheticSequenceConfig:
    return SyntheticSequenceConfig(
        frame_size=cfg["data.frame_size"], length=cfg["data.length"],
        base_side=cfg["data.base_side"], scale_amplitude=cfg["data.scale_amplitude"],
        scale_period=cfg["data.scale_period"], clutter_count=cfg["data.clutter_count"],
        noise=cfg["data.noise"], occluder_prob=cfg["data.occluder_prob"], seed=seed,
    )


def _tracker_config(cfg: dict, model_cfg) -> TrackerConfig:
    return TrackerConfig(
        model=model_cfg,
        template_factor=cfg["track.template_factor"],
        search_factor=cfg["track.search_factor"],
        update_interval=cfg["track.update_interval"],
        score_threshold=cfg["track.score_threshold"],
        online_templates=cfg["track.online_templates"],
        gate_updates=cfg["track.gate_updates"],
    )


def cmd_train(args, extra) -> int:
    defaults = {**cfgmod.MODEL_DEFAULTS, **cfgmod.TRAIN_DEFAULTS, **cfgmod.DATA_DEFAULTS}
    cfg = _resolve(defaults, args, extra)
    model_cfg = cfgmod.build_model_config(cfg)
    train_cfg = _train_config(cfg)
    data_cfg = _data_config(cfg, train_cfg.seed)
    init_states = None
    if args.init:
        from .persist import load_encoder_states

        init_states = load_encoder_states(args.init)
        print(f"initialized backbone from {args.init}")
    model, history = train_tracker(model_cfg, train_cfg, data_cfg,
                                   num_templates=cfg["train.templates"],
                                   init_states=init_states)
    os.makedirs(args.out, exist_ok=True)
    save_model(os.path.join(args.out, "model"), model)
    write_loss_csv(os.path.join(args.out, "train_loss.csv"), history.losses)
    print(f"saved model to {os.path.join(args.out, 'model')}; "
          f"final loss {history.losses[-1][1]:.4f}")
    return 0


def cmd_pretrain(args, extra) -> int:
    defaults = {**cfgmod.MODEL_DEFAULTS, **cfgmod.TRAIN_DEFAULTS, **cfgmod.DATA_DEFAULTS,
                **cfgmod.PRETRAIN_DEFAULTS}
    cfg = _resolve(defaults, args, extra)
    model_cfg = cfgmod.build_model_config(cfg)
    if model_cfg.backbone.variant != "plain":
        raise UsageError("masked pretraining needs a plain-variant model")
    pre_cfg = MaskedPretrainConfig(
        mask_ratio=cfg["pretrain.mask_ratio"], decoder_depth=cfg["pretrain.decoder_depth"],
        decoder_width=cfg["pretrain.decoder_width"], decoder_heads=cfg["pretrain.decoder_heads"],
        normalize_targets=cfg["pretrain.normalize_targets"],
    )
    train_cfg = _train_config(cfg)
    data_cfg = _data_config(cfg, train_cfg.seed)
    pre, history = pretrain_masked(model_cfg, pre_cfg, train_cfg, data_cfg)
    os.makedirs(args.out, exist_ok=True)
    save_encoder(os.path.join(args.out, "encoder"), pre.encoder)
    decoder_states = [
        (name, t) for name, t in pre.named_states() if not name.startswith("encoder.")
    ]
    from .checkpoint import save_checkpoint

    save_checkpoint(os.path.join(args.out, "decoder"), decoder_states)
    write_loss_csv(os.path.join(args.out, "pretrain_loss.csv"), history.losses)
    print(f"saved encoder to {os.path.join(args.out, 'encoder')}; "
          f"final loss {history.losses[-1][1]:.4f}")
    return 0


def cmd_train_spm(args, extra) -> int:
    defaults = {**cfgmod.TRAIN_DEFAULTS, **cfgmod.DATA_DEFAULTS, **cfgmod.SPM_DEFAULTS}
    cfg = _resolve(defaults, args, extra)
    model = load_model(args.model)
    train_cfg = _train_config(cfg)
    data_cfg = _data_config(cfg, train_cfg.seed)
    spm, history = train_spm(model, train_cfg, data_cfg, roi_grid=cfg["spm.roi_grid"])
    os.makedirs(args.out, exist_ok=True)
    save_spm(os.path.join(args.out, "spm"), spm)
    write_loss_csv(os.path.join(args.out, "spm_loss.csv"), history.losses)
    print(f"saved score module to {os.path.join(args.out, 'spm')}")
    return 0


def cmd_track(args, extra) -> int:
    defaults = {**cfgmod.TRACK_DEFAULTS}
    cfg = _resolve(defaults, args, extra)
    model = load_model(args.model)
    spm = load_spm(args.spm) if args.spm else None
    tracker_cfg = _tracker_config(cfg, model.cfg)

    names = sorted(n for n in os.listdir(args.frames) if n.endswith(".ppm"))
    if not names:
        raise UsageError(f"no .ppm frames found in {args.frames}")
    frames = [read_ppm(os.path.join(args.frames, n)) for n in names]
    fh, fw = frames[0].shape[1:]
    px = [float(v) for v in args.init.replace(",", " ").split()]
    if len(px) != 4:
        raise UsageError("--init expects 'x0,y0,x1,y1' in pixels")
    init_box = Box(px[0] / fw, px[1] / fh, px[2] / fw, px[3] / fh)

    results = track_sequence(model, tracker_cfg, frames, init_box, spm=spm)
    lines = [format_result_line(i, box, fw, fh, score)
             for i, (box, score) in enumerate(results)]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as out_fh:
            out_fh.write(text)
    sys.stdout.write(text)
    return 0


def cmd_eval(args, extra) -> int:
    defaults = {**cfgmod.TRACK_DEFAULTS, **cfgmod.DATA_DEFAULTS, **cfgmod.EVAL_DEFAULTS}
    cfg = _resolve(defaults, args, extra)
    model = load_model(args.model)
    spm = load_spm(args.spm) if args.spm else None
    tracker_cfg = _tracker_config(cfg, model.cfg)
    data_cfg = replace(_data_config(cfg, cfg["eval.seed"]), length=cfg["eval.length"])
    sequences = make_corpus(data_cfg, cfg["eval.sequences"])
    report = evaluate_tracker(model, tracker_cfg, sequences, spm=spm,
                              precision_threshold=cfg["eval.precision_threshold"])
    if args.out:
        write_report_csv(args.out, report)
    summary = report.summary()
    print(f"sequences={summary['sequences']} frames={summary['frames']} "
          f"mean_iou={summary['mean_iou']:.4f} success_auc={summary['success_auc']:.4f} "
          f"precision@{cfg['eval.precision_threshold']}={report.precision:.4f}")
    return 0


_BENCH_SHAPES = None


def reference_attention_shapes() -> list[dict]:
    """Template/search token shapes of the reference configs, per stage."""
    rows = []
    hier = hierarchical_base()
    tg, sg = hier.template_grids(), hier.search_grids()
    for i, spec in enumerate(hier.stages):
        rows.append({
            "name": f"hierarchical-stage{i + 1}",
            "templates": 2,
            "tokens_per_template": tg[i][0] * tg[i][1],
            "search_tokens": sg[i][0] * sg[i][1],
            "head_dim": spec.width // spec.heads,
            "heads": spec.heads,
        })
    plain = plain_base()
    spec = plain.stages[0]
    tgp, sgp = plain.template_grids()[0], plain.search_grids()[0]
    rows.append({
        "name": "plain-12x768",
        "templates": 2,
        "tokens_per_template": tgp[0] * tgp[1],
        "search_tokens": sgp[0] * sgp[1],
        "head_dim": spec.width // spec.heads,
        "heads": spec.heads,
    })
    return rows


def attention_cost_table() -> list[dict]:
    rows = []
    for shape in reference_attention_shapes():
        t, n_t, n_s = shape["templates"], shape["tokens_per_template"], shape["search_tokens"]
        d = shape["head_dim"]
        full_e = attention_score_entries(t, n_t, n_s, asymmetric=False)
        asym_e = attention_score_entries(t, n_t, n_s, asymmetric=True)
        rows.append({
            **shape,
            "full_entries": full_e,
            "asym_entries": asym_e,
            "entry_ratio": asym_e / full_e,
            "full_macs": attention_score_flops(t, n_t, n_s, d, asymmetric=False),
            "asym_macs": attention_score_flops(t, n_t, n_s, d, asymmetric=True),
        })
    return rows


def time_attention_kernels(shape: dict, repeats: int = 9) -> tuple[float, float]:
    """Median wall-clock of the full vs asymmetric kernel at one shape."""
    rng = stream(0, "bench-attn")
    t, n_t, n_s = shape["templates"], shape["tokens_per_template"], shape["search_tokens"]
    d, heads = shape["head_dim"], shape["heads"]

    def rand(n):
        return Tensor(rng.normal(size=(1, heads, n, d)))

    inp = AttentionInputs(rand(t * n_t), rand(t * n_t), rand(t * n_t),
                          rand(n_s), rand(n_s), rand(n_s))
    timings = {True: [], False: []}
    with no_grad():
        for asym in (False, True):
            mixed_attention(inp, asymmetric=asym)  # warm-up
        for _ in range(repeats):
            for asym in (False, True):
                t0 = time.perf_counter()
                mixed_attention(inp, asymmetric=asym)
                timings[asym].append(time.perf_counter() - t0)
    return float(np.median(timings[False])), float(np.median(timings[True]))


def cmd_bench_attn(args, extra) -> int:
    if extra:
        raise UsageError(f"unexpected arguments: {extra}")
    rows = attention_cost_table()
    header = ["name", "templates", "tokens_per_template", "search_tokens", "heads",
              "head_dim", "full_entries", "asym_entries", "entry_ratio", "full_macs", "asym_macs"]
    print("\t".join(header))
    for row in rows:
        print("\t".join(str(row[k]) if k != "entry_ratio" else f"{row[k]:.4f}" for k in header))
    stage3 = rows[2]
    full_s, asym_s = time_attention_kernels(stage3, repeats=args.trials)
    print(f"wall-clock at {stage3['name']}: full={full_s * 1e3:.2f}ms "
          f"asym={asym_s * 1e3:.2f}ms speedup={full_s / asym_s:.2f}x")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([row[k] for k in header])
            writer.writerow(["wallclock_full_s", f"{full_s:.6f}"])
            writer.writerow(["wallclock_asym_s", f"{asym_s:.6f}"])
    return 0


def cmd_export_attn(args, extra) -> int:
    defaults = {**cfgmod.DATA_DEFAULTS, **cfgmod.TRACK_DEFAULTS}
    cfg = _resolve(defaults, args, extra)
    model = load_model(args.model)
    bcfg = model.cfg.backbone
    data_cfg = _data_config(cfg, args.seed)
    seq = make_corpus(data_cfg, 1)[0]
    mid, last = len(seq.frames) // 2, len(seq.frames) - 1
    static = crop_region(seq.frames[0], seq.boxes[0], cfg["track.template_factor"],
                         bcfg.template_size)[0]
    online = crop_region(seq.frames[mid], seq.boxes[mid], cfg["track.template_factor"],
                         bcfg.template_size)[0]
    search = crop_region(seq.frames[last], seq.boxes[last], cfg["track.search_factor"],
                         bcfg.search_size)[0]
    templates = images_to_tensor(np.stack([static, online])[None])
    with no_grad():
        maps = export_attention_maps(model.backbone, templates,
                                     images_to_tensor(search[None]),
                                     layer=args.layer, head=args.head)
    os.makedirs(args.out, exist_ok=True)
    for name, arr in maps.items():
        path = os.path.join(args.out, f"{name}_layer{args.layer}_head{args.head}.pgm")
        write_pgm(path, arr)
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mixtrack",
                                     description="mixed-attention tracker harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train backbone + localization head")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="pretrained encoder checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pretrain", help="masked-reconstruction pretraining")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-spm", help="train the score module on a frozen model")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_spm)

    p = sub.add_parser("track", help="track a PPM frame directory")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--spm")
    p.add_argument("--frames", required=True)
    p.add_argument("--init", required=True, help="frame-0 box 'x0,y0,x1,y1' in pixels")
    p.add_argument("--out")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="evaluate on held-out synthetic sequences")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--spm")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-attn", help="attention cost table: full vs asymmetric")
    p.add_argument("--out")
    p.add_argument("--trials", type=int, default=9)
    p.set_defaults(func=cmd_bench_attn)

    p = sub.add_parser("export-attn", help="write attention maps as PGM files")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--head", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attn)

    args, extra = parser.parse_known_args(argv)
    try:
        return args.func(args, extra)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
