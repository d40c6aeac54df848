"""Operator command line: synth-data, train, infer, eval, plot-landmarks.

Every subcommand is reproducible from (config, seed): manifests carry the
config hash and no timestamps, so re-running a command emits byte-identical
manifests. Failures exit nonzero with a one-line JSON error (category +
message) on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .config import dump_config, load_config, run_config_hash
from .diffusion.sampling import DEFAULT_DDIM_STEPS
from .diffusion.schedule import make_schedule
from .diffusion.pipeline import infer_pipeline
from .diffusion.train import (
    load_autoencoder,
    load_m2v,
    train_autoencoder_stage,
    train_phase1,
    train_phase2,
    PHASE1_KIND,
)
from .errors import AuheadError, DataError, PreconditionError, SchemaError, ShapeError
from .facs import AUSequence, LandmarkPartition, emotion_to_au_vector
from .ingest.audio import (
    AudioFeatureSequence,
    SpectralEnergyProvider,
    audio_features,
    read_audio_features_csv,
)
from .ingest.landmark_io import read_landmark_file, write_landmark_file
from .ingest.openface import read_openface_au_csv
from .ingest.rig import (
    default_rig_spec,
    load_dataset,
    load_image,
    save_dataset,
    save_image,
    synth_rig_generate,
)
from .motion.train import load_sync_expert, load_vmg, train_sync_expert, train_vmg
from .plots import emit_landmark_plots

TRAIN_STAGES = ("vmg", "sync", "m2v-autoencoder", "m2v-phase1", "m2v-phase2")


def _write_manifest(out_dir: Path, payload: dict) -> Path:
    path = out_dir / "run_manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _partition(cfg) -> LandmarkPartition:
    if cfg.get("partition_file"):
        return LandmarkPartition.from_index_file(cfg["partition_file"])
    return LandmarkPartition.default()


def _require_checkpoint(path, stage: str, flag: str):
    if path is None:
        raise PreconditionError(f"stage {stage} requires a checkpoint via {flag}")
    if not Path(path).exists():
        raise PreconditionError(f"stage {stage}: checkpoint {path} does not exist")
    return path


def cmd_synth_data(args) -> int:
    cfg = load_config(args.config, tuple(args.set))
    rig_cfg = cfg["rig"]
    spec = default_rig_spec(
        audio_width=rig_cfg["audio_width"],
        noise_std=rig_cfg["noise_std"],
        seed=rig_cfg["seed"],
    )
    dataset = synth_rig_generate(
        spec,
        num_clips=rig_cfg["num_clips"],
        frames_per_clip=rig_cfg["frames_per_clip"],
        fps=rig_cfg["fps"],
        image_size=rig_cfg["image_size"],
        train_fraction=rig_cfg["train_fraction"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    _write_manifest(
        out,
        {
            "command": "synth-data",
            "config_hash": run_config_hash(cfg),
            "seed": rig_cfg["seed"],
            "num_clips": rig_cfg["num_clips"],
            "train_clips": len(dataset.train_clips()),
            "val_clips": len(dataset.val_clips()),
        },
    )
    print(f"wrote {len(dataset.clips)} clips to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, tuple(args.set))
    dataset = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    stage = args.stage

    if stage == "sync":
        _, rows, ckpt = train_sync_expert(dataset, cfg["sync_expert"], out_dir=out, seed=seed)
    elif stage == "vmg":
        sync_expert = None
        if cfg["vmg"]["loss_weights"]["sync"] > 0:
            sync_path = _require_checkpoint(args.sync_expert, stage, "--sync-expert")
            sync_expert = load_sync_expert(sync_path)
        _, rows, ckpt = train_vmg(
            dataset, cfg["vmg"], sync_expert, out_dir=out, seed=seed, resume=args.resume
        )
    elif stage == "m2v-autoencoder":
        _, _, rows, ckpt = train_autoencoder_stage(dataset, cfg["m2v"], out_dir=out, seed=seed)
    elif stage == "m2v-phase1":
        ae_path = _require_checkpoint(args.autoencoder, stage, "--autoencoder")
        autoencoder, latent_scale = load_autoencoder(ae_path)
        _, rows, ckpt = train_phase1(
            dataset,
            cfg["m2v"],
            autoencoder,
            latent_scale,
            partition=_partition(cfg),
            out_dir=out,
            seed=seed,
            resume=args.resume,
        )
    elif stage == "m2v-phase2":
        p1_path = _require_checkpoint(args.phase1, stage, "--phase1")
        model, _ = load_m2v(p1_path, expect_kind=PHASE1_KIND)
        _, rows, ckpt = train_phase2(
            dataset,
            cfg["m2v"],
            model,
            partition=_partition(cfg),
            out_dir=out,
            seed=seed,
            resume=args.resume,
        )
    else:
        raise PreconditionError(f"unknown training stage {stage!r}")

    _write_manifest(
        out,
        {
            "command": f"train {stage}",
            "config_hash": run_config_hash(cfg),
            "seed": seed,
            "steps": rows[-1]["step"] if rows else 0,
            "checkpoint": str(ckpt),
        },
    )
    print(f"stage {stage}: {len(rows)} steps, checkpoint {ckpt}")
    return 0


def _load_audio_features(args, cfg) -> AudioFeatureSequence:
    fps = cfg["inference"]["fps"]
    if args.audio_features:
        return read_audio_features_csv(args.audio_features)
    if args.audio:
        import scipy.io.wavfile as wavfile

        rate, data = wavfile.read(args.audio)
        if rate != 16000:
            raise DataError(f"{args.audio}: expected 16 kHz audio, got {rate} Hz")
        raw = np.asarray(data)
        if np.issubdtype(raw.dtype, np.integer):
            wav = raw.astype(np.float64) / (float(np.iinfo(raw.dtype).max) + 1.0)
        else:
            wav = raw.astype(np.float64)
        if wav.ndim == 2:
            wav = wav.mean(axis=1)
        provider = SpectralEnergyProvider(cfg["inference"]["audio_feature_width"])
        return audio_features(provider, wav, fps)
    raise PreconditionError("provide --audio or --audio-features")


def cmd_infer(args) -> int:
    cfg = load_config(args.config, tuple(args.set))
    inference = cfg["inference"]
    seed = args.seed if args.seed is not None else cfg["seed"]

    vmg_path = _require_checkpoint(args.vmg, "infer (motion stage)", "--vmg")
    m2v_path = _require_checkpoint(args.m2v, "infer (video stage)", "--m2v")
    vmg = load_vmg(vmg_path)
    m2v, m2v_cfg = load_m2v(m2v_path)
    sched = make_schedule(**m2v_cfg["schedule"])

    audio = _load_audio_features(args, cfg)
    if args.au_csv:
        aus = read_openface_au_csv(args.au_csv, fps=audio.fps)
    elif args.emotion is not None:
        vec = emotion_to_au_vector(args.emotion, args.intensity)
        aus = AUSequence.constant(vec, len(audio), audio.fps)
    else:
        raise PreconditionError("provide --au-csv or --emotion/--intensity")
    if len(aus) != len(audio):
        raise ShapeError(f"AU frames {len(aus)} != audio frames {len(audio)}")

    ref_image = load_image(args.ref_image)
    ref_landmarks = read_landmark_file(args.ref_landmarks).frame(0)

    result = infer_pipeline(
        ref_image,
        ref_landmarks,
        audio,
        aus,
        vmg,
        m2v,
        sched,
        partition=_partition(cfg),
        seed=seed,
        ddim_steps=inference["ddim_steps"],
        chunk_frames=inference["chunk_frames"],
        context_frames=inference["context_frames"],
    )

    out = Path(args.out)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    for t in range(result.frames.shape[0]):
        save_image(result.frames[t], frames_dir / f"{t:05d}.png")
    write_landmark_file(result.motion, out / "landmarks.csv")
    emit_landmark_plots(result.motion, out / "landmark_plots", _partition(cfg))
    _write_manifest(
        out,
        {
            "command": "infer",
            "config_hash": run_config_hash(cfg),
            "seed": seed,
            "frames": int(result.frames.shape[0]),
            "ddim_steps": inference["ddim_steps"],
        },
    )
    print(f"wrote {result.frames.shape[0]} frames to {frames_dir}")
    return 0


def _clip_inventory(root: Path) -> dict[str, Path]:
    clips = {}
    for child in sorted(root.rglob("landmarks.csv")):
        clip_dir = child.parent
        if (clip_dir / "frames").is_dir():
            clips[clip_dir.name] = clip_dir
    return clips


def _load_clip_frames(clip_dir: Path) -> np.ndarray:
    paths = sorted((clip_dir / "frames").glob("*.png"))
    if not paths:
        raise SchemaError(f"{clip_dir}: no frames")
    return np.stack([load_image(p) for p in paths])


def cmd_eval(args) -> int:
    cfg = load_config(args.config, tuple(args.set))
    mcfg = cfg["metrics"]
    part = _partition(cfg)
    pred_clips = _clip_inventory(Path(args.pred))
    gt_clips = _clip_inventory(Path(args.gt))
    missing = sorted(set(gt_clips) ^ set(pred_clips))
    if missing:
        raise ShapeError(f"clip inventories differ; unmatched clips: {missing}")
    if not gt_clips:
        raise ShapeError("no clips found (need <clip>/frames/*.png and <clip>/landmarks.csv)")

    report = metrics_mod.MetricReport()
    pred_frames_all, gt_frames_all = [], []
    for name in sorted(gt_clips):
        pred_frames = _load_clip_frames(pred_clips[name])
        gt_frames = _load_clip_frames(gt_clips[name])
        if pred_frames.shape != gt_frames.shape:
            raise ShapeError(f"clip {name}: frame shapes differ")
        pred_lm = read_landmark_file(pred_clips[name] / "landmarks.csv")
        gt_lm = read_landmark_file(gt_clips[name] / "landmarks.csv")
        psnr_values = [
            metrics_mod.psnr(p, g, mcfg["psnr_peak"]) for p, g in zip(pred_frames, gt_frames)
        ]
        ssim_values = [
            metrics_mod.ssim(p, g, mcfg["ssim_window"], mcfg["psnr_peak"])
            for p, g in zip(pred_frames, gt_frames)
        ]
        report.clips.append(
            metrics_mod.ClipMetrics(
                name=name,
                psnr=float(np.mean(psnr_values)),
                ssim=float(np.mean(ssim_values)),
                m_lmd=metrics_mod.lmd(pred_lm, gt_lm, part, "mouth"),
                f_lmd=metrics_mod.lmd(pred_lm, gt_lm, part, "full"),
            )
        )
        pred_frames_all.append(pred_frames)
        gt_frames_all.append(gt_frames)

    embed = mcfg["frechet_embed_size"]
    report.frechet = metrics_mod.frechet_distance(
        metrics_mod.pixel_embeddings(np.concatenate(pred_frames_all), embed),
        metrics_mod.pixel_embeddings(np.concatenate(gt_frames_all), embed),
        eps=mcfg["frechet_eps"],
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "report.csv").write_text(report.to_table(), encoding="utf-8")
    _write_manifest(
        out,
        {
            "command": "eval",
            "config_hash": run_config_hash(cfg),
            "clips": len(report.clips),
        },
    )
    print(report.to_text(), end="")
    return 0


def cmd_plot_landmarks(args) -> int:
    cfg = load_config(args.config, tuple(args.set))
    seq = read_landmark_file(args.landmarks)
    paths = emit_landmark_plots(seq, args.out, _partition(cfg))
    print(f"wrote {len(paths)} plots to {args.out}")
    return 0


def cmd_show_config(args) -> int:
    cfg = load_config(args.config, tuple(args.set))
    sys.stdout.write(dump_config(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="auhead",
        description="Audio + action-unit driven talking-head pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument(
            "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
            help="override one config value",
        )

    p = sub.add_parser("synth-data", help="generate the synthetic rig dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train one pipeline stage")
    common(p)
    p.add_argument("stage", choices=TRAIN_STAGES)
    p.add_argument("--data", required=True, help="dataset directory (synth-data output)")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--sync-expert", default=None, help="sync-expert checkpoint (vmg stage)")
    p.add_argument("--autoencoder", default=None, help="autoencoder checkpoint (m2v-phase1)")
    p.add_argument("--phase1", default=None, help="phase-1 checkpoint (m2v-phase2)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run the full two-stage pipeline")
    common(p)
    p.add_argument("--ref-image", required=True)
    p.add_argument("--ref-landmarks", required=True, help="landmark file; frame 0 is used")
    p.add_argument("--audio", default=None, help="16 kHz WAV file")
    p.add_argument("--audio-features", default=None, help="precomputed feature CSV")
    p.add_argument("--au-csv", default=None, help="OpenFace-style AU CSV")
    p.add_argument("--emotion", default=None, help="emotion label instead of an AU CSV")
    p.add_argument("--intensity", type=float, default=3.0, help="AU intensity for --emotion")
    p.add_argument("--vmg", default=None, help="motion-stage checkpoint")
    p.add_argument("--m2v", default=None, help="video-stage checkpoint")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="compute the metric report for generated clips")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot-landmarks", help="emit per-frame landmark plots")
    common(p)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_landmarks)

    p = sub.add_parser("show-config", help="print the resolved canonical config")
    common(p)
    p.set_defaults(func=cmd_show_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AuheadError as err:
        sys.stderr.write(json.dumps({"category": err.category, "message": str(err)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
