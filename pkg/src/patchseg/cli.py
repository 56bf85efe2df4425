"""Command line interface: synth, assemble, eval, bench.

Every subcommand takes an optional TOML config (-c/--config) plus flags
that mirror and override the config keys.  Validation failures exit with
code 2 and a message on stderr; unexpected errors exit 1; success exits 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .core import GroundTruth, PatchGeometry, PredictionBundle
from .metrics import evaluate
from .npyio import NpyFormatError, atomic_write_text, read_npy, write_npy
from .oracle import PlacementFailure
from .patchgraph import write_edge_list
from .pipeline import run_assembly, run_bench, synth_case


class CliError(Exception):
    """User-facing validation failure (exit code 2)."""


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchseg",
        description="Assemble instance segmentations from per-pixel shape-patch predictions.",
    )
    parser.add_argument("--version", action="version", version=f"patchseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="TOML config file")
    common.add_argument("--seed", type=int, help="RNG seed")
    common.add_argument("--threads", type=int, help="worker threads (1 = reference mode)")
    common.add_argument("--extents", type=_int_list, metavar="E1,E2[,E3]",
                        help="odd patch side lengths per axis")
    common.add_argument("--t", type=float, dest="t", help="patch classification threshold")
    common.add_argument("--fg-threshold", type=float, help="image foreground threshold")

    p_synth = sub.add_parser("synth", parents=[common],
                             help="generate ground truth and oracle predictions")
    p_synth.add_argument("-o", "--output", help="output directory")
    p_synth.add_argument("--kind", choices=["blobs", "strips", "crossing-strips"])
    p_synth.add_argument("--size", type=_int_list, metavar="S1,S2[,S3]")
    p_synth.add_argument("--num-instances", type=_int_list, metavar="N[,N2]")
    p_synth.add_argument("--width", type=int, help="strip width in pixels")
    p_synth.add_argument("--flip-prob", type=float, help="probability of flipping a patch entry")
    p_synth.add_argument("--jitter-sigma", type=float, help="logit-space noise sigma")
    p_synth.set_defaults(func=_cmd_synth)

    p_asm = sub.add_parser("assemble", parents=[common],
                           help="run the assembly pipeline on a prediction bundle")
    p_asm.add_argument("-i", "--input", help="directory containing bundle.json")
    p_asm.add_argument("-o", "--output", help="output directory")
    p_asm.add_argument("--sparse", action="store_true", default=None,
                       help="restrict patches to the image foreground")
    p_asm.add_argument("--partitioner", choices=["mws", "cc"])
    p_asm.add_argument("--mws-dense", action="store_true", default=None,
                       help="baseline: mutex watershed on raw predictions")
    p_asm.add_argument("--no-thinout", action="store_true", default=None,
                       help="keep the full pre-selection")
    p_asm.add_argument("--min-instance-size", type=int)
    p_asm.add_argument("--dump-consensus", action="store_true",
                       help="also write consensus numerator / counts")
    p_asm.add_argument("--dump-scores", action="store_true",
                       help="also write the dense patch score image")
    p_asm.add_argument("--dump-edges", action="store_true",
                       help="also write the patch graph edge list")
    p_asm.set_defaults(func=_cmd_assemble)

    p_eval = sub.add_parser("eval", parents=[common],
                            help="score predicted instances against ground truth")
    p_eval.add_argument("--pred", required=True, help="predicted mask stack (.npy)")
    p_eval.add_argument("--gt", required=True, help="ground truth mask stack (.npy)")
    p_eval.add_argument("-o", "--output", help="output directory for report files")
    p_eval.add_argument("--thresholds", type=_float_list, metavar="T1,T2,...")
    p_eval.set_defaults(func=_cmd_eval)

    p_bench = sub.add_parser("bench", parents=[common],
                             help="sweep patch extents and image sizes, timing stages")
    p_bench.add_argument("-o", "--output", help="output directory")
    p_bench.set_defaults(func=_cmd_bench)
    return parser


def _load_cfg(args, synth_keys=False, assemble_keys=False):
    overrides: dict = {}
    for key in ("seed", "threads", "extents", "t", "fg_threshold"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "output", None) is not None:
        overrides["output"] = args.output
    if getattr(args, "input", None) is not None:
        overrides["input"] = args.input
    if synth_keys:
        synth: dict = {}
        for src, dst in (("kind", "kind"), ("size", "size"),
                         ("num_instances", "num_instances"), ("width", "width"),
                         ("flip_prob", "flip_prob"), ("jitter_sigma", "jitter_sigma")):
            value = getattr(args, src, None)
            if value is not None:
                synth[dst] = value
        if "num_instances" in synth and len(synth["num_instances"]) == 1:
            synth["num_instances"] = synth["num_instances"][0]
        if synth:
            overrides["synth"] = synth
    if assemble_keys:
        if args.sparse is not None:
            overrides["sparse"] = True
        if args.partitioner is not None:
            overrides["partitioner"] = args.partitioner
        if args.mws_dense is not None:
            overrides["mws_dense"] = True
        if args.no_thinout is not None:
            overrides["thinout"] = False
        if args.min_instance_size is not None:
            overrides["min_instance_size"] = args.min_instance_size
    if getattr(args, "thresholds", None) is not None:
        overrides["thresholds"] = args.thresholds
    return load_config(args.config, overrides)


def _require_output(cfg) -> str:
    if not cfg.output:
        raise CliError("an output directory is required (--output or config 'output')")
    os.makedirs(cfg.output, exist_ok=True)
    return cfg.output


def _cmd_synth(args) -> int:
    cfg = _load_cfg(args, synth_keys=True)
    out = _require_output(cfg)
    gt, bundle = synth_case(cfg)
    write_npy(os.path.join(out, "gt.npy"), np.stack([m.astype(np.uint8) for m in gt.masks]))
    write_npy(os.path.join(out, "patch_probs.npy"), bundle.patch_probs)
    write_npy(os.path.join(out, "fg_probs.npy"), bundle.fg_probs)
    write_npy(os.path.join(out, "ninst_probs.npy"), bundle.ninst_probs)
    meta = {
        "extents": list(bundle.geometry.extents),
        "spatial_shape": [int(s) for s in bundle.spatial_shape],
        "t": bundle.t,
        "fg_threshold": bundle.fg_threshold,
        "seed": cfg.seed,
        "kind": cfg.synth.kind,
        "num_instances": gt.num_instances,
        "files": {
            "patch_probs": "patch_probs.npy",
            "fg_probs": "fg_probs.npy",
            "ninst_probs": "ninst_probs.npy",
            "ground_truth": "gt.npy",
        },
    }
    atomic_write_text(os.path.join(out, "bundle.json"), json.dumps(meta, indent=2))
    print(f"wrote {cfg.synth.kind} case with {gt.num_instances} instances to {out}")
    return 0


def load_bundle(directory, *, t=None, fg_threshold=None) -> PredictionBundle:
    """Read a prediction bundle directory written by ``synth`` (or any
    producer following the same layout)."""
    meta_path = os.path.join(directory, "bundle.json")
    if not os.path.exists(meta_path):
        raise CliError(f"{meta_path} not found")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    files = meta["files"]
    patch_probs = read_npy(os.path.join(directory, files["patch_probs"]))
    fg_probs = read_npy(os.path.join(directory, files["fg_probs"]))
    ninst = None
    if files.get("ninst_probs"):
        ninst_path = os.path.join(directory, files["ninst_probs"])
        if os.path.exists(ninst_path):
            ninst = read_npy(ninst_path)
    return PredictionBundle(
        geometry=PatchGeometry(tuple(meta["extents"])),
        patch_probs=patch_probs,
        fg_probs=fg_probs,
        ninst_probs=ninst,
        t=meta["t"] if t is None else t,
        fg_threshold=meta["fg_threshold"] if fg_threshold is None else fg_threshold,
    )


def _cmd_assemble(args) -> int:
    cfg = _load_cfg(args, assemble_keys=True)
    if not cfg.input:
        raise CliError("an input directory is required (--input or config 'input')")
    out = _require_output(cfg)
    bundle = load_bundle(cfg.input, t=args.t, fg_threshold=args.fg_threshold)
    result = run_assembly(bundle, cfg)
    seg = result.segmentation
    write_npy(os.path.join(out, "instances.npy"), seg.mask_stack())
    write_npy(os.path.join(out, "label_map.npy"), seg.label_map)
    atomic_write_text(os.path.join(out, "manifest.json"),
                      json.dumps(result.manifest, indent=2))
    if args.dump_consensus and result.field is not None:
        write_npy(os.path.join(out, "consensus_numerator.npy"),
                  result.field.numerator.astype(np.float32))
        write_npy(os.path.join(out, "consensus_zcount.npy"), result.field.z_count)
    if args.dump_scores and result.ranked is not None:
        scores = np.full(bundle.num_pixels, np.nan, dtype=np.float32)
        scores[result.ranked.flat] = result.ranked.scores
        write_npy(os.path.join(out, "scores.npy"),
                  scores.reshape(bundle.spatial_shape))
    if args.dump_edges and result.graph is not None:
        write_edge_list(result.graph, os.path.join(out, "edges.txt"))
    print(f"assembled {seg.num_instances} instances in "
          f"{result.manifest['total_seconds']:.3f}s, wrote {out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    pred = read_npy(args.pred)
    gt = read_npy(args.gt)
    if pred.ndim != gt.ndim:
        raise CliError(f"rank mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.ndim < 2 or pred.shape[1:] != gt.shape[1:]:
        raise CliError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    pred_masks = [m.astype(bool) for m in pred]
    gt_masks = [m.astype(bool) for m in gt]
    if not gt_masks:
        raise CliError("ground truth stack holds no instances")
    report = evaluate(pred_masks, GroundTruth(gt_masks), cfg.thresholds)
    if cfg.output:
        out = _require_output(cfg)
        atomic_write_text(os.path.join(out, "report.json"), report.to_json())
        atomic_write_text(os.path.join(out, "report.tsv"), report.to_tsv())
    sys.stdout.write(report.to_tsv())
    return 0


def _cmd_bench(args) -> int:
    cfg = _load_cfg(args)
    from .pipeline import warmup

    warmup()
    rows = run_bench(cfg)
    lines = ["extents\tsize\tfg_fraction\tinstances\tthreads\ttotal_seconds\tstage_timings"]
    for row in rows:
        lines.append(
            "{}\t{}\t{}\t{}\t{}\t{:.3f}\t{}".format(
                "x".join(map(str, row["extents"])),
                "x".join(map(str, row["size"])),
                row["foreground_fraction"],
                row["instances"],
                row["threads"],
                row["total_seconds"],
                json.dumps(row["timings"]),
            )
        )
    table = "\n".join(lines) + "\n"
    if cfg.output:
        out = _require_output(cfg)
        atomic_write_text(os.path.join(out, "bench.json"), json.dumps(rows, indent=2))
        atomic_write_text(os.path.join(out, "bench.tsv"), table)
    sys.stdout.write(table)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, NpyFormatError, PlacementFailure) as exc:
        print(f"patchseg: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"patchseg: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"patchseg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
