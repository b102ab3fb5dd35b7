"""Command-line interface.

Every RunConfig field can be overridden with a flag of the same dotted name,
e.g. ``--rate 0.2 --hp.learning_rate 1e-3 --transfer.k 5``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import metrics
from .augment import augment_dataset
from .io import read_labels, read_mesh, sidecar_path, write_labels, write_mesh
from .pipeline import (
    BENCH_BUCKETS,
    RunConfig,
    StageError,
    bench,
    evaluate_pairs,
    load_config,
    load_model,
    run_pipeline,
    run_regime,
    stage,
)
from .segnet.model import ModelParameters
from .synth import ArchSpec, generate

MESH_SUFFIXES = (".stl", ".obj")


def _split_overrides(extra: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ValueError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ValueError(f"flag {tok} needs a value")
            value = extra[i + 1]
            i += 2
        out[key.replace("-", "_")] = value
    return out


def _mesh_paths(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in MESH_SUFFIXES))
        else:
            out.append(p)
    if not out:
        raise ValueError("no mesh files found")
    return out


def _label_paths(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        out.extend(sorted(p.glob("*.labels.json")) if p.is_dir() else [p])
    return out


def _read_labeled(paths):
    items = []
    for p in _mesh_paths(paths):
        with stage("read"):
            mesh = read_mesh(p)
            items.append((mesh, read_labels(sidecar_path(p), mesh.n_cells)))
    return items


def _write_labeled(mesh, labels, path: Path) -> None:
    write_mesh(mesh, path)
    write_labels(labels, sidecar_path(path))


def cmd_generate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        spec = ArchSpec(target_cells=args.cells, jaw=args.jaw, seed=cfg.seed + i)
        with stage("generate"):
            mesh, labels = generate(spec)
        with stage("write"):
            _write_labeled(mesh, labels, out / f"arch_{i:03d}.stl")
        print(f"arch_{i:03d}.stl: {mesh.n_cells} cells")
    return 0


def cmd_augment(args, cfg: RunConfig) -> int:
    items = _read_labeled(args.inputs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with stage("augment"):
        variants = augment_dataset(items, cfg.augmentation)
    with stage("write"):
        with open(out / "draws.jsonl", "w") as fh:
            for mesh, labels, draw in variants:
                _write_labeled(mesh, labels, out / f"src{draw.source:03d}_aug{draw.variant:03d}.stl")
                fh.write(draw.to_json() + "\n")
    print(f"{len(variants)} augmented meshes from {len(items)} inputs")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    arches = _read_labeled(args.inputs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ck = out / "checkpoint.bin"
    _, log = run_regime(arches, cfg, base_checkpoint=cfg.checkpoint, checkpoint_path=ck)
    with stage("write"):
        log.to_csv(out / "train_log.csv")
        (out / "config.json").write_text(cfg.to_json())
    f = log.final
    print(f"regime {cfg.regime}: {len(log.rows)} epochs, loss {f['loss']:.4f}, dsc {f['dsc']:.4f}")
    return 0


def cmd_pipeline(args, cfg: RunConfig) -> int:
    params = load_model(cfg)
    with stage("read"):
        mesh = read_mesh(args.input)
    res = run_pipeline(mesh, params, cfg)
    out_labels = Path(args.out) if args.out else Path(cfg.output_dir) / sidecar_path(args.input).name
    with stage("write"):
        out_labels.parent.mkdir(parents=True, exist_ok=True)
        write_labels(res.labels, out_labels)
        res.timings().to_csv(out_labels.with_name(out_labels.name.replace(".labels.json", "") + ".timings.csv"))
    print(f"{mesh.n_cells} cells -> {res.coarse_mesh.n_cells} coarse; labels written to {out_labels}")
    for ph, s in res.seconds.items():
        print(f"  {ph:12s} {s:.3f} s")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    preds = _label_paths(args.pred)
    truths = _label_paths(args.truth)
    if len(preds) != len(truths):
        raise StageError("eval", f"{len(preds)} prediction files but {len(truths)} truth files")
    with stage("read"):
        pairs = [(read_labels(p), read_labels(t)) for p, t in zip(preds, truths)]
    rep = evaluate_pairs(pairs, args.map_mode)
    print(metrics.report_csv(rep), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(metrics.report_csv(rep))
        (out / "metrics.json").write_text(metrics.report_json(rep))
    return 0


def cmd_bench(args, cfg: RunConfig) -> int:
    with stage("read"):
        if args.input:
            mesh = read_mesh(args.input)
        else:
            mesh, _ = generate(ArchSpec(target_cells=args.cells, seed=cfg.seed))
    params = load_model(cfg) if cfg.checkpoint else ModelParameters.init(cfg.widths, seed=cfg.seed)
    buckets = tuple(int(b) for b in args.buckets.split(",")) if args.buckets else BENCH_BUCKETS
    with stage("bench"):
        t = bench(mesh, params, cfg, buckets, args.repetitions)
    with stage("write"):
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        t.to_csv(args.out)
    print(Path(args.out).read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dentseg", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON run configuration")
        s.set_defaults(func=func)
        return s

    s = add("generate", cmd_generate, "write synthetic labeled arches")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--cells", type=int, default=10_000)
    s.add_argument("--jaw", choices=("mandible", "maxilla"), default="mandible")

    s = add("augment", cmd_augment, "write randomly transformed copies of labeled meshes")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--out", required=True)

    s = add("train", cmd_train, "train the segmentation network")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--out", required=True)

    s = add("pipeline", cmd_pipeline, "label a mesh: decimate, predict, refine, upsample")
    s.add_argument("input")
    s.add_argument("--out", help="output label sidecar path")

    s = add("eval", cmd_eval, "per-class and macro DSC/SEN/PPV plus MAP")
    s.add_argument("--pred", nargs="+", required=True)
    s.add_argument("--truth", nargs="+", required=True)
    s.add_argument("--map-mode", choices=("micro", "macro"), default="micro")
    s.add_argument("--out")

    s = add("bench", cmd_bench, "per-phase timing over compression buckets")
    s.add_argument("--input")
    s.add_argument("--cells", type=int, default=100_000)
    s.add_argument("--buckets", help="comma-separated cell counts")
    s.add_argument("--repetitions", type=int, default=3)
    s.add_argument("--out", default="timings.csv")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with stage("config"):
            cfg = load_config(args.config, _split_overrides(extra))
        with stage(args.command):
            return args.func(args, cfg)
    except StageError as e:
        print(f"dentseg {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
