"""Command-line entry point for the whole pipeline.

Subcommands: ingest, simulate-mask, train, enhance, score, evaluate,
serve-ratings, report.  Every run prints its fully resolved configuration;
config files are simple ``key = value`` text overridable with repeated
``--set key=value`` flags (flags win).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import masksim
from .datastore import CorpusManifest, ingest as ingest_dir, load_checkpoint, save_checkpoint
from .errors import UnmaskError
from .signal import read_wav, write_wav

log = logging.getLogger("unmask")


def _parse_kv_file(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if line and "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                out[k] = v
    return out


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    return value


def _train_config(args):
    from .trainer import TrainConfig

    overrides = {}
    if args.config:
        overrides.update({k: _coerce(v) for k, v in _parse_kv_file(args.config).items()})
    for item in args.set or []:
        if "=" not in item:
            raise UnmaskError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = _coerce(v.strip())
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.iterations is not None:
        overrides["iterations_per_phase"] = args.iterations
    if args.variant:
        overrides["variant"] = args.variant
    cfg = TrainConfig(**overrides)
    print("resolved config:", json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg


def cmd_ingest(args):
    manifest = ingest_dir(args.root, seed=args.seed or 0)
    manifest.save(args.out)
    print(f"ingested {len(manifest.entries)} entries -> {args.out}")
    return 0


def cmd_simulate_mask(args):
    manifest = CorpusManifest.load(args.manifest)
    profiles = (masksim.profiles_from_config(args.profiles)
                if args.profiles else masksim.DEFAULT_PROFILES)
    out = masksim.synthesize_corpus(manifest, profiles, seed=args.seed or 0,
                                    out_root=args.out_root)
    out.save(args.out)
    print(f"synthesized {len(out.entries)} entries -> {args.out}")
    return 0


def cmd_train(args):
    from . import trainer

    cfg = _train_config(args)
    manifest = CorpusManifest.load(args.manifest)
    if args.phase == "all":
        ratings = args.ratings
        if ratings is None and cfg.variant == "full":
            raise UnmaskError("--ratings required for the full protocol")
        result = trainer.run_protocol(manifest, ratings, cfg, args.workdir)
        print("phase sequence:", result["phase_sequence"])
    elif args.phase == "1":
        res = trainer.train_phase1(manifest, cfg)
        save_checkpoint(f"{args.workdir}/generator_phase1.npz", res.generator)
        save_checkpoint(f"{args.workdir}/critic_phase1.npz", res.critic)
        print(f"phase 1 done; final total_g {res.log[-1].total_g:.4f}")
    elif args.phase == "2":
        if not args.ratings or not args.generator:
            raise UnmaskError("phase 2 needs --ratings and --generator")
        res = trainer.train_phase2(args.ratings, load_checkpoint(args.generator), cfg, manifest)
        save_checkpoint(f"{args.workdir}/quality_phase2.npz", res.quality)
        print(f"phase 2 done; training L1 {res.final_l1:.4f}")
    else:
        if not (args.generator and args.critic and args.quality):
            raise UnmaskError("phase 3 needs --generator, --critic and --quality")
        res = trainer.train_phase3(load_checkpoint(args.generator),
                                   load_checkpoint(args.critic),
                                   load_checkpoint(args.quality), cfg, manifest,
                                   ratings=args.ratings)
        save_checkpoint(f"{args.workdir}/generator_phase3.npz", res.generator)
        save_checkpoint(f"{args.workdir}/critic_phase3.npz", res.critic)
        if res.quality is not None:
            save_checkpoint(f"{args.workdir}/quality_phase3.npz", res.quality)
        print(f"phase 3 done; final total {res.log[-1].total_hl:.4f}")
    return 0


def cmd_enhance(args):
    from .trainer import enhance

    out = enhance(load_checkpoint(args.checkpoint), read_wav(args.infile))
    write_wav(args.outfile, out)
    print(f"wrote {args.outfile}")
    return 0


def cmd_score(args):
    from .trainer import load_quality

    net = load_quality(load_checkpoint(args.checkpoint))
    print("path\tscore")
    for path in args.wavs:
        est = net.predict_mos(read_wav(path))
        print(f"{path}\t{np.clip(est.utterance_score, 1.0, 5.0):.3f}")
    return 0


def cmd_evaluate(args):
    from .evaluation import count_parameters, evaluate_checkpoint, report_to_text
    from .trainer import load_enhancer, load_quality

    gen_ck = load_checkpoint(args.generator)
    enhancer = load_enhancer(gen_ck)
    predictor = load_quality(load_checkpoint(args.quality))
    manifest = CorpusManifest.load(args.manifest)
    rows = evaluate_checkpoint(enhancer, predictor, manifest, split=args.split)
    print(report_to_text(rows, fmt="json" if args.json else "table"))
    if args.json:
        print(json.dumps({"generator_parameters": count_parameters(gen_ck)}))
    else:
        print(f"generator parameters: {count_parameters(gen_ck)}")
    return 0


def cmd_serve_ratings(args):
    from .service import serve

    serve(args.campaign, host=args.host, port=args.port, static_dir=args.static)
    return 0


def cmd_report(args):
    rows = []
    with open(args.log, encoding="utf-8") as f:
        header = f.readline().strip().split("\t")
        for line in f:
            rows.append(dict(zip(header, line.strip().split("\t"))))
    if not rows:
        print("empty log")
        return 0
    if args.json:
        print(json.dumps(rows[-1], sort_keys=True))
    else:
        first, last = rows[0], rows[-1]
        print(f"iterations: {len(rows)}")
        for key in header[1:]:
            print(f"{key}: {float(first[key]):.4f} -> {float(last[key]):.4f}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="unmask", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("ingest", help="scan a condition/speaker corpus tree into a manifest")
    q.add_argument("root")
    q.add_argument("--out", default="manifest.jsonl")
    q.add_argument("--seed", type=int, default=None)
    q.set_defaults(fn=cmd_ingest)

    q = sub.add_parser("simulate-mask", help="synthesize masked copies of a clean corpus")
    q.add_argument("manifest")
    q.add_argument("--out-root", required=True)
    q.add_argument("--out", default="masked_manifest.jsonl")
    q.add_argument("--profiles", default=None, help="mask profile config file")
    q.add_argument("--seed", type=int, default=None)
    q.set_defaults(fn=cmd_simulate_mask)

    q = sub.add_parser("train", help="run one training phase or the whole protocol")
    q.add_argument("--manifest", required=True)
    q.add_argument("--phase", choices=("1", "2", "3", "all"), default="all")
    q.add_argument("--variant", choices=("full", "noM", "noMA"), default=None)
    q.add_argument("--workdir", default="runs")
    q.add_argument("--ratings", default=None, help="ratings jsonl path")
    q.add_argument("--generator", default=None)
    q.add_argument("--critic", default=None)
    q.add_argument("--quality", default=None)
    q.add_argument("--iterations", type=int, default=None)
    q.add_argument("--seed", type=int, default=None)
    q.add_argument("--config", default=None, help="key=value config file")
    q.add_argument("--set", action="append", help="override: key=value")
    q.set_defaults(fn=cmd_train)

    q = sub.add_parser("enhance", help="enhance one utterance with a trained generator")
    q.add_argument("checkpoint")
    q.add_argument("infile")
    q.add_argument("outfile")
    q.set_defaults(fn=cmd_enhance)

    q = sub.add_parser("score", help="batch quality scoring of wav files")
    q.add_argument("checkpoint")
    q.add_argument("wavs", nargs="+")
    q.set_defaults(fn=cmd_score)

    q = sub.add_parser("evaluate", help="per-condition masked vs enhanced report")
    q.add_argument("generator")
    q.add_argument("quality")
    q.add_argument("manifest")
    q.add_argument("--split", default="test")
    q.add_argument("--json", action="store_true")
    q.set_defaults(fn=cmd_evaluate)

    q = sub.add_parser("serve-ratings", help="run the listening-test rating service")
    q.add_argument("--campaign", required=True)
    q.add_argument("--host", default="127.0.0.1")
    q.add_argument("--port", type=int, default=8000)
    q.add_argument("--static", default=None, help="directory with the UI bundle")
    q.set_defaults(fn=cmd_serve_ratings)

    q = sub.add_parser("report", help="summarize a training log")
    q.add_argument("log")
    q.add_argument("--json", action="store_true")
    q.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        return args.fn(args)
    except UnmaskError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"FileNotFoundError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
