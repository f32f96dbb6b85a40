"""Command-line surface: train, stylize, reconstruct, ablate, bench,
params, metrics.

Exit codes: 0 success, 2 usage or configuration problem, 3 runtime or data
problem. Every verb takes --config (key=value file) plus per-key overrides
via --set, and honors --seed for byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
import time

import numpy as np

from . import imgio, metrics, model, stylize
from .config import ConfigError, RunConfig, apply_overrides, \
    config_defaults_text, load_config
from .data import load_dataset
from .training import train
from .weights_io import load_weights, save_weights

USAGE_ERROR = 2
RUNTIME_ERROR = 3


class CliError(Exception):
    def __init__(self, message, code=RUNTIME_ERROR):
        super().__init__(message)
        self.code = code


def _load_run_config(args):
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config)
    overrides = [kv.split("=", 1) for kv in args.set or []]
    bad = [kv for kv in overrides if len(kv) != 2]
    if bad:
        raise ConfigError("--set expects key=value, got %r" % (bad[0][0],))
    if args.seed is not None:
        overrides.append(("seed", str(args.seed)))
    return apply_overrides(cfg, overrides)


def _ensure_out_dir(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _read_image(path):
    try:
        return imgio.read_image(path)
    except OSError as e:
        raise CliError("cannot read image %s: %s" % (path, e)) from None


def _load_model(path):
    try:
        return load_weights(path)
    except OSError as e:
        raise CliError("cannot read weights %s: %s" % (path, e)) from None


def cmd_train(args):
    cfg = _load_run_config(args)
    mc = cfg.to_model_config()
    plan = cfg.to_train_plan()
    data = load_dataset(cfg.to_dataset_spec())
    out_dir = _ensure_out_dir(cfg)
    weights_path = args.out or os.path.join(
        out_dir, "%s_%s_%s.hfw" % (cfg.preset, cfg.skip_variant, cfg.strategy))
    log_path = weights_path + ".log"
    t0 = time.time()
    with open(log_path, "w", encoding="utf-8") as log:
        def log_fn(line):
            log.write(line + "\n")
            if args.verbose:
                print(line)
        weights, history = train(data, mc, plan, log_fn=log_fn)
    save_weights(weights_path, mc, weights)
    losses = metrics.reconstruction_losses(data, mc, weights)
    print("trained %s/%s (%s) in %.1fs" % (cfg.preset, cfg.skip_variant,
                                           cfg.strategy, time.time() - t0))
    print("  " + "  ".join("%s %.5f" % (k, losses[k]) for k in sorted(losses)))
    print("weights: %s" % weights_path)
    print("log: %s" % log_path)
    return 0


def cmd_reconstruct(args):
    mc, weights = _load_model(args.weights)
    cfg = _load_run_config(args)
    if args.image:
        images = _read_image(args.image)[None]
    else:
        images = load_dataset(cfg.to_dataset_spec())
    losses = metrics.reconstruction_losses(images, mc, weights)
    if args.report_taps:
        for k in sorted(losses):
            print("%s %.6f" % (k, losses[k]))
    else:
        print("image %.6f" % losses["image"])
    if args.out and args.image:
        z, _, skips = model.encode(images, mc, weights)
        recon = np.clip(model.decode(z, skips, mc, weights)[0], 0.0, 1.0)
        imgio.write_image(args.out, recon)
        print("wrote %s" % args.out)
    return 0


def cmd_stylize(args):
    cfg = _load_run_config(args)
    mc, weights = _load_model(args.weights)
    content = _read_image(args.content)
    style = _read_image(args.style)
    overrides = {}
    if args.levels is not None:
        overrides["levels"] = args.levels
    if args.no_postprocess:
        overrides["postprocess"] = "off"
    if args.cascade:
        overrides["cascade"] = "true"
    if args.radius is not None:
        overrides["radius"] = str(args.radius)
    if args.eps is not None:
        overrides["eps"] = str(args.eps)
    cfg = apply_overrides(cfg, list(overrides.items()))
    content_labels = style_labels = None
    if (args.labels_content is None) != (args.labels_style is None):
        raise CliError("--labels-content and --labels-style go together",
                       USAGE_ERROR)
    if args.labels_content:
        content_labels = imgio.read_label_map(args.labels_content)
        style_labels = imgio.read_label_map(args.labels_style)
        only_c = sorted(set(np.unique(content_labels))
                        - set(np.unique(style_labels)))
        if only_c:
            print("note: content labels %s missing from style; those regions "
                  "fall back to whole-style statistics" % only_c)
    opts = cfg.to_stylize_options(content_labels=content_labels,
                                  style_labels=style_labels)
    sf = stylize.prepare_style(style, mc, weights, labels=style_labels,
                               zca_opts=opts.zca)
    report = {}
    run = stylize.stylize_cascade if opts.cascade_mode else stylize.stylize
    out = run(content, sf, mc, weights, opts, report=report)
    imgio.write_image(args.out, out)
    print("transforms %d | encode %.3fs | transform %.3fs | decode %.3fs | "
          "postprocess %.3fs"
          % (report["transforms"], report["encode_s"], report["transform_s"],
             report["decode_s"], report["postprocess_s"]))
    print("wrote %s" % args.out)
    return 0


_TABLE_COLUMNS = ("tap3", "tap2", "tap1", "image")


def _print_table(title, rows):
    print(title)
    cols = [c for c in _TABLE_COLUMNS if c in rows[0][1]]
    header = "%-18s" % "variant" + "".join("%12s" % c for c in cols)
    print(header)
    for name, losses in rows:
        print("%-18s" % name
              + "".join("%12.5f" % losses[c] for c in cols))


def cmd_ablate(args):
    cfg = _load_run_config(args)
    data = load_dataset(cfg.to_dataset_spec())
    seeds = tuple(range(args.seeds))
    if args.axis == "skip":
        grid = [("none", None), ("max_indices", None),
                ("wavelet_concat", None), ("hf_residual", None)]
    else:
        grid = [(None, "vanilla"), (None, "end_to_end"),
                (None, "blockwise_inward")]
    rows = []
    for variant, strategy in grid:
        per_seed = []
        for seed in seeds:
            row_cfg = apply_overrides(cfg, [("seed", str(seed))])
            if variant:
                row_cfg = apply_overrides(row_cfg, [("skip_variant", variant)])
            if strategy:
                row_cfg = apply_overrides(row_cfg, [("strategy", strategy)])
            mc = row_cfg.to_model_config()
            weights, _ = train(data, mc, row_cfg.to_train_plan())
            per_seed.append(metrics.reconstruction_losses(data, mc, weights))
        mean = {k: sum(r[k] for r in per_seed) / len(per_seed)
                for k in per_seed[0]}
        rows.append((variant or strategy, mean))
        if args.verbose:
            _print_table("so far:", rows)
    _print_table("%s ablation (mean of %d seeds, lower is better)"
                 % (args.axis, len(seeds)), rows)
    return 0


def cmd_params(args):
    if args.defaults:
        sys.stdout.write(config_defaults_text())
        return 0
    cfg = _load_run_config(args)
    mc = cfg.to_model_config()
    count = model.count_parameters(mc)
    print("preset %s depth %d skip %s" % (cfg.preset, mc.depth, mc.skip_variant))
    print("parameters total %d (encoder %d, decoder %d)"
          % (count.total, count.encoder, count.decoder))
    print("mainstream layers %d" % count.mainstream_layers)
    if cfg.preset == "vgg19" and mc.depth == 4:
        print("note: the reference design reports 24 mainstream layers; this "
              "mirrored stack counts %d under conv+pool+merge counting"
              % count.mainstream_layers)
    return 0


def cmd_bench(args):
    cfg = _load_run_config(args)
    mc, weights = _load_model(args.weights) if args.weights else (None, None)
    if mc is None:
        mc = cfg.to_model_config()
        weights = model.init_weights(mc, seed=cfg.seed)
    sizes = [int(s) for s in (args.sizes or "128,256").split(",")]
    runs = max(5, args.runs)
    rng = np.random.default_rng(cfg.seed)
    print("%8s %12s %12s" % ("size", "stylize_s", "cascade_s"))
    for size in sizes:
        content = rng.uniform(0.0, 1.0, size=(3, size, size))
        style = rng.uniform(0.0, 1.0, size=(3, size, size))
        opts = cfg.to_stylize_options()
        row = ["%8d" % size]
        for fn in (stylize.stylize, stylize.stylize_cascade):
            try:
                sf = stylize.prepare_style(style, mc, weights, zca_opts=opts.zca)
                samples = []
                for _ in range(runs):
                    t0 = time.perf_counter()
                    fn(content, sf, mc, weights, opts)
                    samples.append(time.perf_counter() - t0)
                row.append("%12.3f" % statistics.median(samples))
            except MemoryError:
                row.append("%12s" % "OOM")
        print("".join(row))
    return 0


def cmd_metrics(args):
    cfg = _load_run_config(args)
    mc, weights = _load_model(args.weights)
    slc = cfg.to_style_loss_config()
    method_dirs = args.methods
    pair_specs = [p.split(":") for p in args.pairs]
    if any(len(p) != 2 for p in pair_specs):
        raise CliError("--pairs entries look like content.ppm:style.ppm",
                       USAGE_ERROR)
    raw = np.zeros((len(method_dirs), len(pair_specs)))
    for j, (content_path, style_path) in enumerate(pair_specs):
        style = _read_image(style_path)
        content = _read_image(content_path)
        for i, mdir in enumerate(method_dirs):
            out_path = os.path.join(mdir, os.path.basename(content_path))
            if not os.path.exists(out_path):
                raise CliError("method output missing: %s" % out_path)
            out = _read_image(out_path)
            loss = metrics.regularized_style_loss(
                out, content, style, mc, weights, cfg=slc,
                deep_tap=cfg.deep_tap, seed=cfg.seed)
            raw[i, j] = loss["total"]
    score = metrics.normalize_losses(raw, methods=[os.path.basename(m.rstrip("/"))
                                                   or m for m in method_dirs])
    out_dir = _ensure_out_dir(cfg)
    report_path = os.path.join(out_dir, "metrics.txt")
    lines = ["%-24s %12s %12s" % ("method", "mean_z", "mean_raw")]
    order = np.argsort(score.method_means)
    for i in order:
        lines.append("%-24s %12.4f %12.4f"
                     % (score.methods[i], score.method_means[i],
                        raw[i].mean()))
    text = "\n".join(lines)
    print(text)
    with open(report_path, "w", encoding="utf-8") as f:
        f.write(text + "\n")
        f.write("\nraw method x pair grid\n")
        for i, name in enumerate(score.methods):
            f.write("%s %s\n" % (name, " ".join("%.6f" % v for v in raw[i])))
    print("report: %s" % report_path)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hfw",
        description="Photorealistic style transfer at desk scale: train the "
                    "autoencoder, stylize images, reproduce the ablations.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("train", help="train a decoder and save weights")
    common(p)
    p.add_argument("--strategy", help="training strategy override")
    p.add_argument("--preset", help="model preset override")
    p.add_argument("--synthetic", action="store_true",
                   help="force the generated corpus (the default source)")
    p.add_argument("--out", help="weight file path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("stylize", help="transfer a style onto a content image")
    common(p)
    p.add_argument("content")
    p.add_argument("style")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", default="stylized.ppm")
    p.add_argument("--levels", help="comma list, e.g. 4,3,2,1; empty disables")
    p.add_argument("--labels-content")
    p.add_argument("--labels-style")
    p.add_argument("--no-postprocess", action="store_true")
    p.add_argument("--cascade", action="store_true",
                   help="per-level chained passes instead of one pass")
    p.add_argument("--radius", type=int)
    p.add_argument("--eps", type=float)
    p.set_defaults(fn=cmd_stylize)

    p = sub.add_parser("reconstruct", help="autoencode and report losses")
    common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--image", help="one image instead of the config corpus")
    p.add_argument("--report-taps", action="store_true")
    p.add_argument("--out", help="write the reconstruction here")
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("ablate", help="train a variant grid, print the table")
    common(p)
    p.add_argument("--axis", choices=("skip", "strategy"), required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("bench", help="median stylization wall-clock by size")
    common(p)
    p.add_argument("--weights")
    p.add_argument("--sizes", help="comma list of square sizes, default 128,256")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--threads", type=int,
                   help="BLAS threads during timing (default 1)")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("params", help="parameter and layer accounting")
    common(p)
    p.add_argument("--defaults", action="store_true",
                   help="print every config key with its default and exit")
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("metrics", help="normalized style-loss grid over methods")
    common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--methods", nargs="+", required=True,
                   help="directories of stylized outputs, one per method")
    p.add_argument("--pairs", nargs="+", required=True,
                   metavar="CONTENT:STYLE")
    p.set_defaults(fn=cmd_metrics)
    return parser


def _apply_flag_overrides(args):
    pairs = []
    for flag in ("strategy", "preset"):
        value = getattr(args, flag, None)
        if value:
            pairs.append("%s=%s" % (flag, value))
    if pairs:
        args.set = (args.set or []) + pairs


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_flag_overrides(args)
    try:
        if args.verb == "bench":
            import threadpoolctl
            with threadpoolctl.threadpool_limits(limits=args.threads or 1):
                return args.fn(args)
        return args.fn(args)
    except ConfigError as e:
        print("config error: %s" % e, file=sys.stderr)
        return USAGE_ERROR
    except CliError as e:
        print("error: %s" % e, file=sys.stderr)
        return e.code
    except (ValueError, KeyError) as e:
        print("error: %s" % e, file=sys.stderr)
        return RUNTIME_ERROR
    except OSError as e:
        print("io error: %s" % e, file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
