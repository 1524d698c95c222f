"""Command-line interface: ``njet <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error (bad flags, missing input files),
2 runtime failure. Every subcommand writes its numbers as CSV into
``--out`` together with the effective ``config.json``. Settings resolve
as flags > ``--config`` JSON > built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from njet import data, fit, gradcheck, models
from njet.basis import BasisSpec, sample_basis
from njet.imageio import read_image, write_image
from njet.nn import checkpoint
from njet.train import TrainConfig, _spatial_depth, erf_map, evaluate, second_moment, train

log = logging.getLogger("njet")

COMMON = {"out": "out", "threads": 1, "seed": 0, "verbose": False}

DEFAULTS = {
    "basis": {"order": 3, "sigma": 1.0, "k": 2.0, "no_normalize": False},
    "gradcheck": {"tolerance": 1e-4},
    "fit": {"image": None, "orders": [1, 2, 3], "sigmas": [5.0], "k": 1.0, "border": 1,
            "y": None, "x": None},
    "train": {"arch": "toy", "data": "blobs", "data_dir": None, "scale": 1.0, "conv": "njet",
              "epochs": 10, "lr": 0.01, "lr_schedule": "constant", "momentum": 0.9, "batch_size": 32, "alpha_l2": 0.0,
              "sigma_lr_scale": 1.0, "subsample_r": None, "order": None, "filters": 16,
              "sigma": 1.0, "n_train": 1000, "n_eval": 200},
    "eval": {"checkpoint": None, "data": None, "data_dir": None, "scale": None, "n_eval": None},
    "export-filters": {"checkpoint": None},
    "erf": {"checkpoint": None, "data": None, "data_dir": None, "scale": None, "n": 16,
            "location": None},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--out", help=f"output directory (default {COMMON['out']})")
    p.add_argument("--config", help="JSON file with settings; flags override it")
    p.add_argument("--threads", type=int, help="BLAS/FFT thread count (default 1)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS,
                   help="log progress to stderr")


def _data_flags(p, cmd):
    d = DEFAULTS[cmd]
    p.add_argument("--data", choices=("blobs", "mnist"),
                   help=f"dataset (default {d['data'] or 'from checkpoint'})")
    p.add_argument("--data-dir", help="IDX directory (default $NJET_DATA_DIR)")
    p.add_argument("--scale", type=float,
                   help=f"input scale factor (default {d['scale'] or 'from checkpoint'})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="njet", description=__doc__.splitlines()[0],
                     argument_default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("basis", help="dump a Gaussian derivative basis as PGM images",
                       argument_default=argparse.SUPPRESS)
    _common(p)
    p.add_argument("--order", type=int, help="maximum derivative order N (default 3)")
    p.add_argument("--sigma", type=float, help="scale (default 1.0)")
    p.add_argument("--k", type=float, help="extent multiplier (default 2.0)")
    p.add_argument("--no-normalize", action="store_true", help="skip the sigma^order factor")

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer",
                       argument_default=argparse.SUPPRESS)
    _common(p)
    p.add_argument("--tolerance", type=float, help="pass threshold (default 1e-4)")

    p = sub.add_parser("fit", help="least-squares fit of an image patch",
                       argument_default=argparse.SUPPRESS)
    _common(p)
    p.add_argument("--image", help="PGM/PPM input (required)")
    p.add_argument("--orders", type=int, nargs="+", help="orders to sweep (default 1 2 3)")
    p.add_argument("--sigmas", type=float, nargs="+", help="scales to sweep (default 5.0)")
    p.add_argument("--k", type=float, help="extent multiplier (default 1.0)")
    p.add_argument("--border", type=int, help="ignored border width (default 1)")
    p.add_argument("--y", type=int, help="patch top row (default: centred)")
    p.add_argument("--x", type=int, help="patch left column (default: centred)")

    p = sub.add_parser("train", help="train a model and trace sigma",
                       argument_default=argparse.SUPPRESS)
    _common(p)
    _data_flags(p, "train")
    d = DEFAULTS["train"]
    p.add_argument("--arch", choices=models.ARCHS, help=f"architecture (default {d['arch']})")
    p.add_argument("--conv", choices=("njet", "standard"),
                   help="convolution type for the stacked nets (default njet)")
    p.add_argument("--epochs", type=int, help=f"epochs (default {d['epochs']})")
    p.add_argument("--lr", type=float, help=f"learning rate (default {d['lr']})")
    p.add_argument("--momentum", type=float, help=f"momentum (default {d['momentum']})")
    p.add_argument("--batch-size", type=int, help=f"batch size (default {d['batch_size']})")
    p.add_argument("--lr-schedule", choices=["constant", "cosine"],
                   help="per-epoch learning-rate schedule (default constant)")
    p.add_argument("--alpha-l2", type=float, help="L2 decay on alphas (default 0)")
    p.add_argument("--sigma-lr-scale", type=float, help="sigma learning-rate factor (default 1)")
    p.add_argument("--subsample-r", type=float, help="safe-subsampling r (default off)")
    p.add_argument("--order", type=int, help="N-Jet order (default 4 toy, 3 stacks)")
    p.add_argument("--filters", type=int, help=f"channels per layer (default {d['filters']})")
    p.add_argument("--sigma", type=float, help=f"initial sigma (default {d['sigma']})")
    p.add_argument("--n-train", type=int, help=f"training images (default {d['n_train']})")
    p.add_argument("--n-eval", type=int, help=f"evaluation images (default {d['n_eval']})")

    p = sub.add_parser("eval", help="accuracy of a checkpoint", argument_default=argparse.SUPPRESS)
    _common(p)
    _data_flags(p, "eval")
    p.add_argument("--checkpoint", help="model JSON (required)")
    p.add_argument("--n-eval", type=int, help="evaluation images (default from checkpoint)")

    p = sub.add_parser("export-filters", help="write synthesized filters as PGM images",
                       argument_default=argparse.SUPPRESS)
    _common(p)
    p.add_argument("--checkpoint", help="model JSON (required)")

    p = sub.add_parser("erf", help="effective receptive field of a checkpoint",
                       argument_default=argparse.SUPPRESS)
    _common(p)
    _data_flags(p, "erf")
    p.add_argument("--checkpoint", help="model JSON (required)")
    p.add_argument("--n", type=int, help="images averaged (default 16)")
    p.add_argument("--location", type=int, nargs=2, metavar=("Y", "X"),
                   help="output unit (default: centre)")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional JSON config and explicit flags."""
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[args.command])
    given = vars(args).copy()
    given.pop("command")
    path = given.pop("config", None)
    if path is not None:
        try:
            from_file = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path} is not valid JSON: {e}")
        from_file.pop("command", None)  # tolerate a re-fed config.json echo
        unknown = set(from_file) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(from_file)
    cfg.update(given)
    cfg["command"] = args.command
    return cfg


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _need_file(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    if not Path(path).is_file():
        raise UsageError(f"{what} file not found: {path}")
    return Path(path)


def _dataset(kind, split, n, scale, seed, data_dir):
    if kind == "blobs":
        size = int(round(28 * scale))
        return data.synth_blobs(n, size, scale, seed=seed + (0 if split == "train" else 10_000))
    if kind == "mnist":
        try:
            root = data.data_dir(data_dir)
        except FileNotFoundError as e:
            raise UsageError(str(e))
        ds = data.load_mnist(root, split)[:n]
        return data.make_multiscale(ds, scale)
    raise UsageError(f"unknown dataset {kind!r}")


def cmd_basis(cfg, out: Path):
    spec = BasisSpec(cfg["order"], cfg["sigma"], cfg["k"])
    st = sample_basis(spec, normalize=not cfg["no_normalize"])
    rows = []
    for m, (i, j) in enumerate(st.index_map):
        f = st.filters[m]
        write_image(out / f"filter_{m:02d}_i{i}_j{j}.pgm", f)
        rows.append([m, i, j, st.size, repr(float(f.min())), repr(float(f.max())),
                     repr(float(f.sum()))])
    _write_csv(out / "manifest.csv", ["index", "i", "j", "size", "min", "max", "sum"], rows)
    print(f"{st.count} filters of size {st.size} written to {out}")
    return 0


def cmd_gradcheck(cfg, out: Path):
    results = gradcheck.run_all(cfg["seed"])
    _write_csv(out / "gradcheck.csv", ["layer", "shape", "target", "rel_error"],
               [[r.name, "x".join(map(str, r.shape)), r.target, repr(r.rel_error)]
                for r in results])
    summary = gradcheck.summarize(results)
    for name, err in summary.items():
        print(f"{name:24s} {err:.3e}")
    worst = max(summary.values())
    ok = worst < cfg["tolerance"]
    print(f"max relative error {worst:.3e}: {'pass' if ok else 'FAIL'}")
    return 0 if ok else 2


def cmd_fit(cfg, out: Path):
    img = read_image(_need_file(cfg["image"], "image"))
    _, H, W = img.shape
    rows = []
    for sigma in cfg["sigmas"]:
        s = BasisSpec(0, sigma, cfg["k"]).size
        if s > min(H, W):
            raise ValueError(f"patch size {s} exceeds the {H}x{W} image")
        y = (H - s) // 2 if cfg["y"] is None else cfg["y"]
        x = (W - s) // 2 if cfg["x"] is None else cfg["x"]
        if not (0 <= y <= H - s and 0 <= x <= W - s):
            raise UsageError(f"patch at ({y}, {x}) of size {s} leaves the image")
        patch = img[:, y:y + s, x:x + s]
        write_image(out / f"patch_s{sigma:g}.ppm" if img.shape[0] == 3
                    else out / f"patch_s{sigma:g}.pgm", patch, 0.0, 1.0)
        for order in cfg["orders"]:
            res = fit.fit_patch(patch, sigma, order, cfg["k"], border_ignore=cfg["border"])
            rec = fit.reconstruct(res.alphas, sigma, order, cfg["k"])
            ext = "ppm" if img.shape[0] == 3 else "pgm"
            write_image(out / f"recon_N{order}_s{sigma:g}.{ext}", np.clip(rec, 0, 1), 0.0, 1.0)
            rows.append([order, repr(float(sigma)), repr(res.residual)])
            print(f"order {order} sigma {sigma:g}: residual {res.residual:.6f}")
    _write_csv(out / "fit.csv", ["order", "sigma", "residual"], rows)
    return 0


def cmd_train(cfg, out: Path):
    scale, seed = cfg["scale"], cfg["seed"]
    tr = _dataset(cfg["data"], "train", cfg["n_train"], scale, seed, cfg["data_dir"])
    ev = _dataset(cfg["data"], "test", cfg["n_eval"], scale, seed, cfg["data_dir"])
    kw = {"in_channels": tr.image_shape[0], "sigma": cfg["sigma"]}
    if cfg["arch"] == "toy":
        kw["filters"] = cfg["filters"]
    else:
        kw.update(channels=cfg["filters"], subsample_r=cfg["subsample_r"])
    if cfg["order"] is not None:
        kw["order"] = cfg["order"]
    model = models.build(cfg["arch"], tr.image_shape[-1], tr.class_count, scale,
                         conv=cfg["conv"], seed=seed, **kw)
    tc = TrainConfig(learning_rate=cfg["lr"], momentum=cfg["momentum"], epochs=cfg["epochs"],
                     lr_schedule=cfg["lr_schedule"], batch_size=cfg["batch_size"], alpha_l2=cfg["alpha_l2"],
                     sigma_lr_scale=cfg["sigma_lr_scale"], seed=seed,
                     subsample_r=cfg["subsample_r"], arch=cfg["arch"])
    model, trace = train(model, tr, tc, eval_dataset=ev)
    trace.to_csv(out / "sigma_trace.csv")
    meta = {"data": cfg["data"], "scale": scale, "seed": seed, "n_eval": cfg["n_eval"],
            "image_size": tr.image_shape[-1], "train": tc.to_dict()}
    checkpoint.save(model, out / "model.json", meta)
    last = trace.rows[-1]
    print(f"final loss {last.train_loss:.4f} accuracy {last.eval_accuracy:.4f} "
          f"sigma {[round(l.sigma, 4) for l in model.njet_layers()]}")
    return 0


def _load(cfg):
    path = _need_file(cfg["checkpoint"], "checkpoint")
    try:
        return checkpoint.load(path)
    except checkpoint.CheckpointError as e:
        raise UsageError(str(e))


def _eval_data(cfg, meta, n):
    kind = cfg["data"] or meta.get("data", "blobs")
    scale = cfg["scale"] if cfg["scale"] is not None else meta.get("scale", 1.0)
    return _dataset(kind, "test", n, scale, cfg["seed"], cfg["data_dir"])


def cmd_eval(cfg, out: Path):
    model, meta = _load(cfg)
    n = cfg["n_eval"] or meta.get("n_eval", 200)
    ds = _eval_data(cfg, meta, n)
    acc = evaluate(model, ds)
    _write_csv(out / "eval.csv", ["n", "accuracy"], [[len(ds), repr(acc)]])
    print(f"accuracy {acc:.4f} on {len(ds)} images")
    return 0


def cmd_export_filters(cfg, out: Path):
    model, _ = _load(cfg)
    rows = []
    for li, layer in enumerate(model.njet_layers()):
        f = layer.filters().filters
        for o in range(f.shape[0]):
            for c in range(f.shape[1]):
                write_image(out / f"layer{li}_out{o:02d}_in{c:02d}.pgm", f[o, c])
                rows.append([li, o, c, layer.filter_size, repr(layer.sigma),
                             repr(float(f[o, c].min())), repr(float(f[o, c].max()))])
    _write_csv(out / "filters.csv", ["layer", "out", "in", "size", "sigma", "min", "max"], rows)
    print(f"{len(rows)} filters written to {out}")
    return 0


def cmd_erf(cfg, out: Path):
    model, meta = _load(cfg)
    ds = _eval_data(cfg, meta, cfg["n"])
    x = ds.images
    upto = _spatial_depth(model, x[:1].astype(model.dtype))
    oh, ow = model.forward(x[:1].astype(model.dtype), train=False, upto=upto).shape[2:]
    loc = tuple(cfg["location"]) if cfg["location"] is not None else (oh // 2, ow // 2)
    if not (0 <= loc[0] < oh and 0 <= loc[1] < ow):
        raise UsageError(f"location {loc} outside the {oh}x{ow} output")
    m = erf_map(model, x, loc, upto=upto)
    write_image(out / "erf.pgm", m)
    H, W = m.shape
    _write_csv(out / "erf.csv", ["y", "x", "value"],
               [[y, xx, repr(float(m[y, xx]))] for y in range(H) for xx in range(W)])
    mom = second_moment(m)
    _write_csv(out / "erf_moment.csv", ["y", "x", "second_moment"], [[loc[0], loc[1], repr(mom)]])
    print(f"second moment {mom:.4f} at output location {loc}")
    return 0


COMMANDS = {"basis": cmd_basis, "gradcheck": cmd_gradcheck, "fit": cmd_fit, "train": cmd_train,
            "eval": cmd_eval, "export-filters": cmd_export_filters, "erf": cmd_erf}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            raise UsageError(parser.format_usage().strip() + "\nnjet: error: missing subcommand")
        cfg = resolve(args)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if cfg["verbose"] else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
        with threadpool_limits(limits=cfg["threads"]):
            return COMMANDS[cfg["command"]](cfg, out)
    except UsageError as e:
        print(f"njet {cfg['command']}: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - any failure past parsing is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"njet {cfg['command']}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())
