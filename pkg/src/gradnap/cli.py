"""Command-line interface: gen-data, train-toy, gradnap, featviz, cluster, report, run-all.

Exit codes: 0 ok, 2 usage/config, 3 data, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, clustering, data, export, model, netcore, profiles, respviz
from .errors import ConfigError, GradNAPError
from .runconfig import derive_seed, load_config

log = logging.getLogger("gradnap")


class StageError(Exception):
    def __init__(self, stage: str, error: GradNAPError):
        super().__init__(f"stage {stage!r}: {error}")
        self.stage = stage
        self.error = error


class Manifest:
    """Run record: config hash, seeds, versions, input digests, timings, counters, output digests."""

    def __init__(self, command: str):
        self.doc = {
            "command": command,
            "config_hash": None,
            "seeds": {},
            "versions": {"gradnap": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
            "inputs": {},
            "timings": {},
            "counters": {},
            "stages_completed": [],
            "hyperparameters": {},
            "outputs": {},
        }

    def add_input(self, path) -> None:
        path = Path(path)
        files = [path] if path.is_file() else sorted(p for p in path.rglob("*") if p.is_file())
        for p in files:
            self.doc["inputs"][str(p)] = export.sha256_file(p)

    @contextlib.contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except GradNAPError as e:
            self.doc["failed_stage"] = name
            raise StageError(name, e) from e
        self.doc["timings"][name] = round(time.perf_counter() - t0, 4)
        self.doc["stages_completed"].append(name)

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        self.doc["outputs"] = export.digest_tree(out_dir)
        export.write_json(out_dir / "manifest.json", self.doc)


def fresh_dir(path, flag: str = "--out") -> Path:
    path = Path(path)
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        raise ConfigError(f"{flag}: {path} exists and is not an empty directory")
    path.mkdir(parents=True, exist_ok=True)
    return path


def existing(path, flag: str, kind: str = "any") -> Path:
    path = Path(path)
    ok = path.is_dir() if kind == "dir" else path.is_file() if kind == "file" else path.exists()
    if not ok:
        raise ConfigError(f"{flag}: {path} does not exist" + (f" or is not a {kind}" if kind != "any" else ""))
    return path


def worker_count(flag: int | None, configured: int = 1) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("GRADNAP_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"GRADNAP_WORKERS={env!r} is not an integer") from None
    return max(1, configured)


def resolve_arch(weights_path, arch_path=None) -> netcore.ArchitectureSpec:
    """--arch if given, else the sidecar written by train-toy, else shapes from the weight file."""
    if arch_path is not None:
        return model.load_arch(existing(arch_path, "--arch", "file"))
    sidecar = Path(str(weights_path) + ".arch")
    if sidecar.is_file():
        return model.load_arch(sidecar)
    return model.arch_from_weight_file(weights_path)


# -- stage implementations (shared by the subcommands and run-all) --------------

def stage_gen_data(cfg, out_dir) -> data.Dataset:
    d = cfg.data
    ds = data.generate(d.classes, d.examples, d.bins, d.frames, d.noise_std,
                       derive_seed(cfg.seed, "data"), d.silence_prob, d.silence_len)
    data.save_dataset(out_dir, ds)
    return ds


def stage_train(arch, ds, train_cfg, weights_path) -> netcore.ModelWeights:
    history = []
    weights = model.train_toy(arch, ds, train_cfg, history)
    model.save_weights(weights_path, weights, arch)
    Path(str(weights_path) + ".arch").write_text(model.format_arch(arch))
    with open(str(weights_path) + ".history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerows((i, export.fmt(v)) for i, v in enumerate(history))
    return weights


def stage_gradnap(arch, weights, ds, out_dir, group_by="predicted", window=None, mask="absmax",
                  reduction="sum", sensitivity="logit", include_silence=False, group_map=None,
                  workers=1) -> profiles.PipelineResult:
    res = profiles.run_pipeline(
        arch, weights, ds,
        grouping="by_predicted" if group_by == "predicted" else "by_true_label",
        window_input=window or None, include_silence=include_silence, group_map=group_map,
        reduction=reduction, mask_mode=mask, sensitivity_mode=sensitivity, workers=workers,
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for naps in res.gradnaps.values():
        for nap in naps:
            export.save_gradnap(out_dir, nap, res.skipped)
    shapes = [[arch.channels(l), 2 * h + 1] for l, h in enumerate(profiles.half_widths(arch, res.window_input))]
    export.write_json(out_dir / "index.json", {
        "groups": res.groups,
        "layers": arch.num_layers + 1,
        "shapes": shapes,
        "grouping": group_by,
        "window_input": res.window_input,
        "occurrences": len(res.occurrences),
        "skipped": res.skipped,
        "empty_groups": res.empty_groups,
        "degenerate": [[g, l] for g, l in res.degenerate],
        "options": {"mask": mask, "reduction": reduction, "sensitivity": sensitivity,
                    "include_silence": include_silence},
        "files": {g: [export.gradnap_stem(g, l) + ".csv" for l in range(arch.num_layers + 1)]
                  for g in res.groups},
    })
    return res


def stage_featviz(arch, weights, values, layer, seed, out_dir, k=5) -> respviz.OptimalInput:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if values.shape[0] != arch.channels(layer):
        raise ConfigError(f"GradNAP has {values.shape[0]} rows, layer {layer} has {arch.channels(layer)} channels")
    r = respviz.responsiveness(values)
    top = respviz.top_responsive(r, min(k, len(r)))
    opt = respviz.optimize_input(arch, weights, layer, top, seed=seed)
    data.write_spec(out_dir / "optimal_input.spec", opt.values)
    with open(out_dir / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        w.writerows((i, export.fmt(v)) for i, v in enumerate(opt.losses))
    export.svg_heatmap(out_dir / "optimal_input.svg", opt.values, f"optimal input, layer {layer}")
    ap = respviz.action_potentials(values, top)
    write_action_potentials(out_dir / "action_potentials.csv", ap)
    export.svg_lines(out_dir / "action_potentials.svg", ap.offsets, ap.series,
                     [n for n, _ in ap.highlighted], f"action potentials, layer {layer}")
    export.write_json(out_dir / "featviz.json", {
        "layer": layer,
        "neurons": [[n, s] for n, s in opt.neurons],
        "responsiveness": [float(v) for v in r],
        "hyperparameters": opt.hyperparameters,
        "initial_loss": opt.losses[0],
        "final_loss": opt.losses[-1],
        "argmax_bin": int(np.argmax(opt.values.mean(axis=1))),
    })
    return opt


def write_action_potentials(path, ap: respviz.ActionPotentials) -> None:
    flagged = dict(ap.highlighted)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel", "highlight", "sign", *[str(int(o)) for o in ap.offsets]])
        for c, row in enumerate(ap.series):
            w.writerow([c, int(c in flagged), flagged.get(c, 0), *[export.fmt(v) for v in row]])


def read_action_potentials(path) -> respviz.ActionPotentials:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    offsets = np.array([int(v) for v in rows[0][3:]])
    series = np.array([[float(v) for v in r[3:]] for r in rows[1:]])
    flagged = [(int(r[0]), int(r[2])) for r in rows[1:] if r[1] == "1"]
    return respviz.ActionPotentials(offsets, series, flagged)


def read_gradnap_dir(directory):
    """Load a gradnap output directory. Returns (gradnaps by group, layer count, missing files)."""
    directory = Path(directory)
    index_path = directory / "index.json"
    if not index_path.is_file():
        raise ConfigError(f"--gradnaps: {directory} has no index.json")
    index = json.loads(index_path.read_text())
    gradnaps, missing = {}, []
    for g in index["groups"]:
        layers = []
        for l in range(index["layers"]):
            p = directory / (export.gradnap_stem(g, l) + ".csv")
            if p.is_file():
                layers.append(export.load_gradnap(p))
            else:
                layers.append(None)
                missing.append(p.name)
        gradnaps[g] = layers
    return gradnaps, index, missing


def stage_cluster(gradnaps, out_dir, normalize=False):
    """Silhouette report, dendrograms and memberships for every layer available for all groups."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = list(gradnaps)
    if len(groups) < 2:
        export.write_json(out_dir / "silhouette.json", {"skipped": "fewer than two groups", "layers": []})
        return None, []
    n_layers = max(len(v) for v in gradnaps.values())
    complete = [l for l in range(n_layers) if all(gradnaps[g][l] is not None for g in groups)]
    missing_layers = [l for l in range(n_layers) if l not in complete]
    layers = [clustering.summarize_layer(l, [gradnaps[g][l].values for g in groups], groups, normalize)
              for l in complete]
    report = clustering.SilhouetteReport(layers)
    with open(out_dir / "silhouette.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "percentile", "threshold", "k", "score"])
        for l, r in report.rows():
            w.writerow([l, r.percentile, export.fmt(r.threshold), r.clusters,
                        "" if r.score is None else export.fmt(r.score)])
    doc = report.to_dict()
    doc["groups"] = groups
    doc["missing_layers"] = missing_layers
    export.write_json(out_dir / "silhouette.json", doc)
    for ls in layers:
        (out_dir / f"dendrogram_L{ls.layer}.nwk").write_text(clustering.newick(ls.tree, groups) + "\n")
        with open(out_dir / f"clusters_L{ls.layer}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group", *[f"p{p}" for p in clustering.PERCENTILES]])
            for i, g in enumerate(groups):
                w.writerow([g, *[int(a[i]) for a in ls.assignments]])
    if layers:
        curves = np.array([[np.nan if r.score is None else r.score for r in ls.rows] for ls in layers])
        export.svg_lines(out_dir / "silhouette.svg", np.array(clustering.PERCENTILES), curves,
                         title="silhouette score per layer vs distance percentile")
    return report, missing_layers


def stage_report(gradnap_dir, out_dir, featviz_dirs=(), compare=None, k=5, normalize=False):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gradnaps, index, missing = read_gradnap_dir(gradnap_dir)
    report, missing_layers = stage_cluster(gradnaps, out_dir / "clustering", normalize)
    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)
    for g, layers in gradnaps.items():
        for nap in layers:
            if nap is None:
                continue
            stem = export.gradnap_stem(g, nap.layer)
            if nap.layer == 0:
                export.svg_heatmap(plots / f"{stem}_input.svg", nap.values, f"input-layer GradNAP: {g}")
                continue
            ap = respviz.action_potentials(nap.values, k=k)
            write_action_potentials(plots / f"{stem}_action_potentials.csv", ap)
            export.svg_lines(plots / f"{stem}_action_potentials.svg", ap.offsets, ap.series,
                             [n for n, _ in ap.highlighted], f"action potentials: {g}, layer {nap.layer}")
    for fdir in featviz_dirs:
        fdir = Path(fdir)
        spec_file = fdir / "optimal_input.spec"
        if spec_file.is_file():
            export.svg_heatmap(plots / f"{export.safe_name(fdir.name)}_optimal_input.svg",
                               data.read_spec(spec_file), f"optimal input: {fdir.name}")
    summary = {
        "groups": list(gradnaps),
        "missing_files": missing,
        "missing_layers": missing_layers,
        "degenerate": index.get("degenerate", []),
        "skipped_occurrences": index.get("skipped", 0),
        "empty_groups": index.get("empty_groups", []),
    }
    if compare:
        reports = {"primary": report} if report else {}
        for name, cdir in compare.items():
            other, _, _ = read_gradnap_dir(cdir)
            rep = clustering.layer_silhouette_summary(other, normalize)
            if rep is not None:
                reports[name] = rep
        table = clustering.compare_schemes(reports)
        with open(out_dir / "scheme_comparison.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            names = list(reports)
            w.writerow(["layer", *names])
            for row in table:
                w.writerow([row["layer"], *["" if row[n] is None else export.fmt(row[n]) for n in names]])
        summary["schemes"] = list(reports)
    if index.get("degenerate"):
        summary["note"] = "degenerate GradNAPs (all-zero gradient mean) present"
    if len(gradnaps) == 1:
        summary["note"] = "single group: GradNAPs equal the self-baseline and are all zero"
    export.write_json(out_dir / "report.json", summary)
    return report, summary


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args, manifest):
    out = fresh_dir(args.out)
    cfg = load_config(existing(args.config, "--config", "file") if args.config else None)
    if args.seed is not None:
        cfg.seed = args.seed
    manifest.doc["config_hash"] = cfg.digest
    manifest.doc["seeds"] = {"master": cfg.seed, "data": derive_seed(cfg.seed, "data")}
    with manifest.stage("gen-data"):
        ds = stage_gen_data(cfg, out)
    manifest.doc["counters"]["examples"] = len(ds.examples)
    return out


def cmd_train_toy(args, manifest):
    arch_path = existing(args.arch, "--arch", "file")
    data_path = existing(args.data, "--data", "dir")
    out = Path(args.out)
    if out.exists():
        raise ConfigError(f"--out: {out} already exists")
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest.add_input(arch_path)
    manifest.add_input(data_path)
    with manifest.stage("load"):
        arch = model.load_arch(arch_path)
        ds = data.load_dataset(data_path)
    cfg = model.TrainConfig(args.epochs, args.batch_size, args.lr, args.seed)
    manifest.doc["seeds"] = {"train": args.seed}
    manifest.doc["hyperparameters"]["train"] = vars(cfg)
    with manifest.stage("train"):
        weights = stage_train(arch, ds, cfg, out)
        acc = model.frame_accuracy(arch, weights, ds)
    manifest.doc["counters"]["frame_accuracy"] = acc
    print(f"frame accuracy on training set: {acc:.4f}")
    files = [out, Path(str(out) + ".arch"), Path(str(out) + ".history.csv")]
    manifest.doc["outputs"] = {str(p): export.sha256_file(p) for p in files}
    export.write_json(str(out) + ".manifest.json", manifest.doc)
    return None


def cmd_gradnap(args, manifest):
    weights_path = existing(args.weights, "--weights", "file")
    data_path = existing(args.data, "--data", "dir")
    out = fresh_dir(args.out)
    manifest.add_input(weights_path)
    manifest.add_input(data_path)
    group_map = None
    if args.group_map:
        group_map = json.loads(existing(args.group_map, "--group-map", "file").read_text())
    with manifest.stage("load"):
        arch = resolve_arch(weights_path, args.arch)
        weights = model.load_weights(weights_path, arch)
        ds = data.load_dataset(data_path)
    with manifest.stage("gradnap"):
        res = stage_gradnap(arch, weights, ds, out / "gradnaps", args.group_by, args.window, args.mask,
                            args.reduction, args.sensitivity, args.include_silence, group_map,
                            worker_count(args.workers))
    manifest.doc["counters"].update(_counters(res))
    _warn_summary(res)
    return out


def cmd_featviz(args, manifest):
    weights_path = existing(args.weights, "--weights", "file")
    nap_path = existing(args.gradnap, "--gradnap", "file")
    out = fresh_dir(args.out)
    manifest.add_input(weights_path)
    manifest.add_input(nap_path)
    with manifest.stage("load"):
        arch = resolve_arch(weights_path, args.arch)
        weights = model.load_weights(weights_path, arch)
        nap = export.load_gradnap(nap_path)
        if nap.layer >= 0 and nap.layer != args.layer:
            raise ConfigError(f"--gradnap is for layer {nap.layer}, --layer is {args.layer}")
        if not 1 <= args.layer <= arch.num_layers:
            raise ConfigError(f"--layer {args.layer} outside 1..{arch.num_layers}")
    manifest.doc["seeds"] = {"featviz": args.seed}
    with manifest.stage("featviz"):
        opt = stage_featviz(arch, weights, nap.values, args.layer, args.seed, out, args.top_k)
    manifest.doc["hyperparameters"]["featviz"] = opt.hyperparameters
    print(f"loss {opt.losses[0]:.6g} -> {opt.losses[-1]:.6g}; neurons {opt.neurons}")
    return out


def cmd_cluster(args, manifest):
    src = existing(args.gradnaps, "--gradnaps", "dir")
    out = fresh_dir(args.out)
    manifest.add_input(src)
    with manifest.stage("cluster"):
        gradnaps, _, missing = read_gradnap_dir(src)
        _, missing_layers = stage_cluster(gradnaps, out, args.normalize)
    if missing_layers:
        print(f"layers missing for some groups (not clustered): {missing_layers}")
    return out


def cmd_report(args, manifest):
    src = existing(args.gradnaps, "--gradnaps", "dir")
    out = fresh_dir(args.out)
    manifest.add_input(src)
    compare = {}
    for item in args.compare or []:
        name, _, path = item.partition("=")
        if not path:
            raise ConfigError(f"--compare expects NAME=DIR, got {item!r}")
        compare[name] = existing(path, "--compare", "dir")
    featviz_dirs = [existing(p, "--featviz", "dir") for p in args.featviz or []]
    with manifest.stage("report"):
        _, summary = stage_report(src, out, featviz_dirs, compare, args.top_k, args.normalize)
    if summary["missing_layers"]:
        print(f"report generated without layers {summary['missing_layers']} (missing inputs)")
    return out


def cmd_run_all(args, manifest):
    cfg = load_config(existing(args.config, "--config", "file") if args.config else None)
    out = fresh_dir(args.out)
    (out / "config.ini").write_text(cfg.text)
    workers = worker_count(args.workers, cfg.workers)
    manifest.doc["config_hash"] = cfg.digest
    manifest.doc["seeds"] = {"master": cfg.seed, "data": derive_seed(cfg.seed, "data"),
                             "train": cfg.train.seed}
    manifest.doc["hyperparameters"]["train"] = vars(cfg.train)
    if args.config:
        manifest.add_input(args.config)
    with manifest.stage("gen-data"):
        stage_gen_data(cfg, out / "data")
        ds = data.load_dataset(out / "data")
    with manifest.stage("train"):
        (out / "model").mkdir()
        weights = stage_train(cfg.arch, ds, cfg.train, out / "model" / "weights.gnw")
        acc = model.frame_accuracy(cfg.arch, weights, ds)
    manifest.doc["counters"]["frame_accuracy"] = acc
    g = cfg.gradnap
    with manifest.stage("gradnap"):
        res = stage_gradnap(cfg.arch, weights, ds, out / "gradnap", g.group_by, g.window, g.mask,
                            g.reduction, g.sensitivity, g.include_silence, None, workers)
        scheme_dirs = {}
        for name, mapping in cfg.schemes.items():
            d = out / f"gradnap_{export.safe_name(name)}"
            stage_gradnap(cfg.arch, weights, ds, d, g.group_by, g.window, g.mask, g.reduction,
                          g.sensitivity, g.include_silence, mapping, workers)
            scheme_dirs[name] = d
    manifest.doc["counters"].update(_counters(res))
    featviz_dirs = []
    with manifest.stage("featviz"):
        hyper = {}
        for group, naps in res.gradnaps.items():
            for layer in cfg.featviz_layers:
                key = f"{export.safe_name(group)}_L{layer}"
                seed = derive_seed(cfg.seed, f"featviz:{group}:{layer}")
                manifest.doc["seeds"][f"featviz:{key}"] = seed
                d = out / "featviz" / key
                opt = stage_featviz(cfg.arch, weights, naps[layer].values, layer, seed, d, cfg.top_k)
                hyper[key] = opt.hyperparameters
                featviz_dirs.append(d)
        manifest.doc["hyperparameters"]["featviz"] = hyper
    with manifest.stage("report"):
        stage_report(out / "gradnap", out / "report", featviz_dirs, scheme_dirs, cfg.top_k)
    print(f"run complete: {out} (frame accuracy {acc:.4f}, {len(res.groups)} groups)")
    return out


def _counters(res: profiles.PipelineResult) -> dict:
    return {
        "occurrences": len(res.occurrences),
        "skipped_occurrences": res.skipped,
        "empty_groups": len(res.empty_groups),
        "degenerate_gradnaps": len(res.degenerate),
    }


def _warn_summary(res: profiles.PipelineResult) -> None:
    parts = []
    if res.skipped:
        parts.append(f"{res.skipped} occurrence(s) skipped at sequence boundaries")
    if res.empty_groups:
        parts.append(f"groups without occurrences: {', '.join(res.empty_groups)}")
    if res.degenerate:
        parts.append(f"{len(res.degenerate)} degenerate GradNAP(s)")
    print("warnings: " + ("; ".join(parts) if parts else "none"))


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gradnap", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="generate a synthetic dataset from a config")
    s.add_argument("--config", help="experiment config (default: bundled toy config)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="override the master seed")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train-toy", help="train a toy model on a dataset")
    s.add_argument("--arch", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="weight file to write")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=40)
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--lr", type=float, default=0.03)
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("gradnap", help="compute GradNAPs for every group and layer")
    s.add_argument("--weights", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--arch")
    s.add_argument("--out", required=True)
    s.add_argument("--group-by", choices=["predicted", "true"], default="predicted")
    s.add_argument("--group-map", help="JSON object mapping class names to group names")
    s.add_argument("--window", type=int, default=0, help="input-frame window (0: receptive field)")
    s.add_argument("--mask", choices=profiles.MASK_MODES, default="absmax")
    s.add_argument("--reduction", choices=profiles.REDUCTIONS, default="sum")
    s.add_argument("--sensitivity", choices=["logit", "softmax"], default="logit")
    s.add_argument("--include-silence", action="store_true")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_gradnap)

    s = sub.add_parser("featviz", help="optimal input for the most responsive neurons of a layer")
    s.add_argument("--weights", required=True)
    s.add_argument("--layer", type=int, required=True)
    s.add_argument("--gradnap", required=True, help="GradNAP CSV for that layer")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--arch")
    s.add_argument("--top-k", type=int, default=5)
    s.set_defaults(func=cmd_featviz)

    s = sub.add_parser("cluster", help="per-layer clustering and silhouette report")
    s.add_argument("--gradnaps", required=True, help="gradnap output directory (with index.json)")
    s.add_argument("--out", required=True)
    s.add_argument("--normalize", action="store_true", help="divide distances by sqrt(dimension)")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("report", help="clustering plus plots for a gradnap directory")
    s.add_argument("--gradnaps", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--featviz", nargs="*", help="featviz output directories to render")
    s.add_argument("--compare", nargs="*", metavar="NAME=DIR", help="other grouping schemes")
    s.add_argument("--top-k", type=int, default=5)
    s.add_argument("--normalize", action="store_true")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run-all", help="generate, train, gradnap, featviz and report in one run")
    s.add_argument("--config", help="experiment config (default: bundled toy config)")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_run_all)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    manifest = Manifest(args.command)
    out = None
    try:
        out = args.func(args, manifest)
    except StageError as e:
        print(f"gradnap: error in stage {e.stage!r}: {e.error}", file=sys.stderr)
        target = getattr(args, "out", None)
        if target and Path(target).is_dir():
            manifest.write(target)
        return e.error.exit_code
    except GradNAPError as e:
        print(f"gradnap: error: {e}", file=sys.stderr)
        return e.exit_code
    if out is not None:
        manifest.write(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
