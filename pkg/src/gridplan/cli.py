"""``gridplan`` command line: parse, plan, synth, train, eval, infer, bench, plot.

Exit codes: 0 ok, 1 usage, 2 domain error, 3 I/O or codec error.
"""
import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from . import dataset as ds
from .errors import (CodecError, DomainError, GridplanError, NoRouteError, OsmParseError,
                     PublishedImportError, UsageError)
from .estimator import TrajectoryGenerator
from .experiments import intersection_dataset, overfit_dataset
from .metrics import evaluate
from .model import infer
from .osm import load_osm_graph
from .planner import Variant, build_plan_graph, estimate_heading, match_waypoint, shortest_route
from .plot import render_svg
from .scene import (PALETTE, GridSpec, ScenarioSpec, four_way_scenario, hairpin_scenario,
                    straight_scenario, three_way_scenario)

CONFIG_ENV = "GRIDPLAN_CONFIG"

STOCK = {
    "straight": straight_scenario,
    "four_way": four_way_scenario,
    "three_way": three_way_scenario,
    "hairpin": hairpin_scenario,
}


@dataclass
class RunConfig:
    horizon: int = 10
    n_modes: int = 12
    past: int = 20
    future: int = 20
    grid_resolution: float = 2.0
    grid_horizon: float = 100.0
    spacing: float = 3.0
    mse_weight: float = 1.0
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    threads: int = 1
    variant: str = "STPF"
    plan_dim: int = 128
    plan_hidden: int = 128
    scene_dim: int = 256
    traj_dim: int = 64
    gru_hidden: int = 128
    conv_channels: tuple = (8, 16, 32, 64, 64)

    def validate(self):
        for name in ("horizon", "n_modes", "past", "future", "epochs", "batch_size", "threads",
                     "plan_dim", "plan_hidden", "scene_dim", "traj_dim", "gru_hidden"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise UsageError(f"{name} must be a positive integer, got {v!r}")
        for name in ("grid_resolution", "grid_horizon", "spacing", "lr"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                raise UsageError(f"{name} must be positive, got {v!r}")
        if not isinstance(self.mse_weight, (int, float)) or self.mse_weight < 0:
            raise UsageError(f"mse_weight must be >= 0, got {self.mse_weight!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise UsageError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.variant not in Variant.__members__:
            raise UsageError(f"variant must be one of {list(Variant.__members__)}")
        if len(self.conv_channels) < 1 or any(int(c) < 1 for c in self.conv_channels):
            raise UsageError("conv_channels must be a non-empty list of positive integers")
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.grid_resolution = float(self.grid_resolution)
        self.grid_horizon = float(self.grid_horizon)
        return self

    @property
    def grid_spec(self):
        return GridSpec(self.grid_resolution, self.grid_horizon)

    def estimator(self):
        keys = {f.name for f in fields(RunConfig)} - {"spacing", "variant"}
        return TrajectoryGenerator(**{k: getattr(self, k) for k in keys}, dtype="float32")

    def to_json(self):
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return json.dumps(d, sort_keys=True)


# RunConfig fields that have a command-line flag
_FLAGS = ("horizon", "n_modes", "past", "future", "grid_resolution", "grid_horizon", "spacing",
          "mse_weight", "lr", "epochs", "batch_size", "seed", "threads", "variant")


def load_config(args):
    cfg = asdict(RunConfig())
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except ValueError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        unknown = sorted(set(doc) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(doc)
    for name in _FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            cfg[name] = v
    return RunConfig(**cfg).validate()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    common = _Parser(add_help=False)
    g = common.add_argument_group("run configuration (defaults < config file < flags)")
    g.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    g.add_argument("--horizon", type=int, help="trajectory waypoints H")
    g.add_argument("--n-modes", dest="n_modes", type=int, help="latent modes K")
    g.add_argument("--past", type=int, help="past plan rows P")
    g.add_argument("--future", type=int, help="future plan rows F")
    g.add_argument("--resolution", dest="grid_resolution", type=float,
                   help="crop resolution D in pixels per meter")
    g.add_argument("--grid-horizon", dest="grid_horizon", type=float,
                   help="crop half-extent L_max in meters")
    g.add_argument("--spacing", type=float, help="waypoint spacing in meters")
    g.add_argument("--mse-weight", dest="mse_weight", type=float, help="MSE term weight")
    g.add_argument("--lr", type=float, help="Adam learning rate")
    g.add_argument("--epochs", type=int, help="training epochs")
    g.add_argument("--batch-size", dest="batch_size", type=int, help="minibatch size")
    g.add_argument("--seed", type=int, help="random seed")
    g.add_argument("--threads", type=int, help="torch intra-op threads (default 1)")
    g.add_argument("--variant", choices=[v.value for v in Variant], help="plan feature variant")

    p = _Parser(prog="gridplan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("parse", parents=[common], help="OSM XML to road-graph JSON")
    s.add_argument("--osm", required=True, help="OSM XML file")
    s.add_argument("--ignore-oneway", action="store_true", help="treat one-way roads as two-way")

    s = sub.add_parser("plan", parents=[common], help="plan-graph JSON for a route and a pose")
    s.add_argument("--osm", required=True, help="OSM XML file")
    s.add_argument("--src", required=True, type=int, help="route start node id")
    s.add_argument("--dst", required=True, type=int, help="route end node id")
    s.add_argument("--ego", required=True,
                   help="'x,y,theta' GPS fix in local meters; theta is accepted but the "
                        "plan heading comes from the route")
    s.add_argument("--ignore-oneway", action="store_true", help="treat one-way roads as two-way")

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--scenario", action="append", default=[],
                   help="ScenarioSpec JSON file (repeatable)")
    s.add_argument("--stock", action="append", default=[],
                   choices=sorted(STOCK) + ["overfit", "intersections"],
                   help="built-in scenario or experiment set (repeatable)")
    s.add_argument("--n", type=int, default=16, help="samples per scenario (default 16)")
    s.add_argument("--split", choices=["train", "test"], default="train")
    s.add_argument("--out", required=True, help="output .tnds file")

    s = sub.add_parser("train", parents=[common], help="train on a dataset")
    s.add_argument("--data", required=True, help="training .tnds file")
    s.add_argument("--out", required=True, help="checkpoint file to write")
    s.add_argument("--log", help="per-epoch loss CSV")

    s = sub.add_parser("eval", parents=[common], help="metrics report for a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help=".tnds file")
    s.add_argument("--csv", help="also write the report as CSV")
    s.add_argument("--label", default="model", help="row label (default 'model')")

    s = sub.add_parser("infer", parents=[common], help="predict trajectories")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help=".tnds file")
    s.add_argument("--index", type=int, help="only this sample")
    s.add_argument("--out", help="trajectory JSON (default stdout)")
    s.add_argument("--svg", help="also render the first predicted sample to this SVG")

    s = sub.add_parser("bench", parents=[common], help="single-sample inference latency")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, default=1000, help="timed inferences (default 1000)")

    s = sub.add_parser("plot", parents=[common], help="render a sample as SVG")
    s.add_argument("--sample", required=True, help="PATH[:INDEX] into a .tnds file")
    s.add_argument("--pred", help="trajectory JSON written by 'infer'")
    s.add_argument("--out", required=True, help="SVG file to write")
    return p


# ---------------------------------------------------------------------------
# subcommands

def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load_estimator(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return TrajectoryGenerator.load(data)


def cmd_parse(args, cfg):
    g = load_osm_graph(args.osm, ignore_oneway=args.ignore_oneway)
    sys.stdout.write(g.to_json() + "\n")


def _parse_ego(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        vals = []
    if len(vals) not in (2, 3):
        raise UsageError(f"--ego expects 'x,y,theta', got {text!r}")
    return vals


def cmd_plan(args, cfg):
    ego = _parse_ego(args.ego)
    g = load_osm_graph(args.osm, ignore_oneway=args.ignore_oneway)
    route = shortest_route(g, args.src, args.dst)
    idx = match_waypoint(route, g, ego[:2])
    heading = estimate_heading(route, g, idx)
    plan = build_plan_graph(route, g, idx, heading, cfg.variant, cfg.past, cfg.future)
    sys.stdout.write(plan.to_json() + "\n")


def cmd_synth(args, cfg):
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    if not args.scenario and not args.stock:
        raise UsageError("give at least one --scenario or --stock")
    specs = [ScenarioSpec.from_json(Path(p).read_text()) for p in args.scenario]
    samples, skipped = [], 0
    for name in args.stock:
        if name == "overfit":
            samples += overfit_dataset(cfg.seed, cfg.grid_spec, cfg.variant).samples
        elif name == "intersections":
            samples += intersection_dataset(args.n, cfg.seed, cfg.grid_spec, cfg.variant).samples
        else:
            specs.append(STOCK[name]())
    if specs:
        part = ds.generate_synthetic(specs, args.n, cfg.seed, cfg.variant, cfg.past, cfg.future,
                                     cfg.horizon, cfg.spacing, cfg.grid_spec, split=args.split)
        samples += part.samples
        skipped = part.provenance["skipped"]
    data = ds.Dataset(samples, args.split, {"synthetic_seed": cfg.seed, "skipped": skipped})
    ds.save(data, args.out)
    print(f"wrote {len(data)} samples to {args.out} (skipped {skipped})", file=sys.stderr)


def cmd_train(args, cfg):
    data = ds.load(args.data)
    est = cfg.estimator()
    rows = []

    def progress(epoch, model, row):
        rows.append(row)
        if epoch == 1 or epoch % 50 == 0 or epoch == cfg.epochs:
            print(f"epoch {epoch}: total {row['total']:.4f} recon {row['recon']:.4f} "
                  f"kl {row['kl']:.4f} mse {row['mse']:.4f}", file=sys.stderr)

    est.fit(data, callback=progress)
    est.save(args.out)
    if args.log:
        with open(args.log, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "total", "recon", "kl", "mse"))
            for r in rows:
                w.writerow((r["epoch"],) + tuple(f"{r[k]:.9g}" for k in ("total", "recon", "kl", "mse")))


def cmd_eval(args, cfg):
    est = _load_estimator(args.checkpoint)
    est.threads = cfg.threads
    rep = evaluate(est, ds.load(args.data))
    sys.stdout.write(rep.to_table(args.label))
    if args.csv:
        Path(args.csv).write_text(rep.to_csv(args.label))


def _predictions_json(indices, preds, modes):
    items = [{"index": int(i), "mode": int(m),
              "trajectory": [[round(float(x), 6), round(float(y), 6)] for x, y in p]}
             for i, p, m in zip(indices, preds, modes)]
    return json.dumps({"samples": items}) + "\n"


def cmd_infer(args, cfg):
    est = _load_estimator(args.checkpoint)
    est.threads = cfg.threads
    data = ds.load(args.data)
    indices = list(range(len(data)))
    if args.index is not None:
        if not 0 <= args.index < len(data):
            raise DomainError(f"sample index {args.index} out of range (0..{len(data) - 1})")
        indices = [args.index]
    subset = [data[i] for i in indices]
    if not subset:
        raise DomainError("dataset is empty")
    preds, modes = est.predict(subset), est.predict_mode(subset)
    _write(args.out, _predictions_json(indices, preds, modes))
    if args.svg:
        Path(args.svg).write_text(render_svg(subset[0], preds[0]))


def cmd_bench(args, cfg):
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    est = _load_estimator(args.checkpoint)
    mc = est.model_.config
    torch.set_num_threads(cfg.threads)
    rng = np.random.default_rng(cfg.seed)
    dtype = next(est.model_.parameters()).dtype
    plan = torch.zeros(1, mc.plan_rows, 3, dtype=dtype)
    plan[0, :, 0] = torch.linspace(-50, 50, mc.plan_rows, dtype=dtype)
    plan[0, : mc.past, 2] = 1.0
    plan[0, mc.past:, 2] = 2.0
    scene = torch.as_tensor(PALETTE[rng.integers(0, len(PALETTE), (1, mc.side, mc.side))], dtype=dtype)
    for _ in range(min(5, args.n)):
        infer(est.model_, plan, scene)
    times = []
    for _ in range(args.n):
        t = time.perf_counter()
        infer(est.model_, plan, scene)
        times.append((time.perf_counter() - t) * 1000.0)
    times = np.asarray(times)
    print(f"samples      {args.n}")
    print(f"mean_ms      {times.mean():.3f}")
    print(f"p50_ms       {np.percentile(times, 50):.3f}")
    print(f"p99_ms       {np.percentile(times, 99):.3f}")
    print(f"parameters   {est.model_.n_parameters()}")


def _sample_ref(text):
    path, _, idx = text.partition(":")
    if idx and Path(text).exists():   # a path that happens to contain ':'
        return text, 0
    try:
        return path, int(idx) if idx else 0
    except ValueError:
        raise UsageError(f"--sample expects PATH[:INDEX], got {text!r}") from None


def cmd_plot(args, cfg):
    path, index = _sample_ref(args.sample)
    data = ds.load(path)
    if not 0 <= index < len(data):
        raise DomainError(f"sample index {index} out of range")
    pred = None
    if args.pred:
        doc = json.loads(Path(args.pred).read_text())
        items = doc.get("samples", []) if isinstance(doc, dict) else []
        match = [it for it in items if it.get("index") == index] or items[:1]
        if not match:
            raise DomainError(f"{args.pred} holds no trajectory")
        pred = np.asarray(match[0]["trajectory"], dtype=float)
    Path(args.out).write_text(render_svg(data[index], pred))


COMMANDS = {"parse": cmd_parse, "plan": cmd_plan, "synth": cmd_synth, "train": cmd_train,
            "eval": cmd_eval, "infer": cmd_infer, "bench": cmd_bench, "plot": cmd_plot}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args)
        print(cfg.to_json(), file=sys.stderr)
        torch.set_num_threads(cfg.threads)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"gridplan: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, CodecError, OsmParseError, PublishedImportError) as exc:
        print(f"gridplan: I/O error: {exc}", file=sys.stderr)
        return 3
    except NoRouteError as exc:
        print(f"gridplan: no route: {exc}", file=sys.stderr)
        return 2
    except GridplanError as exc:
        print(f"gridplan: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
