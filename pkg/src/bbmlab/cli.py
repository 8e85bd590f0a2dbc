"""``bbmlab`` command line: one subcommand per experiment or oracle battery.

Exit codes: 0 success, 2 configuration error, 3 acceptance failure under
``--assert``, 4 resource guard (particle limit or memory).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import sys

from bbmlab import __version__
from bbmlab._layout import END_KIND_NAMES
from bbmlab.analytic import centering
from bbmlab.checkpoint import load_checkpoint, save_checkpoint
from bbmlab.config import SCHEMAS, SUBCOMMANDS, parse_config
from bbmlab.engine import PruneConfig, RunConfig, Simulation, format_id
from bbmlab.errors import ConfigError, ParticleLimitExceeded
from bbmlab.lab.checks import bkr_campaign, bridge_battery, moment_battery
from bbmlab.lab.experiments import (
    exp_decorrelation,
    exp_early_branching,
    exp_ergodic,
    exp_localization,
    exp_right_tail,
)
from bbmlab.lab.report import ExperimentReport, atomic_write, format_value
from bbmlab.observables import derivative_martingale_from
from bbmlab.parallel import map_trials
from bbmlab.rng import RngStreamKey

log = logging.getLogger("bbmlab")

EXIT_OK, EXIT_CONFIG, EXIT_STATISTICAL, EXIT_RESOURCE = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bbmlab", description="Branching Brownian motion experiments.")
    p.add_argument("--version", action="version", version=f"bbmlab {__version__}")
    sub = p.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    sub.required = True
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", dest="_config", metavar="PATH")
        sp.add_argument("--seed", default=argparse.SUPPRESS, metavar="U64")
        sp.add_argument("--threads", default=argparse.SUPPRESS, metavar="N")
        sp.add_argument("--out", default=argparse.SUPPRESS, metavar="DIR")
        sp.add_argument("--assert", dest="assert", action="store_const", const="true",
                        default=argparse.SUPPRESS)
        for key in SCHEMAS[name]:
            flags = [f"--{key.name}"]
            if "_" in key.name:
                flags.append(f"--{key.name.replace('_', '-')}")
            sp.add_argument(*flags, dest=key.name, default=argparse.SUPPRESS, metavar=key.kind.upper())
    return p


# subcommand runners: (config, root stream) -> ExperimentReport

def _simulate(cfg: dict, key: RngStreamKey) -> ExperimentReport:
    prune = PruneConfig(cfg["prune"], cfg["A"], cfg["L"], cfg["N_max"])
    snaps = tuple(sorted(set(cfg["snapshots"]) | {cfg["T"]}))
    ckpt_wanted = cfg["checkpoint"] is not None or cfg["resume"] is not None
    if ckpt_wanted and cfg["trials"] != 1:
        raise ConfigError("checkpoint and resume need trials = 1")
    if cfg["checkpoint_at"] is not None and cfg["checkpoint"] is None:
        raise ConfigError("checkpoint_at needs checkpoint")

    def config_for(k: RngStreamKey) -> RunConfig:
        return RunConfig(cfg["T"], cfg["mode"], cfg["dt"], snaps, prune, k,
                         cfg["hard_limit"], cfg["genealogy"])

    def finish(i: int, sim: Simulation):
        res = sim.finish()
        rows = []
        for t, s in res.snapshots.items():
            n = len(s)
            mx = float(s.positions.max()) if n else None
            off = mx - centering(t) if n and t > 0 else None
            rows.append([i, t, n, mx, off, derivative_martingale_from(s.positions, t)])
        gen_rows = []
        if res.genealogy is not None:
            nodes = res.genealogy.nodes
            ids = [format_id(u) for u in res.genealogy.ids()]
            for k, r in enumerate(nodes.tolist()):
                parent, _, bt, bx, et, ex, _, kind = r
                gen_rows.append([i, ids[k], ids[parent] if parent >= 0 else "", bt, bx, et, ex,
                                 END_KIND_NAMES[kind]])
        return rows, gen_rows, res.stats

    if cfg["resume"] is not None:
        ck = load_checkpoint(cfg["resume"])
        if ck.config.T != cfg["T"]:
            raise ConfigError(f"T = {cfg['T']} differs from the checkpoint's T = {ck.config.T}")
        # the checkpoint fixes everything about the run except where outputs go
        cfg["genealogy"] = ck.config.record_genealogy
        results = [finish(0, ck.resume())]
        key = ck.config.root_stream
    else:
        keys = key.child(0)

        def one(i: int, scratch: dict):
            sim = Simulation(config_for(keys.child(i)))
            if cfg["checkpoint"] is not None:
                sim.run_until(cfg["checkpoint_at"] if cfg["checkpoint_at"] is not None else cfg["T"] / 2)
                save_checkpoint(cfg["checkpoint"], sim)
            return finish(i, sim)

        results = map_trials(one, cfg["trials"], cfg["threads"])
    rows = [r for res in results for r in res[0]]
    extra = {}
    if cfg["genealogy"]:
        extra["genealogy"] = (["trial", "id", "parent_id", "birth_t", "birth_x", "end_t", "end_x",
                               "end_kind"], [r for res in results for r in res[1]])
    stats = [res[2] for res in results]
    summary = {"trials": len(results),
               "branch_events": sum(s.branch_events for s in stats),
               "killed": sum(s.killed for s in stats)}
    config = {k.name: cfg[k.name] for k in SCHEMAS["simulate"]}
    config.update(seed=key.trial_seed)
    cols = ["trial", "time", "n_alive", "max_position", "max_offset", "derivative_martingale"]
    return ExperimentReport("simulate", cols, rows, summary, config, [], None, extra)


def _ergodic(cfg, key):
    return exp_ergodic(cfg["T"], cfg["eps"], cfg["L"], cfg["dt_sample"], cfg["x_grid"], cfg["seeds"],
                       key, cfg["threads"], cfg["t0"], (cfg["fit_low"], cfg["fit_high"]), cfg["beta"],
                       cfg["sensitivity"], cfg["signal_x"], cfg["hard_limit"])


def _early(cfg, key):
    return exp_early_branching(cfg["s"], cfg["t"], cfg["x"], cfg["R"], cfg["trials"], key,
                               cfg["threads"], cfg["x_t"])


def _localization(cfg, key):
    return exp_localization(cfg["t"], cfg["x"], cfg["alpha"], cfg["r"], cfg["trials"], cfg["dt"],
                            key, cfg["threads"])


def _decorrelate(cfg, key):
    return exp_decorrelation(cfg["R"], cfg["s"], cfg["t"], cfg["x"], cfg["y"], cfg["outer"],
                             cfg["inner"], key, cfg["threads"])


def _tail(cfg, key):
    return exp_right_tail(cfg["t"], cfg["trials"], cfg["y_grid"], key, cfg["threads"],
                          (cfg["fit_low"], cfg["fit_high"]), cfg["min_hits"])


def _bkr(cfg, key):
    return bkr_campaign(cfg["instances"], key, cfg["n_max"], cfg["size_max"])


def _bridge(cfg, key):
    return bridge_battery(cfg["paths"], cfg["steps"], cfg["tuples"], cfg["tuple_paths"], key)


def _moment(cfg, key):
    return moment_battery(cfg["trials"], key, cfg["threads"], cfg["nodes"])


RUNNERS = {
    "simulate": _simulate, "ergodic": _ergodic, "early-branching": _early,
    "localization": _localization, "decorrelate": _decorrelate, "tail": _tail,
    "bkr-check": _bkr, "bridge-check": _bridge, "moment-check": _moment,
}


def _stamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def render_manifest(subcommand: str, cfg: dict, start: str, end: str, outputs: list,
                    status: str) -> str:
    lines = [("subcommand", subcommand), ("version", __version__), ("seed", cfg["seed"]),
             ("threads", cfg["threads"])]
    lines += [(f"config.{k}", v) for k, v in cfg.items()]
    lines += [("start", start), ("end", end), ("status", status)]
    lines += [(f"output.{i}", os.path.basename(p)) for i, p in enumerate(outputs)]

    def fmt(v):
        if isinstance(v, (tuple, list)):
            return " ".join(format_value(x) for x in v)
        return format_value(v)

    return "".join(f"{k} = {fmt(v)}\n" for k, v in lines)


def dispatch(subcommand: str, cfg: dict) -> int:
    start = _stamp()
    key = RngStreamKey(cfg["seed"])
    try:
        report = RUNNERS[subcommand](cfg, key)
    except (ParticleLimitExceeded, MemoryError) as e:
        log.error("resource guard: %s", e)
        return EXIT_RESOURCE
    out = cfg["out"]
    try:
        os.makedirs(out, exist_ok=True)
        paths = report.write(out)
        status = "passed" if report.passed else ("failed" if report.passed is False else "done")
        manifest = os.path.join(out, f"{report.name}_manifest.txt")
        atomic_write(manifest, render_manifest(subcommand, cfg, start, _stamp(), paths, status))
    except OSError as e:
        raise ConfigError(f"cannot write outputs under {out}: {e}") from e
    for p in paths:
        log.info("wrote %s", p)
    if report.passed is False:
        log.warning("%s: acceptance check did not pass", subcommand)
        if cfg["assert"]:
            return EXIT_STATISTICAL
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="bbmlab: %(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG
    sub = args.pop("subcommand")
    path = args.pop("_config")
    try:
        cfg = parse_config(sub, path, args)
        return dispatch(sub, cfg)
    except ConfigError as e:
        log.error("%s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
