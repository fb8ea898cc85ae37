"""Command-line entry point: ``mpgmerge <verify|train|train-single|eval|ingest|replay>``.

Exit codes: 0 success, 1 semantic failure (verification or metric check),
2 usage, configuration or file-format error.  Every artifact is written next
to a ``<artifact>.config.json`` echo of the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from mpgmerge.config import ConfigError, ExperimentConfig, desk_config, dump_config, load_config, full_config

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        return load_config(path)
    return desk_config() if getattr(args, "preset", "desk") == "desk" else full_config()


def _echo(cfg: ExperimentConfig, artifact) -> None:
    p = Path(artifact)
    dump_config(cfg, p.with_name(p.stem + ".config.json"))


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


class _JsonlWriter:
    """Deterministic JSON-lines log with wall-clock times in a sidecar file."""

    def __init__(self, path):
        self.path = Path(path)
        self.fh = open(self.path, "w")
        self.timing = open(self.path.with_name(self.path.stem + ".timing.jsonl"), "w")
        self.t0 = time.perf_counter()

    def __call__(self, rec: dict) -> None:
        self.fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self.timing.write(json.dumps({"epoch": rec.get("epoch"), "seed": rec.get("seed"),
                                      "wall_time": time.perf_counter() - self.t0}) + "\n")

    def close(self):
        self.fh.close()
        self.timing.close()


# ---------------------------------------------------------------- verify

def cmd_verify(args) -> int:
    from mpgmerge.tabular import verify_mpg, verify_transition_independence
    from mpgmerge.tabular.generators import coupled_counterexample, coupled_transition_game, structured_game
    from mpgmerge.tabular.io import GameFormatError, load_game

    if args.generate:
        rng = np.random.default_rng(args.seed)
        if args.generate == "counterexample":
            sg = coupled_counterexample(rng)
        elif args.generate == "coupled-transition":
            sg = coupled_transition_game(rng)
        else:
            sg = structured_game(args.generate, rng)
        game, phi = sg.game, sg.phi
        source = f"generated:{args.generate}"
    else:
        if not args.game:
            raise UsageError("give a game file or --generate")
        path = Path(args.game)
        if not path.exists():
            raise UsageError(f"game file not found: {path}")
        try:
            game, phi = load_game(path)
        except (GameFormatError, ValueError) as exc:
            raise UsageError(f"cannot read {path}: {exc}") from exc
        if phi is None:
            raise UsageError(f"{path} carries no potential tensor")
        source = str(path)
    report = verify_mpg(game, phi, sample_deviations=args.samples, tol=args.tol, seed=args.seed)
    doc = {"source": source, "tol": args.tol, **report.to_dict()}
    if game.local_state_counts is not None:
        doc["transition_independent"] = bool(verify_transition_independence(game))
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK if report.is_mpg_on_samples else EXIT_FAIL


# ---------------------------------------------------------------- train

def _seed_file(out: Path, seed: int) -> Path:
    return out.with_name(f"{out.stem}.seed{seed}{out.suffix or '.json'}")


def _save_trained(cfg, result, out, kind: str) -> None:
    from mpgmerge.policy import save_params

    out = Path(out)
    files = {}
    for seed, params in zip(cfg.seeds, result["params"]):
        f = _seed_file(out, seed)
        save_params(params, f, extra={"seed": int(seed), "trainer": kind})
        files[str(seed)] = f.name
    save_params(result["params"][0], out,
                extra={"seed": int(cfg.seeds[0]), "trainer": kind, "seed_files": files})
    _echo(cfg, out)


def _train_common(args, single: bool) -> int:
    from mpgmerge.baselines import train_single_agent
    from mpgmerge.training import train

    cfg = _config(args)
    if args.epochs is not None:
        cfg.trainer.epochs = args.epochs
    if args.eta is not None:
        cfg.trainer.eta = args.eta
    cfg.validate()
    writer = _JsonlWriter(args.log)
    try:
        result = (train_single_agent if single else train)(cfg, log=writer)
    finally:
        writer.close()
    _echo(cfg, args.log)
    _save_trained(cfg, result, args.out, "single-agent" if single else "potential")
    final = [r["frozen_potential"] for r in result["logs"] if r.get("final")]
    print(json.dumps({"out": str(args.out), "log": str(args.log), "final_frozen_potential": final}))
    return EXIT_OK


def cmd_train(args) -> int:
    return _train_common(args, single=False)


def cmd_train_single(args) -> int:
    return _train_common(args, single=True)


# ---------------------------------------------------------------- eval / replay

def _load_policy(spec: Optional[str], seeds):
    """``idm``/``const`` pass through; a parameter file yields one network per seed."""
    from mpgmerge.policy import StructureError, load_params

    if spec is None or spec in ("idm", "const"):
        return spec
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"parameter file not found: {path}")
    try:
        base = load_params(path)
        extra = json.loads(path.read_text()).get("extra", {})
        files = extra.get("seed_files", {})
        out = []
        for s in seeds:
            f = files.get(str(s))
            out.append(load_params(path.with_name(f)) if f and path.with_name(f).exists() else base)
        return out
    except (StructureError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read parameters {path}: {exc}") from exc


def _trace_writer(path, cfg, extra_fn=None):
    fh = open(path, "w")
    dt = cfg.scenario.dt

    def write(seed, batch, res):
        rec = res.records
        for b in range(batch.shape[0]):
            L = int(res.length[b])
            sid = batch.ids[b].item() if hasattr(batch.ids[b], "item") else batch.ids[b]
            for t in range(L + 1):
                row = {"seed": int(seed), "scenario": sid, "step": t, "time": round(t * dt, 10),
                       "x": rec["x"][b, t].tolist(), "y": rec["y"][b, t].tolist(),
                       "v": rec["v"][b, t].tolist(), "lane": rec["lane"][b, t].tolist()}
                if t < L:
                    row.update(u=rec["u"][b, t].tolist(), rewards=rec["rewards"][b, t].tolist(),
                               potential=float(rec["potential"][b, t]))
                else:
                    row["end"] = "collision" if res.collided[b] else "horizon"
                if extra_fn is not None:
                    row.update(extra_fn(b, t))
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    write.close = fh.close
    return write


def cmd_eval(args) -> int:
    from mpgmerge.baselines import run_evaluation
    from mpgmerge.ingest import load_scenarios, scenarios_to_batch

    cfg = _config(args)
    if args.n is not None:
        if args.n <= 0:
            raise UsageError("empty scenario list: --n must be positive")
        cfg.evaluation.n_scenarios = args.n
    if args.seeds is not None:
        if args.seeds <= 0:
            raise UsageError("--seeds must be positive")
        cfg.seeds = tuple(range(args.seeds))
    cfg.validate()
    scenarios = None
    if args.others == "replay":
        if not args.scenarios:
            raise UsageError("--others replay needs --scenarios <manifest>")
        items = load_scenarios(args.scenarios)
        if not items:
            raise UsageError("empty scenario list")
        cfg.reward.x_c = cfg.ingest.x_c
        scenarios = scenarios_to_batch(items, cfg.scenario.lane_width)
    ego = _load_policy(args.ego, cfg.seeds)
    others_params = _load_policy(args.others_params, cfg.seeds) if args.others_params else None
    if args.others == "ne" and isinstance(ego, str) and others_params is None:
        raise UsageError("--others ne with a rule-based ego needs --others-params")
    trace = _trace_writer(args.trace, cfg) if args.trace else None
    try:
        report = run_evaluation(ego, args.others, cfg, surrounding_params=others_params,
                                scenarios=scenarios, on_result=trace)
    finally:
        if trace:
            trace.close()
    doc = {"ego": args.ego, "others": args.others, **report.to_dict()}
    _write_json(args.out, doc)
    _echo(cfg, args.out)
    print(json.dumps({k: doc[k] for k in ("collision_rate", "failure_rate", "avg_min_inter_vehicle_distance",
                                          "avg_ego_speed", "avg_accel_magnitude", "avg_jerk_magnitude")}))
    ok = True
    if args.require_safe:
        ok = report.collision_rate == 0 and report.failure_rate == 0
    return EXIT_OK if ok else EXIT_FAIL


def cmd_ingest(args) -> int:
    from mpgmerge.ingest import (IngestFormatError, build_replay_scenarios, parse_trajectory_file,
                                 process_tracks, save_processed, save_scenarios)

    cfg = _config(args)
    src = Path(args.input)
    if not src.exists():
        raise UsageError(f"input file not found: {src}")
    try:
        parsed = parse_trajectory_file(src, cfg.ingest)
    except IngestFormatError as exc:
        raise UsageError(str(exc)) from exc
    tracks, excluded = process_tracks(parsed.tracks, cfg.ingest)
    save_processed(tracks, args.out)
    _echo(cfg, args.out)
    summary = {"tracks": len(parsed.tracks), "processed": len(tracks), "excluded_short": excluded,
               "skipped_rows": parsed.skipped_rows}
    if args.scenarios:
        scen, skipped = build_replay_scenarios(tracks, cfg.ingest, cfg.scenario.n_leaders,
                                               cfg.scenario.n_followers, cfg.scenario.dt)
        save_scenarios(scen, args.scenarios, skipped)
        _echo(cfg, args.scenarios)
        summary.update(scenarios=len(scen), skipped_scenarios=skipped)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_replay(args) -> int:
    from mpgmerge.baselines import run_evaluation
    from mpgmerge.ingest import load_scenarios, scenarios_to_batch

    cfg = _config(args)
    path = Path(args.scenarios)
    if not path.exists():
        raise UsageError(f"scenario manifest not found: {path}")
    items = load_scenarios(path)
    if not items:
        raise UsageError("empty scenario list")
    cfg.reward.x_c = cfg.ingest.x_c
    cfg.seeds = (cfg.seeds[0],)
    batch = scenarios_to_batch(items, cfg.scenario.lane_width)
    ego = _load_policy(args.params, cfg.seeds)
    steps = items[0].human_x.shape[0]

    def human(b, t):
        if t < steps:
            return {"human_x": float(items[b].human_x[t]), "human_v": float(items[b].human_v[t])}
        return {}

    trace = _trace_writer(args.trace, cfg, human)
    try:
        report = run_evaluation(ego, "replay", cfg, scenarios=batch, on_result=trace)
    finally:
        trace.close()
    _echo(cfg, args.trace)
    if args.out:
        _write_json(args.out, {"ego": args.params, "others": "replay", **report.to_dict()})
        _echo(cfg, args.out)
    print(json.dumps({"scenarios": len(items), "vehicles": int(batch.shape[1]),
                      "collision_rate": report.collision_rate, "failure_rate": report.failure_rate}))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpgmerge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="YAML or JSON experiment config")
        sp.add_argument("--preset", choices=("desk", "full"), default="desk",
                        help="built-in config when --config is absent (default: desk)")

    v = sub.add_parser("verify", help="check the potential-game identity on a tabular game")
    v.add_argument("game", nargs="?", help="tabular game JSON file")
    v.add_argument("--generate", choices=("theorem3", "theorem4", "theorem5", "counterexample",
                                          "coupled-transition"))
    v.add_argument("--tol", type=float, default=1e-8)
    v.add_argument("--samples", type=int, default=200)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    for name, func, helptext in (("train", cmd_train, "potential-function gradient ascent"),
                                 ("train-single", cmd_train_single, "single-agent RL ego vs IDM")):
        t = sub.add_parser(name, help=helptext)
        with_config(t)
        t.add_argument("--out", required=True, help="parameter file")
        t.add_argument("--log", required=True, help="JSON-lines training log")
        t.add_argument("--epochs", type=int)
        t.add_argument("--eta", type=float)
        t.set_defaults(func=func)

    e = sub.add_parser("eval", help="six-metric evaluation")
    with_config(e)
    e.add_argument("--ego", required=True, help="parameter file, 'idm' or 'const'")
    e.add_argument("--others", required=True, choices=("ne", "idm", "const", "replay"))
    e.add_argument("--others-params", help="network for NE surroundings (default: the ego network)")
    e.add_argument("--n", type=int, help="scenarios per seed")
    e.add_argument("--seeds", type=int, help="number of seeds")
    e.add_argument("--scenarios", help="replay scenario manifest")
    e.add_argument("--out", required=True)
    e.add_argument("--trace", help="per-step JSON-lines trace")
    e.add_argument("--require-safe", action="store_true", help="exit 1 unless collisions and failures are zero")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("ingest", help="process a trajectory file into tracks and replay scenarios")
    with_config(i)
    i.add_argument("--input", required=True)
    i.add_argument("--out", required=True, help="processed-track JSON-lines file")
    i.add_argument("--scenarios", help="replay scenario manifest to write")
    i.set_defaults(func=cmd_ingest)

    r = sub.add_parser("replay", help="drive the ego with a trained policy among recorded vehicles")
    with_config(r)
    r.add_argument("--params", required=True)
    r.add_argument("--scenarios", required=True)
    r.add_argument("--trace", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        for key in exc.keys:
            print(f"  {key}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
