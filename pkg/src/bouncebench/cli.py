"""Command-line entry point.

Exit codes: 0 ok, 2 fewer than three bounces, 3 unreliable run, 64 usage,
65 bad input data, 73 output cannot be created.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .agents import AgentConfig, AgentKind, load_replay
from .experiments import EXPERIMENT_IDS, ExperimentSpec, UnknownExperiment, run_experiment, seed_examples
from .heatmap import PENALTY, HeatmapSpec, heatmap
from .physics import InvalidInitialCondition, SimParams, Simulator
from .pipeline import Mode, format_transcript, load_episodes, save_episodes, validate_grammar
from .stats import format_table, paired_t_tests, relative_error, report_rows, rows_to_csv
from .store import ExampleStore
from .terrain import SurfaceSpec

log = logging.getLogger("bouncebench")

EX_OK = 0
EX_EARLY = 2
EX_UNRELIABLE = 3
EX_USAGE = 64
EX_DATAERR = 65
EX_CANTCREAT = 73


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class CantCreate(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class CliConfig:
    config_path: Path | None = None
    store_path: str = "examples.jsonl"
    output_dir: Path = Path("out")
    parallelism: int = 1
    log_level: str = "WARNING"
    agent: dict | None = None

    def __post_init__(self):
        if self.parallelism < 1:
            raise UsageError("parallelism must be at least 1")

    def out_path(self, name) -> Path:
        """Resolve ``name`` under the output directory, refusing anything that escapes it."""
        root = self.output_dir.resolve()
        path = Path(name)
        path = (path if path.is_absolute() else root / path).resolve()
        if path != root and root not in path.parents:
            raise UsageError(f"{name} is outside the output directory {root}")
        return path

    def ensure_output_dir(self) -> None:
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CantCreate(f"cannot create {self.output_dir}: {exc}") from exc


CONFIG_KEYS = {"store_path", "output_dir", "parallelism", "log_level", "agent"}


def load_config(args) -> CliConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict) or set(data) - CONFIG_KEYS:
            raise UsageError(f"config keys must be among {sorted(CONFIG_KEYS)}")
    overrides = {"store_path": args.store, "output_dir": args.output_dir, "parallelism": args.parallelism, "log_level": args.log_level}
    data.update({k: v for k, v in overrides.items() if v is not None})
    if "output_dir" in data:
        data["output_dir"] = Path(data["output_dir"])
    return CliConfig(config_path=args.config, **data)


# --------------------------------------------------------------------------
# shared flag groups


def _add_global(p: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps a value given before the subcommand from being reset by the subparser
    g = p.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON file with store_path, output_dir, parallelism, log_level, agent")
    g.add_argument("--output-dir", default=argparse.SUPPRESS, help="directory for every file written (default out)")
    g.add_argument("--store", default=argparse.SUPPRESS, help="example store, relative to the output directory")
    g.add_argument("--parallelism", type=int, default=argparse.SUPPRESS, help="trial worker count")
    g.add_argument("--log-level", default=argparse.SUPPRESS, choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _add_surface(p: argparse.ArgumentParser) -> None:
    p.add_argument("--surface", choices=["flat", "sinusoid", "blend"], default="flat")
    p.add_argument("--alpha", type=float, default=1.0, help="sinusoid amplitude")
    p.add_argument("--freq", type=float, default=1.0, help="sinusoid frequency")
    p.add_argument("--d", type=float, default=0.5, help="blend difficulty in [0, 1]")


def _add_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gravity", type=float, default=9.81)
    p.add_argument("--restitution", type=float, default=0.9)
    p.add_argument("--dt", type=float, default=0.001)
    p.add_argument("--radius", type=float, default=0.0, help="ball radius in m")


def _add_agent(p: argparse.ArgumentParser) -> None:
    p.add_argument("--exp", required=True, help=f"experiment id: {', '.join(EXPERIMENT_IDS)}")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.SIMLM.value)
    p.add_argument("--shots", type=int, choices=[0, 1, 2], default=0)
    p.add_argument("--agent", choices=[k.value for k in AgentKind], default=AgentKind.BISECTION.value)
    p.add_argument("--model", help="model id (remote agents; labels scripted ones)")
    p.add_argument("--endpoint", help="chat completions base URL for --agent remote")
    p.add_argument("--replay-file", help="JSON list of replies for --agent replay")
    p.add_argument("--seed", type=int, default=0)


def _surface(args) -> SurfaceSpec:
    if args.surface == "flat":
        return SurfaceSpec.flat()
    if args.surface == "sinusoid":
        return SurfaceSpec.sinusoid(args.alpha, args.freq)
    return SurfaceSpec.blend(args.d)


def _params(args, **extra) -> SimParams:
    return SimParams(gravity=args.gravity, restitution=args.restitution, dt=args.dt, ball_radius=args.radius, **extra)


def _agent_config(args, cfg: CliConfig) -> AgentConfig:
    settings = dict(cfg.agent or {})
    settings["kind"] = args.agent
    if args.model:
        settings["model_id"] = args.model
    if args.endpoint:
        settings["endpoint_url"] = args.endpoint
    if args.agent == AgentKind.REPLAY.value:
        if not args.replay_file:
            raise UsageError("--agent replay needs --replay-file")
        try:
            settings["replay"] = load_replay(args.replay_file)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read replay file: {exc}") from exc
    if args.agent != AgentKind.REMOTE.value:
        settings["seed"] = args.seed
    try:
        return AgentConfig(**settings)
    except TypeError as exc:
        raise UsageError(f"bad agent settings: {exc}") from exc


def _experiment(args, trials: int) -> ExperimentSpec:
    try:
        return ExperimentSpec(args.exp, Mode(args.mode), shots=args.shots, trials=trials, seed=args.seed)
    except UnknownExperiment as exc:
        raise UsageError(str(exc)) from exc


def _open_store(cfg: CliConfig) -> ExampleStore:
    return ExampleStore(cfg.out_path(cfg.store_path))


def _write(path: Path, data) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, bytes):
            path.write_bytes(data)
        else:
            path.write_text(data)
    except OSError as exc:
        raise CantCreate(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: CliConfig) -> int:
    params = _params(args)
    sim = Simulator.for_surface(_surface(args), params)
    traj_path = cfg.out_path(args.trajectory) if args.trajectory else None
    try:
        traj = sim(args.h, args.v, record=bool(args.trajectory))
    except InvalidInitialCondition as exc:
        raise UsageError(str(exc)) from exc
    print(f"{'#':>2}  {'t (s)':>8}  {'x (m)':>10}  {'y (m)':>9}  {'speed in':>9}  {'speed out':>9}")
    for b in traj.bounces:
        print(
            f"{b.index:>2}  {b.t:8.3f}  {b.pos.x:10.3f}  {b.pos.y:9.3f}  {b.vel_before.norm():9.3f}  {b.vel_after.norm():9.3f}"
        )
    if traj_path is not None:
        cfg.ensure_output_dir()
        try:
            traj_path.parent.mkdir(parents=True, exist_ok=True)
            traj.to_csv(traj_path)
        except OSError as exc:
            raise CantCreate(f"cannot write {traj_path}: {exc}") from exc
    if len(traj.bounces) < 3:
        print(f"stopped after {len(traj.bounces)} bounce(s): {traj.terminated_by.value}")
        return EX_EARLY
    print(f"third bounce x = {traj.bounces[2].pos.x:.2f} m")
    return EX_OK


def cmd_heatmap(args, cfg: CliConfig) -> int:
    try:
        spec = HeatmapSpec(_surface(args), tuple(args.v_range), tuple(args.h_range), tuple(args.grid))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    stem = args.out or f"heatmap_{args.surface}"
    csv_path, pgm_path = cfg.out_path(f"{stem}.csv"), cfg.out_path(f"{stem}.pgm")
    existing = [p for p in (csv_path, pgm_path) if p.exists()]
    if existing and not args.force:
        print(f"{existing[0]} exists; pass --force to overwrite", file=sys.stderr)
        return EX_CANTCREAT
    result = heatmap(spec, _params(args), args.target, args.penalty)
    cfg.ensure_output_dir()
    _write(csv_path, result.to_csv())
    _write(pgm_path, result.to_pgm())
    hits = int((result.errors <= 1.0).sum())
    print(f"{result.errors.size} cells, {hits} within 1 m, min error {result.errors.min():.3f} m")
    print(f"wrote {csv_path} and {pgm_path}")
    return EX_OK


def _run_stem(spec: ExperimentSpec, agent: AgentConfig) -> str:
    model = "".join(c if c.isalnum() or c in "-_." else "_" for c in agent.model_id)
    return f"{spec.id}_{spec.mode.value}_{spec.shots}shot_{model}_s{spec.seed}"


def cmd_run(args, cfg: CliConfig) -> int:
    if args.trials < 0:
        raise UsageError("--trials must be non-negative")
    spec = _experiment(args, args.trials)
    agent = _agent_config(args, cfg)
    cfg.ensure_output_dir()
    store = _open_store(cfg)
    result = run_experiment(spec, agent, store, save=not args.no_save, workers=cfg.parallelism)
    stem = args.out or _run_stem(spec, agent)
    episodes_path, report_path = cfg.out_path(f"{stem}.json"), cfg.out_path(f"{stem}.csv")
    meta = {"experiment": spec.to_dict(), "agent": agent.kind.value, "model_id": agent.model_id, "aborted": result.aborted}
    try:
        save_episodes(result.episodes, episodes_path, meta)
    except OSError as exc:
        raise CantCreate(f"cannot write {episodes_path}: {exc}") from exc
    rows = report_rows(result.episodes)
    _write(report_path, rows_to_csv(rows))
    if rows:
        print(format_table(rows))
    print(f"{len(result.episodes)} episodes, {len(result.aborted)} aborted, {result.saved} saved to the store")
    print(f"wrote {episodes_path} and {report_path}")
    if result.unreliable:
        print("run is unreliable: more than 10% of trials aborted", file=sys.stderr)
        return EX_UNRELIABLE
    return EX_OK


def cmd_seed_examples(args, cfg: CliConfig) -> int:
    spec = _experiment(args, 0)
    agent = _agent_config(args, cfg)
    cfg.ensure_output_dir()
    store = _open_store(cfg)
    before = len(store)
    result = seed_examples(
        spec, agent, store, count=args.count, target_range=(args.min_target, args.max_target),
        max_trials=args.max_trials, workers=cfg.parallelism,
    )
    print(f"{result.attempted} trials, {result.saved} successes, store grew {before} -> {len(store)}")
    if result.unreliable:
        return EX_UNRELIABLE
    return EX_OK


def _load_all(paths) -> list:
    episodes = []
    for p in paths:
        try:
            episodes.extend(load_episodes(p))
        except OSError as exc:
            raise UsageError(f"cannot read {p}: {exc}") from exc
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{p} is not an episode file: {exc}") from exc
    return episodes


def cmd_report(args, cfg: CliConfig) -> int:
    episodes = _load_all(args.episodes)
    if not episodes:
        raise DataError("no episodes to report")
    rows = report_rows(episodes)
    tests = paired_t_tests(episodes)
    simlm = [r for r in rows if r.mode == Mode.SIMLM.value]
    base = [r for r in rows if r.mode == Mode.BASELINE.value]
    try:
        rel = relative_error(simlm, base)
    except ZeroDivisionError as exc:
        log.warning("%s", exc)
        rel = {}
    cfg.ensure_output_dir()
    stem = args.out
    _write(cfg.out_path(f"{stem}.csv"), rows_to_csv(rows))
    _write(cfg.out_path(f"{stem}_ttests.json"), json.dumps(tests, indent=1, sort_keys=True) + "\n")
    rel_lines = ["model_id,shots,group,relative_error"] + [f"{m},{s},{g},{v:.6f}" for (m, s, g), v in sorted(rel.items())]
    _write(cfg.out_path(f"{stem}_relative.csv"), "\n".join(rel_lines) + "\n")

    print(format_table(rows))
    print("\nWelch t-tests (SimLM vs baseline)")
    for t in tests:
        if "error" in t:
            print(f"  {t['model_id']} {t['experiment_id']} {t['shots']}-shot: {t['error']}")
        else:
            mark = "significant" if t["significant"] else "not significant"
            print(f"  {t['model_id']} {t['experiment_id']} {t['shots']}-shot: t={t['t']:.3f} df={t['df']:.1f} p={t['p']:.4g} ({mark})")
    if not tests:
        print("  no cell holds both modes")
    print("\nRelative error (SimLM / baseline)")
    for (m, s, g), v in sorted(rel.items()):
        print(f"  {m} {s}-shot {g}: {v:.3f}")
    if not rel:
        print("  no matched difficulty rows")
    return EX_OK


def cmd_replay(args, cfg: CliConfig) -> int:
    episodes = _load_all([args.episodes])
    if args.index is not None:
        if not 0 <= args.index < len(episodes):
            raise UsageError(f"--index out of range (0..{len(episodes) - 1})")
        episodes = [episodes[args.index]]
    bad = 0
    for ep in episodes:
        print(format_transcript(ep))
        print()
        bad += not validate_grammar(ep)
    if bad:
        print(f"{bad} episode(s) violate the segment grammar", file=sys.stderr)
        return EX_DATAERR
    return EX_OK


def cmd_compact(args, cfg: CliConfig) -> int:
    path = cfg.out_path(cfg.store_path)
    if not path.exists():
        print(f"{path} does not exist")
        return EX_OK
    dropped = ExampleStore(path).compact()
    print(f"dropped {dropped} line(s) from {path}")
    return EX_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = Parser(add_help=False)
    _add_global(common)
    parser = Parser(prog="bouncebench", description="Bounce simulator and prompting harness.", parents=[common])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("simulate", parents=[common], help="simulate one throw")
    p.add_argument("--h", type=float, required=True, help="initial height in m")
    p.add_argument("--v", type=float, required=True, help="horizontal velocity in m/s")
    _add_surface(p)
    _add_params(p)
    p.add_argument("--trajectory", help="write a per-step CSV under the output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("heatmap", parents=[common], help="error over a (v, h) grid")
    _add_surface(p)
    _add_params(p)
    p.add_argument("--v-range", type=float, nargs=2, default=[0.0, 30.0], metavar=("LO", "HI"))
    p.add_argument("--h-range", type=float, nargs=2, default=[0.5, 20.0], metavar=("LO", "HI"))
    p.add_argument("--grid", type=int, nargs=2, default=[120, 80], metavar=("NV", "NH"))
    p.add_argument("--target", type=float, default=50.0)
    p.add_argument("--penalty", type=float, default=PENALTY)
    p.add_argument("--out", help="file stem for the .csv and .pgm outputs")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("run", parents=[common], help="run an experiment")
    _add_agent(p)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--no-save", action="store_true", help="do not add successes to the store")
    p.add_argument("--out", help="file stem for the episodes JSON and report CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("seed-examples", parents=[common], help="populate the example store")
    _add_agent(p)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--max-trials", type=int)
    p.add_argument("--min-target", type=float, default=10.0)
    p.add_argument("--max-target", type=float, default=100.0)
    p.set_defaults(func=cmd_seed_examples)

    p = sub.add_parser("report", parents=[common], help="aggregate episode files")
    p.add_argument("episodes", nargs="+", help="episode JSON files")
    p.add_argument("--out", default="report", help="file stem for report outputs")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("replay", parents=[common], help="print transcripts with grammar checks")
    p.add_argument("episodes", help="episode JSON file")
    p.add_argument("--index", type=int, help="only this episode")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("compact", parents=[common], help="rewrite the store without duplicates")
    p.set_defaults(func=cmd_compact)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "output_dir", "store", "parallelism", "log_level"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        cfg = load_config(args)
        logging.basicConfig(level=cfg.log_level, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"bouncebench: {exc}", file=sys.stderr)
        return EX_USAGE
    except DataError as exc:
        print(f"bouncebench: {exc}", file=sys.stderr)
        return EX_DATAERR
    except CantCreate as exc:
        print(f"bouncebench: {exc}", file=sys.stderr)
        return EX_CANTCREAT
    except ValueError as exc:
        print(f"bouncebench: {exc}", file=sys.stderr)
        return EX_USAGE


if __name__ == "__main__":
    sys.exit(main())
