"""Command-line entry points: generate, run, analyze, replay.

Every subcommand reads the same YAML job description (``--config``)
with individual flags overriding single values.  Progress goes to the
log on stderr (level from the ``PORTWIN_LOG`` environment variable);
results and machine-parsable status lines such as ``listening tcp
host:port`` go to stdout.  Failures print one ``error: ...`` line and
exit 1; usage mistakes exit 2.
"""

import argparse
import dataclasses
import logging
import math
import os
import signal
import sys
import threading

from .analysis import export_csv, point_series
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .engine import Simulation
from .exchange import NbhRepository, partition_morton
from .grid import build_hierarchy
from .porous import (
    SphereSet,
    parse_sieve_curve,
    place_spheres,
    placement_region,
    sphere_counts,
    voxelize,
)
from .services import Collector, LiveSource, ReplaySource, RunController, SnapshotStore

log = logging.getLogger("portwin")

_LOG_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
    "quiet": logging.CRITICAL,
}


class CliError(Exception):
    """User-facing failure rendered as a single ``error:`` line."""


def _setup_logging():
    name = os.environ.get("PORTWIN_LOG", "info").strip().lower()
    level = _LOG_LEVELS.get(name, logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    logging.getLogger().setLevel(level)


def _endpoint(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host:
        raise argparse.ArgumentTypeError(f"expected host:port, got {value!r}")
    try:
        port = int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad port in {value!r}") from None
    if not 0 <= port <= 65535:
        raise argparse.ArgumentTypeError(f"port {port} out of range")
    return (host, port)


def _load(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return RunConfig()


def _read_text(path, what: str) -> str:
    try:
        with open(path) as f:
            return f.read()
    except OSError as exc:
        raise CliError(f"cannot read {what} {path}: {exc.strerror}") from None


def _read_points(path):
    """Parse ``x,y,z`` rows; one optional leading header line is skipped."""
    points = []
    header_allowed = True
    for ln, line in enumerate(_read_text(path, "points file").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise CliError(f"{path}:{ln}: expected three columns")
        try:
            pt = tuple(float(v) for v in parts)
        except ValueError:
            if header_allowed:
                header_allowed = False
                continue
            raise CliError(f"{path}:{ln}: non-numeric coordinate") from None
        header_allowed = False
        points.append(pt)
    if not points:
        raise CliError(f"{path}: no probe points")
    return points


def _install_stop_handler(on_stop):
    """Route SIGINT/SIGTERM to a clean stop; no-op off the main thread.

    The handler only flips events.  Any I/O here (logging included) can
    re-enter the stream lock held by the interrupted thread, abort the
    handler mid-way, and lose the stop request.
    """
    previous = {}

    def handler(signum, frame):
        on_stop()

    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            previous[sig] = signal.signal(sig, handler)
        except ValueError:
            break
    return previous


def _restore_handlers(previous):
    for sig, old in previous.items():
        signal.signal(sig, old)


# ---- generate ------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _load(args)
    sieve = args.sieve or cfg.porous.sieve
    if not sieve:
        raise CliError("no sieve curve: pass --sieve or set porous.sieve")
    out = args.out or cfg.porous.spheres
    if not out:
        raise CliError("no output path: pass --out or set porous.spheres")
    seed = args.seed if args.seed is not None else cfg.porous.seed
    solid = (args.solid_fraction if args.solid_fraction is not None
             else cfg.porous.solid_fraction)

    curve = parse_sieve_curve(_read_text(sieve, "sieve curve"),
                              normalize=args.normalize)
    region = placement_region(cfg.grid.domain_min, cfg.grid.domain_max, curve)
    volume = math.prod(region[a + 3] - region[a] for a in range(3))
    counts = sphere_counts(curve, volume, solid)
    log.info("placing %d spheres in region volume %.6g", sum(counts), volume)
    spheres = place_spheres(counts, curve, region, seed=seed)
    spheres.save_csv(out)
    achieved = spheres.solid_volume() / volume
    print(f"wrote {out} spheres={len(spheres)} region_solid_fraction="
          f"{achieved:.4f}", flush=True)
    return 0


# ---- run -----------------------------------------------------------------


def _build_run(cfg: RunConfig):
    h = build_hierarchy(cfg.grid, cfg.sim.initial_depth)
    rows = None
    if cfg.porous.spheres:
        rows = SphereSet.load_csv(cfg.porous.spheres).spheres
        voxelize(rows, h)
        log.info("voxelized %d spheres", len(rows))
    repo = NbhRepository()
    repo.register_hierarchy(h, partition_morton(h, max(1, cfg.sim.workers)))
    sim = Simulation(h, repo, cfg.boundaries, cfg.fluid,
                     workers=cfg.sim.workers, spheres=rows)
    return sim, rows


def _start_collector(source, service) -> Collector | None:
    if service.listen is None and service.ws_listen is None:
        return None
    collector = Collector(source, listen=service.listen,
                          ws_listen=service.ws_listen,
                          max_sessions=service.max_sessions).start()
    if service.listen is not None:
        print(f"listening tcp {service.listen[0]}:{collector.tcp_port}",
              flush=True)
    if service.ws_listen is not None:
        print(f"listening ws {service.ws_listen[0]}:{collector.ws_port}",
              flush=True)
    return collector


def cmd_run(args) -> int:
    cfg = _load(args)
    sim_over = {}
    for name in ("workers", "steps", "checkpoint"):
        value = getattr(args, name)
        if value is not None:
            sim_over[name] = value
    if sim_over:
        cfg = dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, **sim_over))
    svc_over = {}
    if args.listen is not None:
        svc_over["listen"] = args.listen
    if args.ws_listen is not None:
        svc_over["ws_listen"] = args.ws_listen
    if svc_over:
        cfg = dataclasses.replace(
            cfg, service=dataclasses.replace(cfg.service, **svc_over)
        )

    sim, rows = _build_run(cfg)
    store = SnapshotStore(spheres=rows)
    controller = RunController()
    source = LiveSource(sim, store, controller)
    collector = _start_collector(source, cfg.service)

    every = cfg.sim.snapshot_every

    def capture(s, report):
        if report.step % every == 0:
            store.capture(s, paused=controller.paused)

    sim.listeners.append(capture)
    if collector is not None:
        sim.listeners.append(collector.listener)
    sim.listeners.append(
        lambda s, r: log.info(
            "step %d t=%.6g dt=%.3g cycles=%d res=%.2e div=%.2e "
            "umax=%.4g wall=%.1fms", r.step, r.time, r.dt, r.cycles,
            r.res_rel, r.max_div, r.umax, r.wall_ms
        )
    )

    previous = _install_stop_handler(controller.stop)
    try:
        while sim.step_index < cfg.sim.steps and not controller.stopped:
            if not controller.wait_resume():
                break
            sim.step()
        if controller.stopped and sim.step_index < cfg.sim.steps:
            log.info("stopped early at step %d", sim.step_index)
    finally:
        _restore_handlers(previous)
        if collector is not None:
            collector.stop()
        sim.close()
        if cfg.sim.checkpoint:
            save_checkpoint(cfg.sim.checkpoint, sim.h, sim.step_index,
                            sim.time, rows)
            print(f"checkpoint {cfg.sim.checkpoint}", flush=True)
    print(f"run complete steps={sim.step_index} time={sim.time!r}", flush=True)
    return 0


# ---- analyze -------------------------------------------------------------


def cmd_analyze(args) -> int:
    h, step, _, _ = load_checkpoint(args.snapshot)
    points = _read_points(args.points)
    depth = h.deepest_depth if args.depth is None else args.depth
    if depth not in h.depth_index:
        raise CliError(f"depth {depth} not present in {args.snapshot}")
    edge = args.probe * max(h.level_spacing(depth))
    log.info("probing %d points, edge %.6g at depth %d (state from step %d)",
             len(points), edge, depth, step)
    series = point_series(h, points, edge, args.mu, depth=depth)
    export_csv(series, args.out)
    defined = sum(1 for s in series.samples if any(s.defined(a) for a in range(3)))
    for axis, name in enumerate(("kx", "ky", "kz")):
        print(f"{name} mean={series.mean[axis]!r} sigma={series.sigma[axis]!r} "
              f"excluded={series.excluded[axis]}", flush=True)
    print(f"wrote {args.out} probes={len(points)} defined={defined}", flush=True)
    return 0


# ---- replay --------------------------------------------------------------


def cmd_replay(args) -> int:
    h, step, time, spheres = load_checkpoint(args.snapshot)
    source = ReplaySource(h, step, time, spheres)
    service = dataclasses.replace(
        RunConfig().service,
        listen=args.listen if args.listen is not None else ("127.0.0.1", 9401),
        ws_listen=args.ws_listen,
        max_sessions=args.max_sessions,
    )
    collector = _start_collector(source, service)
    print(f"replay serving step={step} blocks={len(h.grids)}", flush=True)

    stop = threading.Event()
    previous = _install_stop_handler(stop.set)
    try:
        while not stop.wait(0.2):
            pass
    finally:
        _restore_handlers(previous)
        collector.stop()
    return 0


# ---- entry point ---------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="portwin",
        description="Pore-scale flow: specimen generation, simulation, "
                    "permeability analysis, and stored-state serving.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="place a random sphere packing")
    p.add_argument("--config", help="YAML job description")
    p.add_argument("--sieve", help="grain-size curve CSV (diameter_mm,fraction)")
    p.add_argument("--out", help="output spheres CSV")
    p.add_argument("--seed", type=int, help="placement RNG seed")
    p.add_argument("--solid-fraction", type=float,
                   help="target solid volume fraction of the placement region")
    p.add_argument("--normalize", action="store_true",
                   help="rescale sieve fractions to sum to one")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="time-step a flow problem")
    p.add_argument("--config", help="YAML job description")
    p.add_argument("--steps", type=int, help="number of time steps")
    p.add_argument("--workers", type=int, help="owner threads (0 = inline)")
    p.add_argument("--checkpoint", help="state file written at the end")
    p.add_argument("--listen", type=_endpoint, metavar="HOST:PORT",
                   help="serve live windows over TCP")
    p.add_argument("--ws-listen", type=_endpoint, metavar="HOST:PORT",
                   help="serve live windows over WebSocket")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="derive permeability from a checkpoint")
    p.add_argument("--snapshot", required=True, help="checkpoint file")
    p.add_argument("--points", required=True, help="probe centres CSV (x,y,z)")
    p.add_argument("--probe", type=int, required=True,
                   help="cubic probe edge in cells of the sampled depth")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--mu", type=float, default=1.0e-3,
                   help="dynamic viscosity in Pa*s (default: water, 1e-3)")
    p.add_argument("--depth", type=int, help="grid depth to sample "
                   "(default: deepest stored)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("replay", help="serve a checkpoint over the window protocol")
    p.add_argument("--snapshot", required=True, help="checkpoint file")
    p.add_argument("--listen", type=_endpoint, metavar="HOST:PORT",
                   help="TCP endpoint (default 127.0.0.1:9401)")
    p.add_argument("--ws-listen", type=_endpoint, metavar="HOST:PORT",
                   help="WebSocket endpoint (default: off)")
    p.add_argument("--max-sessions", type=int, default=8,
                   help="concurrent viewer limit")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr, flush=True)
        return 1
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr, flush=True)
        return 130
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr, flush=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
