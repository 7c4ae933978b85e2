"""Versioned YAML run configuration.

One file describes one job: grid geometry, fluid constants, boundary
conditions, run control, specimen inputs, and streaming endpoints.
Sections map one-to-one onto the engine's constructor objects so the
command line stays thin.  Unknown keys are rejected with their dotted
path and every value is type-checked, so a typo fails loudly instead
of silently falling back to a default.  ``parse_config(dump_config(c))``
reproduces ``c`` exactly; float values survive the round trip bitwise.
"""

from dataclasses import dataclass, field

import yaml

from .engine import FlowParams
from .grid import ConfigError, GridConfig
from .solver.bc import BoundaryConditions
from .solver.poisson import PoissonController

SCHEMA_VERSION = 1

DEFAULT_GRID = GridConfig(
    domain_min=(0.0, 0.0, 0.0),
    domain_max=(0.32, 0.16, 0.16),
    root_refine=(4, 2, 2),
    sub_refine=(2, 2, 2),
    block_size=(20, 20, 20),
    max_depth=3,
)


@dataclass(frozen=True)
class SimSettings:
    """Run control: parallelism, length, and output cadence."""

    workers: int = 1
    steps: int = 100
    initial_depth: int = 1
    snapshot_every: int = 1
    checkpoint: str | None = None


@dataclass(frozen=True)
class PorousSettings:
    """Specimen inputs: sieve curve for generation, spheres for runs."""

    sieve: str | None = None
    spheres: str | None = None
    solid_fraction: float = 0.35
    seed: int = 0


@dataclass(frozen=True)
class ServiceSettings:
    """Streaming endpoints; ``None`` leaves that listener off."""

    listen: tuple[str, int] | None = None
    ws_listen: tuple[str, int] | None = None
    max_sessions: int = 8


@dataclass(frozen=True)
class RunConfig:
    """Everything a job needs, grouped by the object it configures."""

    grid: GridConfig = DEFAULT_GRID
    fluid: FlowParams = field(default_factory=FlowParams)
    boundaries: BoundaryConditions = field(default_factory=BoundaryConditions)
    sim: SimSettings = SimSettings()
    porous: PorousSettings = PorousSettings()
    service: ServiceSettings = ServiceSettings()


# ---- value readers -------------------------------------------------------
#
# Each reader pops its key so the section check below can report any
# key that no reader claimed.


def _mapping(node, path: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(node).__name__}")
    return dict(node)


def _reject_leftovers(sec: dict, path: str):
    if sec:
        key = sorted(str(k) for k in sec)[0]
        raise ConfigError(f"unknown key {path}.{key}")


def _float(sec: dict, path: str, key: str, default: float) -> float:
    if key not in sec:
        return default
    v = sec.pop(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    return float(v)


def _int(sec: dict, path: str, key: str, default: int) -> int:
    if key not in sec:
        return default
    v = sec.pop(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {v!r}")
    return v


def _str(sec: dict, path: str, key: str, default):
    if key not in sec:
        return default
    v = sec.pop(key)
    if not isinstance(v, str):
        raise ConfigError(f"{path}.{key}: expected a string, got {v!r}")
    return v


def _opt_str(sec: dict, path: str, key: str):
    if key not in sec:
        return None
    v = sec.pop(key)
    if v is None:
        return None
    if not isinstance(v, str):
        raise ConfigError(f"{path}.{key}: expected a string or null, got {v!r}")
    return v


def _triple(sec: dict, path: str, key: str, default, kind):
    if key not in sec:
        return default
    v = sec.pop(key)
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise ConfigError(f"{path}.{key}: expected three values, got {v!r}")
    out = []
    for item in v:
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise ConfigError(f"{path}.{key}: expected numbers, got {item!r}")
        if kind is int and not isinstance(item, int):
            raise ConfigError(f"{path}.{key}: expected integers, got {item!r}")
        out.append(kind(item))
    return tuple(out)


def _endpoint(sec: dict, path: str, key: str):
    """Read ``host:port`` into a (host, port) pair; absent or null is off."""
    if key not in sec:
        return None
    v = sec.pop(key)
    if v is None:
        return None
    if not isinstance(v, str) or ":" not in v:
        raise ConfigError(f"{path}.{key}: expected 'host:port', got {v!r}")
    host, _, port = v.rpartition(":")
    try:
        port = int(port)
    except ValueError:
        raise ConfigError(f"{path}.{key}: bad port in {v!r}") from None
    if not 0 <= port <= 65535:
        raise ConfigError(f"{path}.{key}: port {port} out of range")
    return (host, port)


# ---- section parsers -----------------------------------------------------


def _parse_grid(sec: dict) -> GridConfig:
    cfg = GridConfig(
        domain_min=_triple(sec, "grid", "domain_min", DEFAULT_GRID.domain_min, float),
        domain_max=_triple(sec, "grid", "domain_max", DEFAULT_GRID.domain_max, float),
        root_refine=_triple(sec, "grid", "root_refine", DEFAULT_GRID.root_refine, int),
        sub_refine=_triple(sec, "grid", "sub_refine", DEFAULT_GRID.sub_refine, int),
        block_size=_triple(sec, "grid", "block_size", DEFAULT_GRID.block_size, int),
        max_depth=_int(sec, "grid", "max_depth", DEFAULT_GRID.max_depth),
    )
    _reject_leftovers(sec, "grid")
    return cfg


def _parse_fluid(sec: dict) -> FlowParams:
    psec = _mapping(sec.pop("poisson", None), "fluid.poisson")
    defaults = PoissonController()
    poisson = PoissonController(
        omega=_float(psec, "fluid.poisson", "omega", defaults.omega),
        nu_pre=_int(psec, "fluid.poisson", "nu_pre", defaults.nu_pre),
        nu_post=_int(psec, "fluid.poisson", "nu_post", defaults.nu_post),
        eps_rel=_float(psec, "fluid.poisson", "eps_rel", defaults.eps_rel),
        div_target=_float(psec, "fluid.poisson", "div_target", defaults.div_target),
        max_cycles=_int(psec, "fluid.poisson", "max_cycles", defaults.max_cycles),
    )
    _reject_leftovers(psec, "fluid.poisson")

    conv = sec.pop("convection", 1.0)
    if isinstance(conv, bool):
        conv = 1.0 if conv else 0.0
    elif not isinstance(conv, (int, float)):
        raise ConfigError(f"fluid.convection: expected a number, got {conv!r}")
    fd = FlowParams()
    params = FlowParams(
        nu=_float(sec, "fluid", "nu", fd.nu),
        rho=_float(sec, "fluid", "rho", fd.rho),
        body_force=_triple(sec, "fluid", "body_force", fd.body_force, float),
        convection=float(conv),
        safety=_float(sec, "fluid", "safety", fd.safety),
        dt_max=_float(sec, "fluid", "dt_max", fd.dt_max),
        poisson=poisson,
    )
    _reject_leftovers(sec, "fluid")
    if params.nu <= 0.0:
        raise ConfigError(f"fluid.nu must be positive, got {params.nu}")
    if params.rho <= 0.0:
        raise ConfigError(f"fluid.rho must be positive, got {params.rho}")
    return params


def _parse_boundaries(sec: dict) -> BoundaryConditions:
    bd = BoundaryConditions()
    bcond = BoundaryConditions(
        x_minus=_str(sec, "boundaries", "x_minus", bd.x_minus),
        x_plus=_str(sec, "boundaries", "x_plus", bd.x_plus),
        y_minus=_str(sec, "boundaries", "y_minus", bd.y_minus),
        y_plus=_str(sec, "boundaries", "y_plus", bd.y_plus),
        z_minus=_str(sec, "boundaries", "z_minus", bd.z_minus),
        z_plus=_str(sec, "boundaries", "z_plus", bd.z_plus),
        inflow_velocity=_float(sec, "boundaries", "inflow_velocity",
                               bd.inflow_velocity),
        inflow_profile=_str(sec, "boundaries", "inflow_profile", bd.inflow_profile),
        outflow_pressure=_float(sec, "boundaries", "outflow_pressure",
                                bd.outflow_pressure),
    )
    _reject_leftovers(sec, "boundaries")
    return bcond


def _parse_sim(sec: dict, max_depth: int) -> SimSettings:
    sd = SimSettings()
    sim = SimSettings(
        workers=_int(sec, "sim", "workers", sd.workers),
        steps=_int(sec, "sim", "steps", sd.steps),
        initial_depth=_int(sec, "sim", "initial_depth", sd.initial_depth),
        snapshot_every=_int(sec, "sim", "snapshot_every", sd.snapshot_every),
        checkpoint=_opt_str(sec, "sim", "checkpoint"),
    )
    _reject_leftovers(sec, "sim")
    if sim.workers < 0:
        raise ConfigError(f"sim.workers must be >= 0, got {sim.workers}")
    if sim.steps < 0:
        raise ConfigError(f"sim.steps must be >= 0, got {sim.steps}")
    if not 0 <= sim.initial_depth <= max_depth:
        raise ConfigError(
            f"sim.initial_depth {sim.initial_depth} outside 0..{max_depth}"
        )
    if sim.snapshot_every < 1:
        raise ConfigError(
            f"sim.snapshot_every must be >= 1, got {sim.snapshot_every}"
        )
    return sim


def _parse_porous(sec: dict) -> PorousSettings:
    pd = PorousSettings()
    porous = PorousSettings(
        sieve=_opt_str(sec, "porous", "sieve"),
        spheres=_opt_str(sec, "porous", "spheres"),
        solid_fraction=_float(sec, "porous", "solid_fraction", pd.solid_fraction),
        seed=_int(sec, "porous", "seed", pd.seed),
    )
    _reject_leftovers(sec, "porous")
    if not 0.0 < porous.solid_fraction < 1.0:
        raise ConfigError(
            f"porous.solid_fraction must be in (0, 1), got {porous.solid_fraction}"
        )
    return porous


def _parse_service(sec: dict) -> ServiceSettings:
    sd = ServiceSettings()
    svc = ServiceSettings(
        listen=_endpoint(sec, "service", "listen"),
        ws_listen=_endpoint(sec, "service", "ws_listen"),
        max_sessions=_int(sec, "service", "max_sessions", sd.max_sessions),
    )
    _reject_leftovers(sec, "service")
    if svc.max_sessions < 1:
        raise ConfigError(
            f"service.max_sessions must be >= 1, got {svc.max_sessions}"
        )
    return svc


# ---- public API ----------------------------------------------------------


def parse_config(text: str) -> RunConfig:
    """Parse and validate a YAML job description."""
    try:
        root = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    root = _mapping(root, "config")
    if "schema" not in root:
        raise ConfigError("missing schema version")
    version = root.pop("schema")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})"
        )
    grid = _parse_grid(_mapping(root.pop("grid", None), "grid"))
    cfg = RunConfig(
        grid=grid,
        fluid=_parse_fluid(_mapping(root.pop("fluid", None), "fluid")),
        boundaries=_parse_boundaries(
            _mapping(root.pop("boundaries", None), "boundaries")
        ),
        sim=_parse_sim(_mapping(root.pop("sim", None), "sim"), grid.max_depth),
        porous=_parse_porous(_mapping(root.pop("porous", None), "porous")),
        service=_parse_service(_mapping(root.pop("service", None), "service")),
    )
    _reject_leftovers(root, "config")
    return cfg


def to_dict(cfg: RunConfig) -> dict:
    """Plain-scalar dict mirroring the file layout."""
    return {
        "schema": SCHEMA_VERSION,
        "grid": {
            "domain_min": list(cfg.grid.domain_min),
            "domain_max": list(cfg.grid.domain_max),
            "root_refine": list(cfg.grid.root_refine),
            "sub_refine": list(cfg.grid.sub_refine),
            "block_size": list(cfg.grid.block_size),
            "max_depth": cfg.grid.max_depth,
        },
        "fluid": {
            "nu": cfg.fluid.nu,
            "rho": cfg.fluid.rho,
            "body_force": list(cfg.fluid.body_force),
            "convection": cfg.fluid.convection,
            "safety": cfg.fluid.safety,
            "dt_max": cfg.fluid.dt_max,
            "poisson": {
                "omega": cfg.fluid.poisson.omega,
                "nu_pre": cfg.fluid.poisson.nu_pre,
                "nu_post": cfg.fluid.poisson.nu_post,
                "eps_rel": cfg.fluid.poisson.eps_rel,
                "div_target": cfg.fluid.poisson.div_target,
                "max_cycles": cfg.fluid.poisson.max_cycles,
            },
        },
        "boundaries": {
            "x_minus": cfg.boundaries.x_minus,
            "x_plus": cfg.boundaries.x_plus,
            "y_minus": cfg.boundaries.y_minus,
            "y_plus": cfg.boundaries.y_plus,
            "z_minus": cfg.boundaries.z_minus,
            "z_plus": cfg.boundaries.z_plus,
            "inflow_velocity": cfg.boundaries.inflow_velocity,
            "inflow_profile": cfg.boundaries.inflow_profile,
            "outflow_pressure": cfg.boundaries.outflow_pressure,
        },
        "sim": {
            "workers": cfg.sim.workers,
            "steps": cfg.sim.steps,
            "initial_depth": cfg.sim.initial_depth,
            "snapshot_every": cfg.sim.snapshot_every,
            "checkpoint": cfg.sim.checkpoint,
        },
        "porous": {
            "sieve": cfg.porous.sieve,
            "spheres": cfg.porous.spheres,
            "solid_fraction": cfg.porous.solid_fraction,
            "seed": cfg.porous.seed,
        },
        "service": {
            "listen": None if cfg.service.listen is None
            else "%s:%d" % cfg.service.listen,
            "ws_listen": None if cfg.service.ws_listen is None
            else "%s:%d" % cfg.service.ws_listen,
            "max_sessions": cfg.service.max_sessions,
        },
    }


class _Dumper(yaml.SafeDumper):
    """Block-style mappings with inline lists: one key per line, diffable."""


_Dumper.add_representer(
    list,
    lambda d, data: d.represent_sequence(
        "tag:yaml.org,2002:seq", data, flow_style=True
    ),
)


def dump_config(cfg: RunConfig) -> str:
    """Serialize so that parsing the result reproduces ``cfg`` exactly."""
    return yaml.dump(to_dict(cfg), Dumper=_Dumper, sort_keys=False)


def load_config(path) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read())


def save_config(cfg: RunConfig, path):
    with open(path, "w") as f:
        f.write(dump_config(cfg))
