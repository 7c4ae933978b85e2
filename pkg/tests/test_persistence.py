"""Run-configuration and checkpoint persistence tests.

The YAML config must survive a dump/parse round trip bitwise and
reject unknown keys by dotted path; checkpoints must rebuild the
hierarchy with identical uids, topology, and field bytes, and detect
damaged files instead of loading garbage.
"""

import dataclasses

import numpy as np
import pytest

from portwin.checkpoint import (
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from portwin.config import (
    PorousSettings,
    RunConfig,
    SCHEMA_VERSION,
    ServiceSettings,
    SimSettings,
    dump_config,
    load_config,
    parse_config,
    save_config,
)
from portwin.engine import FlowParams
from portwin.grid import ConfigError, GridConfig, build_hierarchy, refine
from portwin.solver.bc import BoundaryConditions
from portwin.solver.poisson import PoissonController


def custom_config() -> RunConfig:
    return RunConfig(
        grid=GridConfig(
            domain_min=(0.0, -0.5, 0.0),
            domain_max=(2.0, 0.5, 1.0),
            root_refine=(4, 2, 2),
            sub_refine=(2, 2, 2),
            block_size=(16, 16, 16),
            max_depth=2,
        ),
        fluid=FlowParams(
            nu=3.7e-5, rho=850.0, body_force=(0.0, 0.0, -9.81),
            convection=0.0, safety=0.3, dt_max=0.125,
            poisson=PoissonController(omega=0.75, eps_rel=1e-7, max_cycles=40),
        ),
        boundaries=BoundaryConditions(
            inflow_velocity=0.015, inflow_profile="parabolic_y",
            outflow_pressure=101325.0,
        ),
        sim=SimSettings(workers=4, steps=1250, initial_depth=2,
                        snapshot_every=5, checkpoint="out/state.pwck"),
        porous=PorousSettings(sieve="sieve.csv", spheres="spheres.csv",
                              solid_fraction=0.41, seed=99),
        service=ServiceSettings(listen=("0.0.0.0", 9401),
                                ws_listen=("127.0.0.1", 9402),
                                max_sessions=3),
    )


class TestConfigRoundTrip:
    def test_defaults_round_trip(self):
        cfg = RunConfig()
        assert parse_config(dump_config(cfg)) == cfg

    def test_custom_round_trip_bitwise(self):
        cfg = custom_config()
        back = parse_config(dump_config(cfg))
        assert back == cfg
        # float equality above is exact, not approximate
        assert back.fluid.nu.hex() == cfg.fluid.nu.hex()
        assert back.fluid.poisson.eps_rel.hex() == cfg.fluid.poisson.eps_rel.hex()

    def test_minimal_document_gives_defaults(self):
        assert parse_config(f"schema: {SCHEMA_VERSION}\n") == RunConfig()

    def test_partial_section_keeps_other_defaults(self):
        cfg = parse_config("schema: 1\nsim:\n  steps: 7\n")
        assert cfg.sim.steps == 7
        assert cfg.sim.workers == RunConfig().sim.workers
        assert cfg.grid == RunConfig().grid

    def test_file_round_trip(self, tmp_path):
        cfg = custom_config()
        path = tmp_path / "job.yaml"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_endpoint_forms(self):
        cfg = parse_config(
            "schema: 1\nservice:\n  listen: 127.0.0.1:0\n  ws_listen: null\n"
        )
        assert cfg.service.listen == ("127.0.0.1", 0)
        assert cfg.service.ws_listen is None

    def test_convection_accepts_bool(self):
        assert parse_config("schema: 1\nfluid: {convection: false}\n"
                            ).fluid.convection == 0.0
        assert parse_config("schema: 1\nfluid: {convection: true}\n"
                            ).fluid.convection == 1.0


class TestConfigRejection:
    @pytest.mark.parametrize("doc,needle", [
        ("schema: 1\nfluid:\n  viscosity: 1\n", "fluid.viscosity"),
        ("schema: 1\ngrid:\n  max_deep: 2\n", "grid.max_deep"),
        ("schema: 1\nfluid:\n  poisson: {cycles: 3}\n", "fluid.poisson.cycles"),
        ("schema: 1\nsteps: 5\n", "config.steps"),
        ("schema: 1\nboundaries: {x_min: wall}\n", "boundaries.x_min"),
    ])
    def test_unknown_key_reports_dotted_path(self, doc, needle):
        with pytest.raises(ConfigError, match=needle.replace(".", r"\.")):
            parse_config(doc)

    def test_missing_schema(self):
        with pytest.raises(ConfigError, match="schema"):
            parse_config("grid: {max_depth: 1}\n")

    def test_wrong_schema_version(self):
        with pytest.raises(ConfigError, match="schema"):
            parse_config("schema: 99\n")

    def test_invalid_yaml(self):
        with pytest.raises(ConfigError, match="invalid YAML"):
            parse_config("schema: [unclosed\n")

    def test_non_mapping_section(self):
        with pytest.raises(ConfigError, match="sim"):
            parse_config("schema: 1\nsim: [1, 2]\n")

    @pytest.mark.parametrize("doc", [
        "schema: 1\nfluid: {nu: viscous}\n",
        "schema: 1\nsim: {workers: 1.5}\n",
        "schema: 1\nsim: {workers: true}\n",
        "schema: 1\ngrid: {block_size: [8, 8]}\n",
        "schema: 1\ngrid: {block_size: [8, 8, 8.5]}\n",
        "schema: 1\nservice: {listen: 12345}\n",
        "schema: 1\nservice: {listen: 'host:notaport'}\n",
        "schema: 1\nboundaries: {inflow_profile: 7}\n",
    ])
    def test_bad_value_types(self, doc):
        with pytest.raises(ConfigError):
            parse_config(doc)

    @pytest.mark.parametrize("doc,needle", [
        ("schema: 1\nfluid: {nu: -1.0}\n", "nu"),
        ("schema: 1\nsim: {workers: -1}\n", "workers"),
        ("schema: 1\nsim: {initial_depth: 9}\n", "initial_depth"),
        ("schema: 1\nsim: {snapshot_every: 0}\n", "snapshot_every"),
        ("schema: 1\nporous: {solid_fraction: 1.2}\n", "solid_fraction"),
        ("schema: 1\nservice: {max_sessions: 0}\n", "max_sessions"),
        ("schema: 1\nservice: {listen: 'h:70000'}\n", "port"),
        ("schema: 1\nboundaries: {x_minus: slippery}\n", "x_minus"),
    ])
    def test_out_of_range_values(self, doc, needle):
        with pytest.raises(ConfigError, match=needle):
            parse_config(doc)


def painted_hierarchy():
    cfg = GridConfig(
        domain_min=(0.0, 0.0, 0.0),
        domain_max=(2.0, 1.0, 1.0),
        root_refine=(2, 1, 1),
        sub_refine=(2, 2, 2),
        block_size=(6, 6, 6),
        max_depth=2,
    )
    h = build_hierarchy(cfg, 1)
    refine(h, h.level_uids(1)[1])
    rng = np.random.default_rng(11)
    for d in h.data.values():
        for name in ("ux", "uy", "uz", "p"):
            d.field(name)[:] = rng.standard_normal(d.ux.shape)
        d.flags[:] = rng.integers(0, 6, d.flags.shape, dtype=np.uint8)
    return h


class TestCheckpoint:
    def test_round_trip_is_bitwise(self, tmp_path):
        h = painted_hierarchy()
        spheres = np.array([[0.5, 0.5, 0.5, 0.1], [1.5, 0.25, 0.75, 0.0625]])
        path = tmp_path / "state.pwck"
        save_checkpoint(path, h, 42, 1.25, spheres)
        h2, step, time, back = load_checkpoint(path)

        assert (step, time) == (42, 1.25)
        assert np.array_equal(back, spheres)
        assert h2.config == h.config
        assert sorted(h2.grids) == sorted(h.grids)
        assert h2.depth_index == h.depth_index
        for uid, g in h.grids.items():
            g2 = h2.grids[uid]
            assert (g2.parent, g2.children) == (g.parent, g.children)
            assert g2.bbox_min == g.bbox_min and g2.bbox_max == g.bbox_max
            assert g2.block_coords == g.block_coords and g2.depth == g.depth
            for name in ("ux", "uy", "uz", "p"):
                assert np.array_equal(h2.data[uid].field(name),
                                      h.data[uid].field(name))
            assert np.array_equal(h2.data[uid].flags, h.data[uid].flags)

    def test_save_is_deterministic(self, tmp_path):
        h = painted_hierarchy()
        save_checkpoint(tmp_path / "a.pwck", h, 1, 0.5, None)
        save_checkpoint(tmp_path / "b.pwck", h, 1, 0.5, None)
        assert (tmp_path / "a.pwck").read_bytes() == (tmp_path / "b.pwck").read_bytes()

    def test_refine_after_load_allocates_fresh_uids(self, tmp_path):
        h = painted_hierarchy()
        path = tmp_path / "state.pwck"
        save_checkpoint(path, h, 0, 0.0, None)
        h2, _, _, _ = load_checkpoint(path)
        new = refine(h2, h2.level_uids(1)[0])
        assert all(uid not in h.grids for uid in new)

    def test_sphere_set_object_accepted(self, tmp_path):
        from portwin.porous import SphereSet
        h = painted_hierarchy()
        rows = np.array([[0.25, 0.5, 0.5, 0.125]])
        ss = SphereSet(spheres=rows, seed=3, target_solid_fraction=0.2)
        path = tmp_path / "s.pwck"
        save_checkpoint(path, h, 0, 0.0, ss)
        _, _, _, back = load_checkpoint(path)
        assert np.array_equal(back, rows)

    def test_no_spheres_loads_empty(self, tmp_path):
        path = tmp_path / "s.pwck"
        save_checkpoint(path, painted_hierarchy(), 0, 0.0, None)
        _, _, _, back = load_checkpoint(path)
        assert back.shape == (0, 4)

    def test_overwrite_replaces_previous_file(self, tmp_path):
        h = painted_hierarchy()
        path = tmp_path / "s.pwck"
        save_checkpoint(path, h, 1, 0.5, None)
        save_checkpoint(path, h, 2, 1.0, None)
        _, step, time, _ = load_checkpoint(path)
        assert (step, time) == (2, 1.0)
        assert not (tmp_path / "s.pwck.tmp").exists()

    @pytest.mark.parametrize("mangle,needle", [
        (lambda b: b"XXXX" + b[4:], "magic"),
        (lambda b: b[:4] + b"\x63\x00" + b[6:], "version"),
        (lambda b: b[:200], "truncated"),
        (lambda b: b[:6], "truncated"),
        (lambda b: b + b"junk", "trailing"),
    ])
    def test_damaged_file_rejected(self, tmp_path, mangle, needle):
        path = tmp_path / "s.pwck"
        save_checkpoint(path, painted_hierarchy(), 3, 0.25, None)
        bad = tmp_path / "bad.pwck"
        bad.write_bytes(mangle(path.read_bytes()))
        with pytest.raises(CheckpointError, match=needle):
            load_checkpoint(bad)

    def test_not_a_checkpoint_at_all(self, tmp_path):
        bad = tmp_path / "bad.pwck"
        bad.write_bytes(b"schema: 1\n")
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
