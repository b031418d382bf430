import json
import subprocess
import sys

import pytest

from ltadmm.algorithms import RunConfig
from ltadmm.graph import build_ring
from ltadmm.metrics import AggregateRecord, Trace
from ltadmm.problems import generate_classification
from ltadmm.runner import (
    ConfigError,
    ExperimentConfig,
    expand_grid,
    load_config,
    parse_config,
    preset_fig1,
    preset_fig2,
    run_experiment,
    stopping_time,
    tune_gamma,
)

BASIC_INI = """
[experiment]
name = tiny

[topology]
ring = 4

[problem]
kind = logistic_nonconvex
seed = 3
dimension = 2
points_per_agent = 6
epsilon = 0.01

[algorithm]
variant = lt_admm
gamma = 0.05
rho = 1.0
tau = 2
batch_size = 1
outer_iterations = 8
master_seed = 1
monte_carlo_runs = 2

[cost]
t_g = 1.0
t_c = 2.0

[output]
dir = out
"""


class TestParsing:
    def test_basic_roundtrip(self):
        cfg = parse_config(BASIC_INI)
        assert cfg.name == "tiny"
        assert cfg.topology == {"ring": 4}
        assert cfg.problem["points_per_agent"] == 6
        assert cfg.algorithm["t_c"] == 2.0
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()

    def test_edge_list_form(self):
        text = BASIC_INI.replace("ring = 4", "n_agents = 3\nedges = 0-1, 1-2, 2-0")
        cfg = parse_config(text)
        assert cfg.topology["edges"] == [(0, 1), (1, 2), (2, 0)]

    def test_missing_section(self):
        with pytest.raises(ConfigError, match="topology"):
            parse_config("[problem]\nkind = logistic_nonconvex\n")

    def test_missing_algorithm_section(self):
        sections = BASIC_INI.split("[algorithm]")
        text = sections[0] + "[cost]" + sections[1].split("[cost]")[1]
        with pytest.raises(ConfigError, match="algorithm"):
            parse_config(text)

    def test_both_topology_forms_rejected(self):
        text = BASIC_INI.replace("ring = 4", "ring = 4\nn_agents = 3\nedges = 0-1, 1-2, 2-0")
        with pytest.raises(ConfigError, match="exactly one"):
            parse_config(text)

    def test_empty_sweep_axis_rejected(self):
        with pytest.raises(ConfigError, match="empty"):
            parse_config(BASIC_INI + "\n[sweep]\ngamma =\n")

    def test_unknown_sweep_axis_rejected(self):
        with pytest.raises(ConfigError, match="unknown sweep axis"):
            parse_config(BASIC_INI + "\n[sweep]\nwhatever = 1, 2\n")

    def test_bad_variant_rejected(self):
        with pytest.raises(ConfigError, match="algorithm"):
            parse_config(BASIC_INI.replace("variant = lt_admm", "variant = bogus"))

    def test_sweep_grid_product(self):
        cfg = parse_config(BASIC_INI + "\n[sweep]\ngamma = 0.1, 0.05\ntau = 2, 3\n")
        grid = expand_grid(cfg)
        assert len(grid) == 4
        assert {"gamma": 0.1, "tau": 2} in grid

    def test_explicit_points_take_precedence(self):
        cfg = parse_config(BASIC_INI)
        cfg.points = [{"tau": 2, "gamma": 0.1}, {"tau": 4, "gamma": 0.05}]
        assert expand_grid(cfg) == cfg.points


class TestRunExperiment:
    def test_outputs_and_determinism(self, tmp_path):
        cfg = parse_config(BASIC_INI + "\n[sweep]\ngamma = 0.05, 0.02\n")
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        r1 = run_experiment(cfg, out_dir=out1)
        r2 = run_experiment(cfg, out_dir=out2)
        names = sorted(p.name for p in out1.iterdir())
        assert names == sorted(p.name for p in out2.iterdir())
        assert len([n for n in names if n.endswith(".csv")]) == 2
        for name in names:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_manifest_contents(self, tmp_path):
        cfg = parse_config(BASIC_INI)
        result = run_experiment(cfg, out_dir=tmp_path)
        manifest = json.loads((tmp_path / "tiny_manifest.json").read_text())
        assert manifest["version"]
        assert manifest["seeds"] == {"master_seed": 1, "problem_seed": 3}
        assert manifest["config"]["problem"]["dimension"] == 2
        assert len(manifest["points"]) == 1
        point = manifest["points"][0]
        assert point["num_diverged"] == 0
        assert point["reference_charges"]["lt_admm"] == 2 * 1.0 + 2.0

    def test_rerun_from_manifest(self, tmp_path):
        cfg = parse_config(BASIC_INI)
        run_experiment(cfg, out_dir=tmp_path / "first")
        reloaded = load_config(tmp_path / "first" / "tiny_manifest.json")
        run_experiment(reloaded, out_dir=tmp_path / "second")
        a = (tmp_path / "first" / "tiny_point000.csv").read_bytes()
        b = (tmp_path / "second" / "tiny_point000.csv").read_bytes()
        assert a == b

    def test_csv_columns(self, tmp_path):
        cfg = parse_config(BASIC_INI)
        run_experiment(cfg, out_dir=tmp_path)
        header = (tmp_path / "tiny_point000.csv").read_text().splitlines()[0]
        assert header == "k,model_time,grad_norm_sq_mean,grad_norm_sq_std,consensus_err_mean,component_evals,comms"

    def test_dk_column_present_when_recorded(self, tmp_path):
        cfg = parse_config(BASIC_INI.replace("monte_carlo_runs = 2", "monte_carlo_runs = 2\nrecord_dk = true"))
        run_experiment(cfg, out_dir=tmp_path)
        header = (tmp_path / "tiny_point000.csv").read_text().splitlines()[0]
        assert "d_k_mean" in header.split(",")

    def test_workers_do_not_change_results(self, tmp_path):
        cfg = parse_config(BASIC_INI + "\n[sweep]\ngamma = 0.05, 0.02\n")
        r1 = run_experiment(cfg, out_dir=tmp_path / "serial", workers=1)
        r2 = run_experiment(cfg, out_dir=tmp_path / "pool", workers=2)
        for p1, p2 in zip(r1.manifest["points"], r2.manifest["points"]):
            a = (tmp_path / "serial" / p1["csv"]).read_bytes()
            b = (tmp_path / "pool" / p2["csv"]).read_bytes()
            assert a == b


def make_trace(grads, times=None):
    records = [
        AggregateRecord(
            k=k,
            model_time=float(times[k] if times else 10.0 * k),
            grad_norm_sq_mean=g,
            grad_norm_sq_std=0.0,
            consensus_err_mean=0.0,
            component_evals=k,
            comms=k,
        )
        for k, g in enumerate(grads)
    ]
    return Trace(config={}, records=records, replicates=[], num_diverged=0)


class TestStoppingTime:
    def test_never_crossed(self):
        trace = make_trace([1.0, 0.5, 0.2])
        assert stopping_time(trace, 1e-3) is None

    def test_monotone_crossing(self):
        grads = [10.0 ** (-k) for k in range(10)]
        trace = make_trace(grads)
        hit = stopping_time(trace, 1e-7)
        assert hit == {"k": 8, "model_time": 80.0}

    def test_noisy_first_crossing_counts(self):
        grads = [1.0, 0.09, 0.5, 0.01]
        trace = make_trace(grads)
        hit = stopping_time(trace, 0.1)
        # independent scan: index 1 is the first strictly-below record
        expected = next(i for i, g in enumerate(grads) if g < 0.1)
        assert hit["k"] == expected == 1

    def test_positive_threshold_required(self):
        with pytest.raises(ValueError):
            stopping_time(make_trace([1.0]), 0.0)


class TestTuning:
    def test_deterministic_and_member_of_grid(self):
        inst = generate_classification(3, 4, 2, 8)
        topo = build_ring(4)
        base = RunConfig(variant="lt_admm", gamma=0.1, rho=1.0, tau=2, outer_iterations=5, master_seed=2)
        grid = [0.2, 0.1, 0.05]
        r1 = tune_gamma(inst, topo, base, grid, budget_iterations=30, replicates=2)
        r2 = tune_gamma(inst, topo, base, grid, budget_iterations=30, replicates=2)
        assert r1.best_gamma == r2.best_gamma
        assert r1.best_gamma in grid
        assert set(r1.scores) == set(grid)

    def test_divergent_candidates_scored_inf(self):
        inst = generate_classification(3, 4, 2, 8)
        topo = build_ring(4)
        base = RunConfig(variant="exact", gamma=0.1, rho=1.0, tau=8, outer_iterations=5, master_seed=2, init_std=1e9)
        result = tune_gamma(inst, topo, base, [1e6, 0.05], budget_iterations=40, replicates=1)
        assert result.scores[1e6] == float("inf")
        assert result.best_gamma == 0.05


class TestPresets:
    def test_fig1_grid(self):
        cfg = preset_fig1()
        grid = expand_grid(cfg)
        assert len(grid) == 9
        variants = {p["variant"] for p in grid}
        assert variants == {"lt_admm", "lt_admm_vr", "lt_admm_vr_v2"}
        ratios = {p["tg_tc_ratio"] for p in grid}
        assert ratios == {0.1, 1.0, 10.0}

    def test_fig2_grid(self):
        cfg = preset_fig2()
        grid = expand_grid(cfg)
        assert [p["tau"] for p in grid] == [2, 4, 5, 8, 10, 16]
        assert cfg.stop_threshold == 1e-9


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "ltadmm.cli", *args],
            capture_output=True,
            text=True,
        )

    def test_run_subcommand(self, tmp_path):
        ini = tmp_path / "exp.ini"
        ini.write_text(BASIC_INI)
        proc = self.run_cli("run", str(ini), "--out", str(tmp_path / "out"))
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "out" / "tiny_manifest.json").exists()

    def test_config_error_exit_code(self, tmp_path):
        ini = tmp_path / "bad.ini"
        ini.write_text("[problem]\nkind = logistic_nonconvex\n")
        proc = self.run_cli("run", str(ini))
        assert proc.returncode == 2
        assert "config error" in proc.stderr

    def test_missing_file_exit_code(self):
        proc = self.run_cli("run", "/nonexistent/nope.ini")
        assert proc.returncode == 2

    def test_seed_override_changes_outputs(self, tmp_path):
        ini = tmp_path / "exp.ini"
        ini.write_text(BASIC_INI)
        self.run_cli("run", str(ini), "--out", str(tmp_path / "a"), "--seed", "1")
        self.run_cli("run", str(ini), "--out", str(tmp_path / "b"), "--seed", "99")
        a = (tmp_path / "a" / "tiny_point000.csv").read_bytes()
        b = (tmp_path / "b" / "tiny_point000.csv").read_bytes()
        assert a != b
        manifest = json.loads((tmp_path / "b" / "tiny_manifest.json").read_text())
        assert manifest["seeds"]["master_seed"] == 99

    def test_certify_subcommand(self, tmp_path):
        ini = tmp_path / "exp.ini"
        ini.write_text(BASIC_INI)
        proc = self.run_cli("certify", str(ini))
        assert proc.returncode == 0, proc.stderr
        report = json.loads(proc.stdout)
        assert report["regime"] == "sgd"
        assert "certified" in report

    def test_divergence_exit_code(self, tmp_path):
        ini = tmp_path / "exp.ini"
        text = BASIC_INI.replace("gamma = 0.05", "gamma = 80000.0").replace(
            "outer_iterations = 8", "outer_iterations = 60"
        )
        ini.write_text(text)
        proc = self.run_cli("run", str(ini), "--out", str(tmp_path / "out"))
        assert proc.returncode == 3
