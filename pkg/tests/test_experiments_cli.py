import json

import numpy as np
import pytest

from virtual_channel import ConfigError
from virtual_channel.cli import main
from virtual_channel.experiments import (
    CYCLE_MS,
    PRESETS,
    ExperimentConfig,
    NoCrossoverError,
    ResultTable,
    build_channel,
    find_crossover,
    run,
    sweep_values,
)

GE = {"type": "gilbert_elliott", "p_bad": 0.2, "epsilons": [0.5, 0.125]}


def delay_config(**kw):
    doc = {"kind": "delay_sweep", "N": 114, "gamma": 0.2, "rho": 1 / 195, "channel": GE,
           "sweep": {"variable": "memory", "values": [0.1, 0.5]}, "policies": [1, 2]}
    doc.update(kw)
    return doc


class TestCrossover:
    def test_linear_synthetic(self):
        x = np.linspace(0, 1, 11)
        assert find_crossover(x, x, 1 - x) == pytest.approx(0.5, abs=1e-3)

    def test_bisection_refine(self):
        x = np.linspace(0, 1, 5)
        a, b = x**2, np.full(5, 0.3)
        got = find_crossover(x, a, b, refine=lambda t: 0.3 - t**2, tol=1e-6)
        assert got == pytest.approx(np.sqrt(0.3), abs=1e-5)

    def test_identical_curves(self):
        x = np.linspace(0, 1, 5)
        with pytest.raises(NoCrossoverError, match="no crossover in range"):
            find_crossover(x, x, x)

    def test_no_sign_change(self):
        x = np.linspace(0, 1, 5)
        with pytest.raises(NoCrossoverError):
            find_crossover(x, x, x + 1)


class TestConfig:
    def test_empty_range(self):
        with pytest.raises(ConfigError, match="empty") as info:
            sweep_values({"variable": "memory", "start": 0.5, "stop": 0.1, "step": 0.1})
        assert info.value.field == "sweep"

    def test_unknown_kind(self):
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_dict({"kind": "plot"})
        assert info.value.field == "kind"

    def test_missing_field(self):
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_dict({"kind": "delay_sweep", "channel": GE, "N": 114, "gamma": 0.2,
                                        "sweep": {"variable": "memory", "values": [0.3]}})
        assert info.value.field == "rho"

    def test_bad_policy_path(self):
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_dict(delay_config(policies=[1, "x"]))
        assert info.value.field == "policies[1]"

    def test_wrong_sweep_variable(self):
        cfg = delay_config(sweep={"variable": "doppler_hz", "values": [40]})
        with pytest.raises(ConfigError) as info:
            run(cfg)
        assert info.value.field == "sweep.variable"

    def test_range_inclusive(self):
        np.testing.assert_allclose(sweep_values({"variable": "d", "start": 40, "stop": 120, "step": 5}),
                                   np.arange(40, 121, 5))

    def test_channel_builder(self):
        assert build_channel(GE, memory=0.3, N=114).stationary[0] == pytest.approx(0.2)
        with pytest.raises(ConfigError) as info:
            build_channel({"type": "gilbert_elliott", "p_bad": 0.2}, N=114)
        assert info.value.field == "channel.memory"

    def test_presets_validate(self):
        for name in PRESETS:
            assert ExperimentConfig.preset(name).kind == PRESETS[name]["kind"]
        with pytest.raises(ConfigError):
            ExperimentConfig.preset("fig6")


class TestRun:
    def test_fig3_preset_deterministic(self):
        a = run(ExperimentConfig.preset("fig3"))
        b = run(ExperimentConfig.preset("fig3"))
        assert a.rows == b.rows
        assert a.metadata["config_hash"] == b.metadata["config_hash"]
        assert a.metadata["crossover_memory"] == pytest.approx(0.28, abs=0.02)

    def test_hash_distinguishes_configs(self):
        a = ExperimentConfig.from_dict(delay_config())
        b = ExperimentConfig.from_dict(delay_config(gamma=0.1))
        assert a.config_hash != b.config_hash

    def test_unstable_rows_flagged(self):
        t = run(delay_config(gamma=0.6))
        assert len(t.rows) == 2
        assert np.all(t.column("stable_ell1") == 0)
        assert np.all(np.isnan(t.column("mean_wait_ell1")))

    def test_units_ms(self):
        cycles = run(delay_config()).column("mean_wait_ell1")
        ms = run(delay_config(), units="ms").column("mean_wait_ell1")
        np.testing.assert_allclose(ms, cycles * CYCLE_MS)

    def test_jobs_preserve_order(self):
        doc = delay_config(sweep={"variable": "memory", "values": [0.1, 0.3, 0.5, 0.7]})
        assert run(doc, jobs=2).rows == run(doc, jobs=1).rows

    def test_pomdp_policy_table(self):
        doc = {"kind": "pomdp_policy", "N": 40, "channel": {**GE, "memory": 0.3, "epsilons": [1.0, 0.0]},
               "grid_size": 200}
        t = run(doc)
        assert t.columns == ["belief_good", "action", "code_rate"]
        assert t.metadata["monotone"]

    def test_mean_value_table(self):
        doc = {"kind": "pomdp_mean_value", "N": 30, "grid_size": 100,
               "channel": {"type": "gilbert_elliott", "p_bad": 0.2, "epsilons": [1.0, 0.0]},
               "sweep": {"variable": "memory", "values": [0.2, 0.8]}}
        t = run(doc)
        assert np.all(t.column("mean_value_reconfigurable") >= t.column("mean_value_fixed") - 1e-9)

    def test_simulate_table(self):
        doc = {"kind": "simulate", "N": 32, "K": 20, "gamma": 0.2, "rho": 0.05,
               "channel": {**GE, "memory": 0.3}, "simulation": {"horizon": 20000}}
        t = run(doc, seed=4)
        body = t.to_csv().split("policy_ell,K,metric", 1)[1]
        assert body == run(doc, seed=4).to_csv().split("policy_ell,K,metric", 1)[1]
        metrics = [r[2] for r in t.rows]
        assert "mean_queue" in metrics and "throughput_bpcu" in metrics


class TestResultTable:
    def test_csv_and_json(self):
        t = ResultTable(["x", "y"], [[1, 0.5], [2, float("nan")]], {"config_hash": "abc"})
        csv_text = t.to_csv()
        assert csv_text.startswith('# config_hash: "abc"\n')
        assert "x,y" in csv_text
        doc = json.loads(t.to_json())
        assert doc["rows"][1] == [2, None]

    def test_ragged_rows(self):
        with pytest.raises(ValueError):
            ResultTable(["x"], [[1, 2]])


class TestCli:
    def write(self, tmp_path, doc):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        return str(path)

    def test_preset_to_file(self, tmp_path, capsys):
        out = tmp_path / "fig3.csv"
        assert main(["preset", "fig3", "--out", str(out)]) == 0
        text = out.read_text()
        assert "crossover_memory" in text and "throughput_ell2" in text

    def test_json_stdout(self, tmp_path, capsys):
        assert main(["sweep", "--config", self.write(tmp_path, delay_config()), "--format", "json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["metadata"]["kind"] == "delay_sweep"

    def test_config_error_exit(self, tmp_path, capsys):
        doc = delay_config(sweep={"variable": "memory", "start": 1, "stop": 0, "step": 0.1})
        assert main(["sweep", "--config", self.write(tmp_path, doc)]) == 2
        assert "sweep" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["sweep", "--config", str(tmp_path / "nope.json")]) == 2

    def test_verb_kind_mismatch(self, tmp_path):
        assert main(["pomdp", "--config", self.write(tmp_path, delay_config())]) == 2

    def test_bad_channel_parameters(self, tmp_path):
        doc = delay_config(channel={**GE, "p_bad": 1.5})
        assert main(["sweep", "--config", self.write(tmp_path, doc)]) == 2

    def test_unstable_analyze_exit(self, tmp_path, capsys):
        doc = {"channel": {**GE, "memory": 0.3}, "N": 114, "K": 110, "gamma": 0.5, "rho": 1 / 195}
        assert main(["analyze", "--config", self.write(tmp_path, doc)]) == 3
        assert "unstable" in capsys.readouterr().err

    def test_analyze_ok(self, tmp_path, capsys):
        doc = {"channel": {**GE, "memory": 0.3}, "N": 114, "gamma": 0.2, "rho": 1 / 195,
               "policies": [1, 2], "thresholds": [10]}
        assert main(["analyze", "--config", self.write(tmp_path, doc)]) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if not l.startswith("#")]
        assert lines[0].split(",")[:3] == ["policy_ell", "K", "service_rate"]
        assert lines[0].endswith("ccdf_10")
        assert len(lines) == 3

    def test_plot_stub(self, tmp_path):
        stub = tmp_path / "plot.py"
        assert main(["preset", "fig3", "--out", str(tmp_path / "o.csv"), "--plot-stub", str(stub)]) == 0
        assert "matplotlib" in stub.read_text()
