import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from critfusion import rsv
from critfusion.xcli import config as xconfig
from critfusion.xcli.config import ConfigError, load_config
from critfusion.xcli.csvout import fmt, read_csv
from critfusion.xcli.main import main
from critfusion.xcli.report import report
from critfusion.xcli.runner import RunManifest, run
from critfusion.xcli.svg import Figure

SMALL_LAB = [
    "task.n_train=256", "task.n_test=320", "epochs=4",
    "rsv.fixed_sample_count=8", "rsv.variation_sample_count=64",
    "net.encoder_width=16", "net.trunk_width=16",
]


def small(kind, *extra):
    return [f"{kind}.{s}" for s in SMALL_LAB] + list(extra)


def csv_bytes(directory: Path) -> dict[str, bytes]:
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*.csv"))}


class TestConfig:
    def test_defaults_filled(self):
        cfg = load_config(kind="lindyn")
        assert cfg.params.matrix == "appendix-pre" and cfg.params.tau == 100.0

    @pytest.mark.parametrize("override,key", [
        ("lindyn.taus=3", "lindyn.taus"),
        ("sed=3", "sed"),
        ("lindyn.models=[deep, medium]", "lindyn.models"),
    ])
    def test_bad_keys_named(self, override, key):
        with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
            load_config(kind="lindyn", overrides=[override])

    def test_nested_unknown_key_in_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("kind: deficit\ndeficit:\n  task:\n    noise_sd: 0.3\n")
        with pytest.raises(ConfigError, match=r"deficit\.task\.noise_sd"):
            load_config(p)

    def test_foreign_block_rejected(self):
        with pytest.raises(ConfigError, match="do not belong"):
            load_config(kind="deficit", overrides=["lindyn.tau=3"])

    def test_kind_mismatch(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"kind": "gradsim"}))
        with pytest.raises(ConfigError, match="subcommand"):
            load_config(p, kind="lindyn")

    def test_domain_validation_surfaces(self):
        with pytest.raises(ConfigError, match="not expressible"):
            load_config(kind="deficit", overrides=["deficit.task.class_count=6"])
        with pytest.raises(ConfigError, match="exceeds"):
            load_config(kind="deficit", overrides=["deficit.schedule.kind=blur", "deficit.schedule.length=99"])

    def test_json_and_flags(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"kind": "rsv-sim", "seed": 4, "rsv_sim": {"beta": 10}}))
        cfg = load_config(p, seed=9, jobs=3, overrides=["rsv_sim.rsv.fixed_sample_count=5"])
        assert cfg.seed == 9 and cfg.jobs == 3
        assert cfg.params.beta == 10 and cfg.params.rsv.fixed_sample_count == 5

    def test_override_syntax(self):
        with pytest.raises(ConfigError, match="key=value"):
            load_config(kind="lindyn", overrides=["lindyn.tau"])

    def test_hash_ignores_out_and_jobs(self):
        a = load_config(kind="lindyn", out="x", jobs=1)
        b = load_config(kind="lindyn", out="y", jobs=4)
        c = load_config(kind="lindyn", seed=1)
        assert a.hash() == b.hash() != c.hash()

    def test_env_out_root(self, monkeypatch, tmp_path):
        monkeypatch.setenv(xconfig.OUT_ENV, str(tmp_path))
        cfg = load_config(kind="lindyn")
        assert cfg.output_dir().parent == tmp_path


class TestFormats:
    def test_nine_significant_digits(self):
        assert fmt(1 / 3) == "0.333333333"
        assert fmt(123456789.123) == "123456789"
        assert fmt(-0.0) == "0" and fmt(float("nan")) == "nan"
        assert fmt(np.int64(7)) == "7" and fmt(True) == "true" and fmt(None) == ""

    def test_svg_is_deterministic_and_valid(self):
        def make():
            f = Figure("t", "x", "y").line([0, 1, 2], [0, 1, 4], "a").scatter([1], [2], "b", 1)
            f.errorbars([0, 1], [1, 2], [0.1, 0.2]).histogram(np.linspace(-1, 1, 5), [1, 0, 3, 2])
            f.line([0, 1], [1, 1], "d", 2, dashed=True)
            return f.render()
        assert make() == make()
        root = ET.fromstring(make())
        assert root.tag.endswith("svg")
        assert "stroke-dasharray" in make()


class TestRuns:
    def test_lindyn_artifacts(self, tmp_path):
        m = run(load_config(kind="lindyn", out=str(tmp_path / "a")))
        assert m.status == "ok" and m.verify(tmp_path / "a") == []
        rows = read_csv(tmp_path / "a" / "trajectories_deep.csv")
        assert list(rows[0]) == ["time", "source_index", "weight_norm", "variant"]
        assert {r["variant"] for r in rows} == {"full", "dropped"}
        assert "stroke-dasharray" in (tmp_path / "a" / "trajectories_deep.svg").read_text()
        names = {f["path"] for f in m.files}
        assert names == {p.name for p in (tmp_path / "a").iterdir()} - {"manifest.json"}

    def test_same_config_same_bytes(self, tmp_path):
        ma = run(load_config(kind="lindyn", out=str(tmp_path / "a")))
        mb = run(load_config(kind="lindyn", out=str(tmp_path / "b")))
        assert csv_bytes(tmp_path / "a") == csv_bytes(tmp_path / "b")
        assert ma.checksums() == mb.checksums()

    def test_tampering_detected(self, tmp_path):
        m = run(load_config(kind="lindyn", out=str(tmp_path / "a")))
        (tmp_path / "a" / "extra.txt").write_text("x")
        (tmp_path / "a" / "modes.csv").write_text("changed\n")
        problems = m.verify(tmp_path / "a")
        assert "unlisted file extra.txt" in problems and "checksum mismatch modes.csv" in problems

    def test_non_empty_out_rejected(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "a" / "keep").write_text("x")
        with pytest.raises(ConfigError, match="not empty"):
            run(load_config(kind="lindyn", out=str(tmp_path / "a")))
        m = run(load_config(kind="lindyn", out=str(tmp_path / "a"), overrides=["overwrite=true"]))
        assert m.status == "ok" and not (tmp_path / "a" / "keep").exists()

    def test_gradsim_spectral_closed_form(self, tmp_path):
        cfg = load_config(kind="gradsim", out=str(tmp_path / "g"), overrides=[
            "gradsim.init=spectral", "gradsim.phases=[{matrix: appendix-pre, steps: 3000}]"])
        run(cfg)
        rows = read_csv(tmp_path / "g" / "mode_strengths.csv")
        err = max(abs(float(r["simulated"]) - float(r["closed_form"])) for r in rows if r["closed_form"])
        assert err < 0.05

    @pytest.mark.filterwarnings("ignore:eta")
    def test_gradsim_divergence_is_failure(self, tmp_path):
        code = main(["gradsim", "--out", str(tmp_path / "g"), "--set", "gradsim.eta=5",
                     "--set", "gradsim.scale=1", "--set", "gradsim.phases=[{matrix: appendix-pre, steps: 500}]"])
        assert code == 3
        m = RunManifest.load(tmp_path / "g")
        assert m.status == "failed" and "diverged" in m.error
        assert m.verify(tmp_path / "g") == []

    def test_rsv_sim_from_dump(self, tmp_path):
        rng = np.random.default_rng(0)
        va, vb = rng.normal(size=(4, 8, 3)), rng.normal(size=(4, 8, 3))
        va[..., 0] *= 0  # unit 0 listens to b only
        rsv.write_activation_dump(tmp_path / "dump.csv", va, vb)
        run(load_config(kind="rsv-sim", out=str(tmp_path / "r"), overrides=[f"rsv_sim.activations={tmp_path / 'dump.csv'}"]))
        rows = read_csv(tmp_path / "r" / "rsv_values.csv")
        assert all(float(r["rsv"]) == -1.0 for r in rows if r["unit"] == "0")

    def test_rsv_sim_closed_form_columns(self, tmp_path):
        run(load_config(kind="rsv-sim", out=str(tmp_path / "r"), overrides=["rsv_sim.unit_count=50"]))
        rows = read_csv(tmp_path / "r" / "closed_form.csv")
        assert len(rows) == 50 and set(rows[0]) >= {"closed_form_rsv", "monte_carlo_rsv"}

    def test_deficit_run(self, tmp_path):
        code = main(["deficit", "--out", str(tmp_path / "d"), "--seed", "3",
                     *sum((["--set", s] for s in small("deficit", "deficit.write_dataset=true")), [])])
        assert code == 0
        d = tmp_path / "d"
        assert len(read_csv(d / "metrics.csv")) == 8
        assert read_csv(d / "summary.csv")[0]["seed"] == "3"
        assert (d / "dataset_train.csv").exists() and (d / "rsv_hist.svg").exists()
        assert RunManifest.load(d).verify(d) == []

    def test_deficit_divergence_exit_code(self, tmp_path):
        code = main(["deficit", "--out", str(tmp_path / "d"),
                     *sum((["--set", s] for s in small("deficit", "deficit.optim.lr=1e12", "deficit.net.trunk_activation=linear")), [])])
        assert code == 3
        assert RunManifest.load(tmp_path / "d").status == "failed"

    def test_config_error_exit_code(self, tmp_path, capsys):
        assert main(["deficit", "--set", "deficit.task.noise=1", "--out", str(tmp_path / "d")]) == 2
        assert "deficit.task.noise" in capsys.readouterr().err
        assert main(["lindyn", "--config", str(tmp_path / "missing.yaml")]) == 2


def sweep_args(out, jobs, *extra):
    sets = small("sweep", "sweep.mode=initial", "sweep.lengths=[0, 1, 2]", "sweep.n_seeds=2",
                 "sweep.post_epochs=2", *extra)
    return ["sweep", "--out", str(out), "--jobs", str(jobs)] + sum((["--set", s] for s in sets), [])


@pytest.fixture(scope="module")
def sweep_dirs(tmp_path_factory):
    base = tmp_path_factory.mktemp("sweeps")
    assert main(sweep_args(base / "j4", 4)) == 0
    assert main(sweep_args(base / "j1", 1)) == 0
    return base


class TestSweepAndReport:
    def test_layout(self, sweep_dirs):
        d = sweep_dirs / "j4"
        assert len([p for p in (d / "runs").iterdir() if p.is_dir()]) == 6
        assert len(read_csv(d / "sweep.csv")) == 6
        assert RunManifest.load(d).verify(d) == []

    def test_parallelism_does_not_change_bytes(self, sweep_dirs):
        a, b = csv_bytes(sweep_dirs / "j4"), csv_bytes(sweep_dirs / "j1")
        assert a.keys() == b.keys() and a == b

    def test_single_run_passthrough(self, tmp_path):
        d = tmp_path / "d"
        assert main(["deficit", "--out", str(d), *sum((["--set", x] for x in small("deficit")), [])]) == 0
        report([d], tmp_path / "rep")
        comp = read_csv(tmp_path / "rep" / "comparison.csv")
        summary = read_csv(d / "summary.csv")[0]
        assert len(comp) == 1 and comp[0]["n"] == "1"
        assert comp[0]["final_test_acc_mean"] == summary["final_test_acc"]
        assert float(comp[0]["final_test_acc_std"]) == 0.0

    def test_comparison_columns_and_delta(self, sweep_dirs, tmp_path):
        report([sweep_dirs / "j1"], tmp_path / "rep")
        comp = read_csv(tmp_path / "rep" / "comparison.csv")
        assert {"final_test_acc_mean", "final_test_acc_std"} <= set(comp[0])
        assert all(float(r["final_test_acc_std"]) >= 0 for r in comp)
        runs = read_csv(tmp_path / "rep" / "runs.csv")
        ctrl = {(r["seed"], r["epochs"]): float(r["final_test_acc"]) for r in runs if r["kind"] == "none"}
        for r in runs:
            if r["kind"] != "none":
                expect = float(r["final_test_acc"]) - ctrl[(r["seed"], r["epochs"])]
                assert float(r["delta_vs_control"]) == pytest.approx(expect, abs=1e-8)
        sweep = read_csv(sweep_dirs / "j1" / "sweep.csv")
        for g in comp:
            if g["length"] in ("control",):
                continue
            vals = [float(s["final_acc"]) for s in sweep if s["length"] == g["length"] and s["kind"] != "none"]
            if vals:
                assert float(g["final_test_acc_mean"]) == pytest.approx(np.mean(vals), abs=1e-8)
                assert float(g["final_test_acc_std"]) == pytest.approx(np.std(vals, ddof=1), abs=1e-8)

    def test_incompatible_variables_rejected(self, sweep_dirs, tmp_path):
        out = tmp_path / "s2"
        assert main(sweep_args(out, 1, "sweep.mode=sliding", "sweep.starts=[0, 1]", "sweep.length=1",
                               "sweep.lengths=[]")) == 0
        with pytest.raises(ConfigError, match="incompatible"):
            report([sweep_dirs / "j1", out], tmp_path / "rep")

    def test_report_rejects_non_runs(self, tmp_path):
        with pytest.raises(ConfigError):
            report([tmp_path], tmp_path / "rep")
        m = run(load_config(kind="lindyn", out=str(tmp_path / "l")))
        assert m.status == "ok"
        with pytest.raises(ConfigError, match="lindyn"):
            report([tmp_path / "l"], tmp_path / "rep2")

    def test_report_cli(self, sweep_dirs, tmp_path):
        assert main(["report", str(sweep_dirs / "j1"), "--out", str(tmp_path / "r")]) == 0
        for name in ("comparison.csv", "runs.csv", "final_test_acc.svg", "frac_polarized.svg", "rsv_hist.svg"):
            assert (tmp_path / "r" / name).exists()
