import json
from pathlib import Path

import numpy as np
import pytest

from rsvol import cli
from rsvol.model import paper_example, save_model, ModelSpec

# frozen from tests/oracles/moment_constants_oracle.py
LAMBDA_2 = 1.5837563451776649746
C_2 = 15.279969318430856892


@pytest.fixture
def paper_file(tmp_path):
    f = tmp_path / "paper.json"
    save_model(paper_example(), f)
    return f


@pytest.fixture
def cir_file(tmp_path):
    f = tmp_path / "cir.json"
    save_model(ModelSpec(a=[4.0], b=[2.0], sigma=[2.0], theta=[0.5], q=[[0.0]], x0=2.0, i0=1), f)
    return f


def write_json(tmp_path, name, obj):
    f = tmp_path / name
    f.write_text(json.dumps(obj))
    return f


def manifest_ok(out: Path):
    man = json.loads((out / "manifest.json").read_text())
    for key in ("command", "tool_version", "model", "model_digest", "config", "seed", "outputs"):
        assert key in man
    for name in man["outputs"]:
        assert (out / name).exists()
    return man


class TestValidate:
    def test_paper(self, paper_file, capsys):
        assert cli.main(["validate", str(paper_file)]) == 0
        text = capsys.readouterr().out
        assert "global positive solution" in text and "Case2" in text

    def test_json(self, paper_file, capsys):
        assert cli.main(["validate", str(paper_file), "--json"]) == 0
        out = capsys.readouterr().out
        payload = json.loads(out[out.index("{"):])
        assert payload["recurrence"]["square_root"]["holds"] is True

    def test_malformed(self, tmp_path):
        f = tmp_path / "bad.json"
        f.write_text("{not json")
        assert cli.main(["validate", str(f)]) == 2

    def test_missing_file(self, tmp_path):
        assert cli.main(["validate", str(tmp_path / "nope.json")]) == 2

    def test_invalid_model(self, tmp_path, capsys):
        d = json.loads((Path(__file__).parents[1] / "models" / "paper.json").read_text())
        d["b"][0] = -1.0
        assert cli.main(["validate", str(write_json(tmp_path, "m.json", d))]) == 1
        assert "b(i) > 0" in capsys.readouterr().err

    def test_valid_uncertified(self, tmp_path, capsys):
        spec = ModelSpec(a=[1.0], b=[1.0], sigma=[2.0], theta=[0.5], q=[[0.0]], x0=1.0, i0=1)
        f = tmp_path / "m.json"
        save_model(spec, f)
        assert cli.main(["validate", str(f)]) == 0
        assert "failed:" in capsys.readouterr().out


class TestChain:
    def test_paper(self, paper_file, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["chain", str(paper_file), "--out-dir", str(out), "--t-end", "100"]) == 0
        res = json.loads((out / "chain.json").read_text())
        np.testing.assert_allclose(res["pi"], cli.PAPER_PI, atol=5e-4)
        np.testing.assert_allclose(res["P_delta"], cli.PAPER_P_DELTA, atol=1e-4)
        assert (out / "regime_path.csv").read_text().startswith("t_start,t_end,state\n")
        manifest_ok(out)

    def test_single_regime(self, cir_file, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["chain", str(cir_file), "--out-dir", str(out)]) == 0
        res = json.loads((out / "chain.json").read_text())
        assert res["pi"] == [1.0] and res["P_delta"] == [[1.0]] and res["n_jumps"] == 0

    def test_two_state_closed_form(self, tmp_path):
        spec = ModelSpec(a=[1, 1], b=[1, 1], sigma=[1, 1], theta=[0.5, 0.5],
                         q=[[-1.0, 1.0], [2.0, -2.0]], x0=1.0, i0=1)
        f = tmp_path / "m.json"
        save_model(spec, f)
        out = tmp_path / "o"
        assert cli.main(["chain", str(f), "--out-dir", str(out), "--delta", "0.5"]) == 0
        res = json.loads((out / "chain.json").read_text())
        np.testing.assert_allclose(res["pi"], [2 / 3, 1 / 3], atol=1e-12)
        e = np.exp(-1.5)
        np.testing.assert_allclose(res["P_delta"][0], [2 / 3 + e / 3, 1 / 3 - e / 3], atol=1e-12)


class TestBounds:
    def test_paper(self, paper_file, capsys):
        assert cli.main(["bounds", str(paper_file), "--p", "2"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["case"] == "Case2"
        assert payload["lambda_p"] == pytest.approx(LAMBDA_2, rel=1e-9)
        assert payload["C_p"] == pytest.approx(C_2, rel=1e-9)
        assert payload["theta_one_branch"] is False

    def test_cir_p1(self, cir_file, capsys):
        assert cli.main(["bounds", str(cir_file), "--p", "1"]) == 0
        assert json.loads(capsys.readouterr().out)["case"] == "Case1"

    def test_not_applicable_exit_zero(self, paper_file, capsys):
        assert cli.main(["bounds", str(paper_file), "--p", "0.5"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["case"] == "NotApplicable"
        assert payload["message"].startswith("no certificate")

    def test_theta_one_branch_flag(self, tmp_path, capsys):
        spec = ModelSpec(a=[1.0, 2.0], b=[2.0, 3.0], sigma=[0.5, 0.5], theta=[1.0, 0.75],
                         q=[[-1.0, 1.0], [1.0, -1.0]], x0=1.0, i0=1)
        f = tmp_path / "m.json"
        save_model(spec, f)
        out = tmp_path / "o"
        assert cli.main(["bounds", str(f), "--p", "2", "--out-dir", str(out)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["theta_one_branch"] is True
        manifest_ok(out)


class TestSimulate:
    ARGS = ["--t-end", "1", "--n-paths", "8", "--dt", "0.01", "--save-paths", "2"]

    def run(self, model, out):
        assert cli.main(["simulate", str(model), "--out-dir", str(out), *self.ARGS]) == 0
        return manifest_ok(out)

    def test_outputs_and_determinism(self, paper_file, tmp_path):
        m1 = self.run(paper_file, tmp_path / "a")
        m2 = self.run(paper_file, tmp_path / "b")
        assert m1["outputs"] == m2["outputs"]
        assert (tmp_path / "a" / "path_00000.csv").read_text().startswith("t,x,regime\n")
        assert not (tmp_path / "a" / "path_00002.csv").exists()
        assert m1["seed"] == cli.DEFAULT_SEED

    def test_seed_changes_output(self, paper_file, tmp_path):
        m1 = self.run(paper_file, tmp_path / "a")
        assert cli.main(["simulate", str(paper_file), "--out-dir", str(tmp_path / "b"),
                         "--seed", "7", *self.ARGS]) == 0
        m2 = manifest_ok(tmp_path / "b")
        assert m1["outputs"]["batch.json"] != m2["outputs"]["batch.json"]

    def test_zero_noise_is_ode(self, tmp_path):
        # model files require sigma > 0, so use a negligible sigma for the ODE limit
        spec = ModelSpec(a=[4.0], b=[2.0], sigma=[1e-9], theta=[0.5], q=[[0.0]], x0=0.5, i0=1)
        f = tmp_path / "m.json"
        save_model(spec, f)
        out = tmp_path / "o"
        assert cli.main(["simulate", str(f), "--out-dir", str(out), "--t-end", "1", "--dt", "0.001",
                         "--n-paths", "1"]) == 0
        last = (out / "path_00000.csv").read_text().strip().splitlines()[-1].split(",")
        assert float(last[1]) == pytest.approx(2.0 - 1.5 * np.exp(-2.0), abs=5e-3)

    def test_bad_config(self, paper_file, tmp_path):
        assert cli.main(["simulate", str(paper_file), "--out-dir", str(tmp_path), "--dt", "0.01",
                         "--delta", "0.003"]) == 1

    def test_bad_flag_exit_2(self, paper_file):
        with pytest.raises(SystemExit) as exc:
            cli.main(["simulate", str(paper_file), "--scheme", "rk4"])
        assert exc.value.code == 2


class TestStationary:
    def test_cir(self, cir_file, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["stationary", str(cir_file), "--out-dir", str(out), "--t-end", "500"]) == 0
        res = json.loads((out / "stationary.json").read_text())
        assert abs(res["mean"] - 2.0) <= 0.2
        assert res["burn_in"] == 5.0
        manifest_ok(out)

    def test_insufficient(self, cir_file, tmp_path):
        assert cli.main(["stationary", str(cir_file), "--out-dir", str(tmp_path), "--t-end", "6",
                         "--dt", "0.01"]) == 1


class TestReproduce:
    SMALL = ["--n-paths", "200", "--stationary-t-end", "300", "--occupation-t-end", "1e4"]

    def test_corrupted_q_fails(self, tmp_path, capsys):
        spec = paper_example()
        q = np.array(spec.q)
        q[0] = [-3.0, 1.0, 1.0, 1.0]
        f = tmp_path / "bad.json"
        save_model(spec.replace(q=q), f)
        out = tmp_path / "o"
        assert cli.main(["reproduce-paper", "--model", str(f), "--out-dir", str(out), *self.SMALL]) == 1
        summary = json.loads((out / "summary.json").read_text())
        rows = {r["name"]: r["passed"] for r in summary["comparisons"]}
        assert rows["pi"] is False
        assert "FAIL  pi" in capsys.readouterr().out
        manifest_ok(out)
