import math

import numpy as np
import pytest

from rsvol import sde_engine as se
from rsvol.model import ModelSpec

from oracles.linear_sde import slope, strong_errors


def ode_spec(**kw):
    base = dict(a=[1.0], b=[1.0], sigma=[0.0], theta=[0.5], q=[[0.0]], x0=2.0, i0=1)
    base.update(kw)
    # sigma = 0 is outside the validated model domain; the engine does not care
    return ModelSpec(**base)


class TestSteps:
    def test_milstein_correction_vanishes(self):
        spec = ModelSpec(a=[1.0], b=[1.0], sigma=[1.0], theta=[0.5], q=[[0.0]], x0=1.0, i0=1)
        assert se.milstein_step(1.0, 0, 0.01, 0.1, spec) == pytest.approx(1.1, abs=1e-15)
        assert se.euler_step(1.0, 0, 0.01, 0.1, spec) == pytest.approx(1.1, abs=1e-15)

    def test_milstein_formula(self):
        spec = ModelSpec(a=[0.7], b=[1.3], sigma=[0.9], theta=[0.75], q=[[0.0]], x0=1.0, i0=1)
        x, dt, dB = 1.7, 0.02, -0.3
        expected = (x + (0.7 - 1.3 * x) * dt + 0.9 * x**0.75 * dB
                    + 0.5 * 0.81 * 0.75 * x**0.5 * (dB * dB - dt))
        assert se.milstein_step(x, 0, dt, dB, spec) == pytest.approx(expected, rel=1e-14)
        assert se.euler_step(x, 0, dt, dB, spec) == pytest.approx(
            x + (0.7 - 1.3 * x) * dt + 0.9 * x**0.75 * dB, rel=1e-14)

    @pytest.mark.parametrize("scheme", ["euler", "milstein"])
    def test_ode_limit(self, scheme):
        spec = ode_spec()
        n = 10_000
        x, _ = se.integrate_increments(spec, np.zeros(n), 1e-4, scheme=scheme)
        assert x[-1] == pytest.approx(1 + math.exp(-1), abs=1e-3)


LEVELS = [6, 7, 8, 9, 10]


@pytest.fixture(scope="module")
def errors():
    spec = ModelSpec(a=[1.0], b=[2.0], sigma=[1.0], theta=[1.0], q=[[0.0]], x0=1.0, i0=1)
    return strong_errors(se.integrate_increments, spec, LEVELS, n_paths=200)


class TestConvergence:
    LEVELS = LEVELS

    def test_milstein_order_one(self, errors):
        assert 0.8 <= slope(self.LEVELS, errors["milstein"]) <= 1.2

    def test_euler_order_half(self, errors):
        assert 0.35 <= slope(self.LEVELS, errors["euler"]) <= 0.65

    def test_errors_decrease(self, errors):
        assert np.all(np.diff(errors["milstein"]) < 0)


class TestSimulatePath:
    def test_paper_path_positive(self, paper):
        cfg = se.SimConfig(dt=1e-4, t_end=10.0)
        tr = se.simulate_path(paper, cfg, 0)
        assert tr.x.shape == tr.times.shape == tr.regimes.shape
        assert np.all(tr.x > 0)
        assert tr.x[0] == 0.2
        assert tr.regimes[0] == 2
        assert tr.reflections / tr.n_steps < 0.01

    def test_ode_trajectory(self):
        cfg = se.SimConfig(dt=1e-3, t_end=1.0)
        tr = se.simulate_path(ode_spec(), cfg)
        np.testing.assert_allclose(tr.x, 1 + np.exp(-tr.times), atol=1e-3)

    def test_bit_identical(self, paper):
        cfg = se.SimConfig(dt=1e-3, t_end=2.0)
        t1, t2 = se.simulate_path(paper, cfg, 3), se.simulate_path(paper, cfg, 3)
        assert t1.digest() == t2.digest()
        assert np.array_equal(t1.x, t2.x)
        assert se.simulate_path(paper, cfg, 4).digest() != t1.digest()

    def test_exact_mode_inserts_jumps(self, paper):
        cfg = se.SimConfig(dt=1e-2, t_end=5.0, chain_mode="exact")
        tr = se.simulate_path(paper, cfg, 0)
        steps = np.diff(tr.times)
        assert np.all(steps > 0) and steps.max() <= 1e-2 + 1e-12
        assert tr.times.shape[0] > 501  # grid refined at the jumps
        changes = tr.times[1:][tr.regimes[1:] != tr.regimes[:-1]]
        k = changes / 1e-2
        assert np.any(np.abs(k - np.round(k)) > 1e-6)
        assert np.all(tr.x > 0)

    def test_exact_mode_thinning_keeps_uniform_points(self, paper):
        cfg = se.SimConfig(dt=1e-2, t_end=5.0, chain_mode="exact", thin=10)
        tr = se.simulate_path(paper, cfg, 0)
        np.testing.assert_allclose(tr.times, np.arange(51) * 0.1, atol=1e-12)

    def test_thinning_matches_full(self, paper):
        full = se.simulate_path(paper, se.SimConfig(dt=1e-3, t_end=1.0), 1)
        thin = se.simulate_path(paper, se.SimConfig(dt=1e-3, t_end=1.0, thin=100), 1)
        np.testing.assert_array_equal(thin.x, full.x[::100])
        np.testing.assert_array_equal(thin.times, full.times[::100])

    def test_substeps_for_chain(self, paper):
        cfg = se.SimConfig(dt=1e-3, t_end=1.0, delta=1e-4)
        tr = se.simulate_path(paper, cfg, 0)
        assert tr.x.shape[0] == 1001

    def test_reflection_is_recorded(self):
        # huge dt and volatility force negative raw steps
        spec = ModelSpec(a=[0.1], b=[1.0], sigma=[3.0], theta=[0.5], q=[[0.0]], x0=0.1, i0=1)
        tr = se.simulate_path(spec, se.SimConfig(dt=0.1, t_end=50.0, scheme="euler"), 0)
        assert tr.reflections > 0
        assert np.all(tr.x > 0)

    def test_reject_mode(self):
        spec = ModelSpec(a=[0.5], b=[1.0], sigma=[1.0], theta=[0.5], q=[[0.0]], x0=0.5, i0=1)
        tr = se.simulate_path(spec, se.SimConfig(dt=0.05, t_end=20.0, positivity="reject",
                                                 scheme="euler"), 0)
        assert np.all(tr.x > 0)
        assert tr.reflections > 0

    def test_reject_mode_gives_up(self):
        spec = ModelSpec(a=[1e-9], b=[50.0], sigma=[1e-9], theta=[0.5], q=[[0.0]], x0=1.0, i0=1)
        # b dt = 5 > 1 makes every step negative regardless of the noise
        with pytest.raises(se.SimulationError, match="path 0"):
            se.simulate_path(spec, se.SimConfig(dt=0.1, t_end=1.0, positivity="reject",
                                                scheme="euler"), 0)


class TestConfig:
    @pytest.mark.parametrize("kw", [
        dict(dt=0.0, t_end=1.0),
        dict(dt=2.0, t_end=1.0),
        dict(dt=0.1, t_end=1.0, n_paths=0),
        dict(dt=0.1, t_end=1.0, delta=0.03),
        dict(dt=0.1, t_end=1.0, delta=0.2),
        dict(dt=0.1, t_end=1.0, thin=0),
        dict(dt=0.1, t_end=1.0, scheme="rk4"),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            se.SimConfig(**kw)


class TestBatch:
    def test_single_path_batch(self, paper):
        cfg = se.SimConfig(dt=1e-3, t_end=1.0, n_paths=1)
        batch = se.simulate_batch(paper, cfg)
        assert batch[0].digest() == se.simulate_path(paper, cfg, 0).digest()

    def test_serial_vs_concurrent(self, paper):
        cfg = se.SimConfig(dt=1e-3, t_end=2.0, n_paths=24, thin=10)
        serial = se.simulate_batch(paper, cfg)
        threaded = se.simulate_batch(paper, cfg, workers=4)
        assert serial.digests == threaded.digests
        assert serial.digest() == threaded.digest()

    def test_exact_mode_batch(self, paper):
        cfg = se.SimConfig(dt=1e-2, t_end=2.0, n_paths=4, chain_mode="exact")
        batch = se.simulate_batch(paper, cfg, workers=2)
        assert len(batch) == 4
        assert len(set(batch.digests)) == 4

    def test_manifest(self, paper, tmp_path):
        cfg = se.SimConfig(dt=1e-2, t_end=1.0, n_paths=3)
        batch = se.simulate_batch(paper, cfg)
        batch.write_manifest(tmp_path / "m.json")
        import json
        m = json.loads((tmp_path / "m.json").read_text())
        assert m["config"]["scheme"] == "milstein"
        assert len(m["digests"]) == 3
        assert m["model"]["a"] == [4.0, 1.5, 0.8, 0.55]

    def test_weak_mean_cir(self):
        a, b = 1.0, 2.0
        spec = ModelSpec(a=[a], b=[b], sigma=[1.0], theta=[0.5], q=[[0.0]], x0=3.0, i0=1)
        batch = se.simulate_batch(spec, se.SimConfig(dt=1e-3, t_end=1.0, n_paths=4000, thin=1000))
        x = np.array([tr.x[-1] for tr in batch])
        exact = a / b + (3.0 - a / b) * math.exp(-b)
        assert abs(x.mean() - exact) <= 3 * x.std(ddof=1) / math.sqrt(len(x))

    def test_trajectory_csv(self, paper, tmp_path):
        tr = se.simulate_path(paper, se.SimConfig(dt=0.1, t_end=1.0), 0)
        tr.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t,x,regime"
        assert lines[1] == "0.0,0.2,3"
        assert len(lines) == 12
