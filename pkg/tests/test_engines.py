"""Update loops, schedules, batch schedules and run records."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchsvgd.engines import (
    CSV_HEADER,
    ConfigurationError,
    DivergenceError,
    Metrics,
    RunConfig,
    RunRecord,
    StepSchedule,
    batch_drift,
    expected_counts,
    gb_batches,
    gb_svgd_run,
    make_schedule,
    rng_streams,
    run,
    svgd_step,
    theory_eta,
    vp_roles,
    vp_svgd_run,
)
from batchsvgd.kernels import KernelConstants, KernelSpec, analytic_constants, kernel_eval, kernel_grad2
from batchsvgd.particles import REAL, VIRTUAL, ParticleEnsemble
from batchsvgd.targets import TargetModel, gaussian_target

RBF = KernelSpec("rbf", 1.0)


def std_normal(d):
    return gaussian_target(np.zeros(d), np.ones(d))


def const(gamma):
    return StepSchedule("constant", gamma=gamma)


class TestSvgdStep:
    @pytest.mark.parametrize("h", [0.1, 1.0, 7.0])
    def test_single_particle_is_gradient_descent(self, h):
        out = svgd_step(np.array([[2.0, 0.0]]), std_normal(2), KernelSpec("rbf", h), 0.1)
        np.testing.assert_allclose(out.data, [[1.8, 0.0]], rtol=1e-15)

    def test_gamma_zero_bitwise(self):
        X = np.random.default_rng(0).normal(size=(6, 3))
        out = svgd_step(X, std_normal(3), RBF, 0.0)
        assert np.array_equal(out.data, X)
        assert out.data is not X

    def test_symmetric_pair(self):
        x0 = np.array([0.7, -1.2, 0.4])
        for fam in ("rbf", "imq", "matern32", "laplace"):
            ens = ParticleEnsemble(np.vstack([x0, -x0]))
            for _ in range(10):
                ens = svgd_step(ens, std_normal(3), KernelSpec(fam, 1.0), 0.2)
                np.testing.assert_allclose(ens.data[0], -ens.data[1], rtol=0, atol=1e-15)
            assert ens.step_index == 10

    def test_gradient_once_per_particle(self):
        t = std_normal(2)
        svgd_step(np.random.default_rng(1).normal(size=(9, 2)), t, RBF, 0.1)
        assert t.oracle_calls.value == 9

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(5, 2))
        t = std_normal(2)
        gamma = 0.3
        ref = np.array(
            [
                X[i]
                - gamma / 5 * sum(kernel_eval(RBF, X[i], X[j]) * X[j] - kernel_grad2(RBF, X[i], X[j]) for j in range(5))
                for i in range(5)
            ]
        )
        np.testing.assert_allclose(svgd_step(X, t, RBF, gamma).data, ref, rtol=1e-13, atol=1e-15)

    def test_divergence(self):
        t = TargetModel(
            d=1,
            potential_fn=lambda X: X[:, 0],
            grad_fn=lambda X: np.where(X > 0, np.inf, 1.0),
            L=1.0,
            alpha=1.0,
            d1=1.0,
            d2=0.0,
        )
        with pytest.raises(DivergenceError) as info:
            svgd_step(np.array([[-1.0], [1.0]]), t, RBF, 0.1)
        assert info.value.step == 0

    def test_rejects_negative_gamma(self):
        with pytest.raises(ValueError):
            svgd_step(np.zeros((1, 1)), std_normal(1), RBF, -0.1)


class TestVp:
    def test_zero_steps(self):
        cfg = RunConfig("vp", n=5, K=3, T=0, seed=4)
        init = np.random.default_rng(0).normal(size=(5, 2))
        out, rec = vp_svgd_run(cfg, std_normal(2), RBF, init=init)
        assert np.array_equal(out.data, init)
        assert rec.distinct_grad_evals == 0 and rec.paper_convention_grad_evals == 0

    def test_single_step_unrolled(self):
        cfg = RunConfig("vp", n=4, K=1, T=1, schedule=const(0.25), output_time="final", seed=3)
        init = np.random.default_rng(5).normal(size=(5, 2))
        out, _ = vp_svgd_run(cfg, std_normal(2), RBF, init=init)
        y = init[0]
        for s in range(1, 5):
            x = init[s]
            h = kernel_eval(RBF, x, y) * y - kernel_grad2(RBF, x, y)
            np.testing.assert_allclose(out.data[s - 1], x - 0.25 * h, rtol=1e-14)

    def test_default_init_is_uniform_ball(self):
        cfg = RunConfig("vp", n=50, K=2, T=0, seed=11)
        out, _ = vp_svgd_run(cfg, std_normal(3), RBF)
        assert np.all(np.linalg.norm(out.data, axis=1) <= math.sqrt(3) + 1e-12)

    def test_determinism(self):
        cfg = RunConfig("vp", n=100, K=10, T=200, schedule=const(0.05), seed=123)
        a_out, a_rec = vp_svgd_run(cfg, std_normal(5), RBF)
        b_out, b_rec = vp_svgd_run(cfg, std_normal(5), RBF)
        assert np.array_equal(a_out.data, b_out.data)
        a_rec.wall_time = b_rec.wall_time = 0.0
        assert a_rec.to_json() == b_rec.to_json()
        assert a_rec.csv_lines() == b_rec.csv_lines()

    def test_random_output_time(self):
        cfg = RunConfig("vp", n=6, K=2, T=9, schedule=const(0.1), seed=8)
        out, rec = vp_svgd_run(cfg, std_normal(2), RBF)
        assert 0 <= rec.S < 9
        assert np.array_equal(out.data, rec.trajectory[rec.S])
        assert out.step_index == rec.S
        assert rec.trajectory.shape == (10, 6, 2)

    def test_roles(self):
        cfg = RunConfig("vp", n=3, K=2, T=2)
        assert vp_roles(cfg) == (VIRTUAL,) * 4 + (REAL,) * 3
        _, rec = vp_svgd_run(cfg, std_normal(1), RBF)
        assert rec.extra["roles"] == {"virtual": 4, "real": 3}

    def test_batches_are_consecutive_blocks(self):
        cfg = RunConfig("vp", n=3, K=2, T=3, seed=0)
        _, rec = vp_svgd_run(cfg, std_normal(1), RBF)
        assert rec.batches == [[0, 1], [2, 3], [4, 5]]

    def test_structural_independence(self):
        cfg = RunConfig("vp", n=6, K=2, T=8, schedule=const(0.2), output_time="final", seed=2)
        rng = np.random.default_rng(3)
        init = rng.normal(size=(22, 2))
        _, base = vp_svgd_run(cfg, std_normal(2), RBF, init=init)
        for j in range(6):
            pert = init.copy()
            pert[16 + j] += rng.normal(size=2)
            _, rec = vp_svgd_run(cfg, std_normal(2), RBF, init=pert)
            others = [i for i in range(6) if i != j]
            assert np.array_equal(rec.trajectory[:, others], base.trajectory[:, others])
            assert not np.array_equal(rec.trajectory[:, j], base.trajectory[:, j])

    def test_permutation_equivariance(self):
        cfg = RunConfig("vp", n=7, K=3, T=5, schedule=const(0.1), seed=9)
        rng = np.random.default_rng(4)
        init = rng.normal(size=(22, 3))
        perm = rng.permutation(7)
        pinit = init.copy()
        pinit[15:] = init[15:][perm]
        a, _ = vp_svgd_run(cfg, std_normal(3), RBF, init=init)
        b, _ = vp_svgd_run(cfg, std_normal(3), RBF, init=pinit)
        assert np.array_equal(b.data, a.data[perm])

    @pytest.mark.parametrize("algorithm", ["vp", "gb", "svgd"])
    def test_translation_equivariance(self, algorithm):
        c = np.array([3.0, -2.0])
        T = 20
        cfg = RunConfig(algorithm, n=8, K=2, T=T, schedule=const(0.1), seed=5, retain_trajectory=True)
        m = cfg.state_size
        init = np.random.default_rng(6).normal(size=(m, 2))
        _, a = run(cfg, std_normal(2), KernelSpec("imq", 1.0), init=init)
        _, b = run(cfg, gaussian_target(c, np.ones(2)), KernelSpec("imq", 1.0), init=init + c)
        drift = np.abs(b.trajectory - c - a.trajectory).max(axis=(1, 2))
        assert np.all(drift <= 1e-9 * (1 + np.arange(T + 1)))


class TestGb:
    def test_full_batch_equals_svgd_step(self):
        for fam in ("rbf", "matern32", "laplace"):
            spec = KernelSpec(fam, 1.0)
            init = np.random.default_rng(7).normal(size=(6, 3))
            cfg = RunConfig("gb", n=6, K=6, T=1, schedule=const(0.3), output_time="final")
            out, _ = gb_svgd_run(cfg, std_normal(3), spec, init=init)
            ref = svgd_step(init, std_normal(3), spec, 0.3)
            assert np.array_equal(out.data, ref.data)

    def test_zero_steps(self):
        init = np.random.default_rng(8).normal(size=(4, 2))
        out, _ = gb_svgd_run(RunConfig("gb", n=4, K=2, T=0), std_normal(2), RBF, init=init)
        assert np.array_equal(out.data, init)

    def test_disjoint_prefix(self):
        cfg = RunConfig("gb", n=8, K=2, T=3, seed=21)
        _, rec = gb_svgd_run(cfg, std_normal(1), RBF)
        flat = [i for b in rec.batches for i in b]
        assert len(set(flat)) == 6
        perm = rng_streams(21)[1].permutation(8)
        for t, b in enumerate(rec.batches):
            assert b == sorted(perm[2 * t : 2 * t + 2].tolist())

    def test_epoch_restart(self):
        batches = gb_batches(5, 2, 6, "without_replacement", np.random.default_rng(0))
        for epoch in (batches[0:2], batches[2:4], batches[4:6]):
            flat = np.concatenate(epoch)
            assert len(set(flat.tolist())) == 4

    def test_with_replacement(self):
        batches = gb_batches(5, 3, 50, "with_replacement", np.random.default_rng(1))
        for b in batches:
            assert len(b) == 3 and np.all(np.diff(b) >= 0) and b.min() >= 0 and b.max() < 5

    def test_explicit_batches_validated(self):
        cfg = RunConfig("gb", n=4, K=2, T=2)
        with pytest.raises(ConfigurationError):
            gb_svgd_run(cfg, std_normal(1), RBF, batches=[[0, 1]])

    def test_k_greater_than_n(self):
        with pytest.raises(ConfigurationError, match="K <= n"):
            RunConfig("gb", n=3, K=4, T=1)

    def test_only_batch_gradients(self):
        t = std_normal(2)
        cfg = RunConfig("gb", n=10, K=3, T=4)
        _, rec = gb_svgd_run(cfg, t, RBF)
        assert t.oracle_calls.value == 12 == rec.distinct_grad_evals


class TestCounts:
    def test_examples(self):
        assert expected_counts("vp", 100, 10, 20) == (200, 60_000)
        assert expected_counts("gb", 100, 40, 5) == (200, 20_000)
        assert expected_counts("svgd", 10, 1, 3) == (30, 300)
        for alg in ("vp", "gb", "svgd"):
            assert expected_counts(alg, 7, 2, 0) == (0, 0)

    @settings(max_examples=15, deadline=None)
    @given(n=st.integers(1, 12), K=st.integers(1, 4), T=st.integers(0, 4), alg=st.sampled_from(["vp", "gb", "svgd"]))
    def test_recorded_counts(self, n, K, T, alg):
        K = min(K, n) if alg == "gb" else K
        cfg = RunConfig(alg, n=n, K=K, T=T, compute_g_norm=False)
        _, rec = run(cfg, std_normal(2), RBF)
        assert (rec.distinct_grad_evals, rec.paper_convention_grad_evals) == expected_counts(alg, n, K, T)


class TestSchedules:
    def test_eta(self):
        assert theory_eta(2.0) == pytest.approx(1 / 3)
        assert theory_eta(1.0) == pytest.approx(1 / 4)

    def test_theory_rate(self):
        t = std_normal(2)
        kc = analytic_constants(RBF, 2)
        cfg = RunConfig("vp", n=10, K=1, T=400)
        s = make_schedule("theory", {"c": 0.01}, t, kc, cfg)
        assert s.binding == "rate"
        np.testing.assert_allclose(s.gamma, 0.01 * 2 ** (1 / 3) / 400 ** (2 / 3), rtol=1e-14)

    def test_cap_binds_exactly(self):
        t = std_normal(5)
        kc = analytic_constants(RBF, 5)
        cfg = RunConfig("vp", n=10, K=1, T=10)
        s = make_schedule("theory", {"c": 1e6}, t, kc, cfg)
        caps = [1 / (2 * kc.A1 * t.L), 1 / ((4 + t.L) * kc.B)]
        assert s.gamma == min(caps)
        assert s.binding in ("1/(2 A1 L)", "1/((4+L) B)")

    def test_missing_constants(self):
        with pytest.raises(ConfigurationError, match="kernel_constants"):
            make_schedule("theory", {"c": 1.0}, std_normal(1), None, RunConfig("vp", n=1))

    def test_missing_gamma(self):
        with pytest.raises(ConfigurationError):
            make_schedule("constant", {})

    @pytest.mark.parametrize("gamma", [0.0, -1.0, math.inf, math.nan])
    def test_positive_gamma(self, gamma):
        with pytest.raises(ConfigurationError):
            StepSchedule("constant", gamma=gamma)

    def test_adagrad_defaults(self):
        s = make_schedule("adagrad_momentum")
        assert (s.momentum, s.epsilon, s.base) == (0.9, 1e-6, 0.05)

    def test_adagrad_update(self):
        rng = np.random.default_rng(9)
        init = rng.normal(size=(4, 2))
        t = std_normal(2)
        cfg = RunConfig("gb", n=4, K=2, T=2, schedule=make_schedule("adagrad_momentum"), output_time="final", seed=1)
        out, rec = gb_svgd_run(cfg, t, RBF, init=init)
        X = init.copy()
        hist = None
        for b in rec.batches:
            Z = X[b]
            phi = batch_drift(RBF, X, Z, Z) / 2
            hist = phi**2 if hist is None else 0.9 * hist + 0.1 * phi**2
            X = X - 0.05 * phi / (1e-6 + np.sqrt(hist))
        np.testing.assert_allclose(out.data, X, rtol=1e-14)

    def test_runtime_feasibility_check(self):
        t = std_normal(2)
        kc = analytic_constants(RBF, 2)
        cfg = RunConfig("vp", n=2, K=1, T=5, seed=0)
        sched = make_schedule("theory", {"c": 1e6}, t, kc, cfg)
        far = np.full((7, 2), 40.0) + np.arange(7)[:, None]
        with pytest.raises(ConfigurationError, match="1/\\(2B\\)"):
            vp_svgd_run(RunConfig("vp", n=2, K=1, T=5, schedule=sched), t, RBF, init=far)

    def test_theory_with_empirical_constants(self):
        kc = KernelConstants(B=2.0, A1=1.5, A2=1.0, A3=1.0, source="empirical", probe="ball radius=5")
        s = make_schedule("theory", {"c": 1e6}, std_normal(2), kc, RunConfig("vp", n=1, T=3))
        assert s.caps["constants_source"] == "empirical"
        assert s.gamma == min(1 / 3.0, 1 / 10.0)


class TestRecord:
    def test_lengths_and_cadence(self):
        t = std_normal(2)
        cfg = RunConfig("gb", n=10, K=2, T=7, seed=1)
        metrics = Metrics(cadence=3, ksd_kernel=RBF, mmd_reference=np.zeros((3, 2)))
        _, rec = gb_svgd_run(cfg, t, RBF, metrics=metrics)
        assert len(rec.gamma) == len(rec.batches) == len(rec.g_norm) == 7
        assert len(rec.ksd2) == len(rec.mmd2) == len(rec.max_particle_norm) == 8
        due = [i for i, v in enumerate(rec.ksd2) if not math.isnan(v)]
        assert due == [0, 3, 6, 7]
        assert [i for i, v in enumerate(rec.mmd2) if not math.isnan(v)] == due

    def test_csv(self, tmp_path):
        cfg = RunConfig("svgd", n=3, T=2)
        _, rec = run(cfg, std_normal(1), RBF)
        p = tmp_path / "r.csv"
        rec.write_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == CSV_HEADER
        assert len(lines) == 4
        assert lines[-1].startswith("2,nan,nan,")
        assert float(lines[1].split(",")[1]) == 0.1

    def test_json_roundtrip(self):
        cfg = RunConfig("vp", n=3, K=2, T=4, track_potential=True, seed=7)
        _, rec = run(cfg, std_normal(2), RBF, metrics=Metrics(cadence=2, ksd_kernel=RBF))
        back = RunRecord.from_json(rec.to_json(include_potential=True))
        assert back.to_json(include_potential=True) == rec.to_json(include_potential=True)
        np.testing.assert_array_equal(back.potential_trace, rec.potential_trace)
        assert back.csv_lines() == rec.csv_lines()

    def test_g_norm_matches_definition(self):
        t = std_normal(2)
        cfg = RunConfig("gb", n=5, K=3, T=1, seed=2)
        init = np.random.default_rng(0).normal(size=(5, 2))
        _, rec = gb_svgd_run(cfg, t, RBF, init=init)
        from batchsvgd.discrepancy import rkhs_norm_g

        np.testing.assert_allclose(rec.g_norm[0], rkhs_norm_g(init[rec.batches[0]], t, RBF), rtol=1e-13)

    def test_laplace_g_norm_nan(self):
        cfg = RunConfig("gb", n=4, K=2, T=2)
        _, rec = gb_svgd_run(cfg, std_normal(1), KernelSpec("laplace", 1.0))
        assert all(math.isnan(g) for g in rec.g_norm)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"algorithm": "sgd", "n": 1},
            {"algorithm": "vp", "n": 0},
            {"algorithm": "vp", "n": 1, "K": 0},
            {"algorithm": "vp", "n": 1, "T": -1},
            {"algorithm": "vp", "n": 1, "sampling": "stratified"},
            {"algorithm": "vp", "n": 1, "output_time": "last"},
            {"algorithm": "vp", "n": 1, "seed": -1},
        ],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ConfigurationError):
            RunConfig(**kwargs)

    def test_init_shape_checked(self):
        with pytest.raises(ConfigurationError):
            run(RunConfig("vp", n=2, K=1, T=1), std_normal(2), RBF, init=np.zeros((2, 2)))
