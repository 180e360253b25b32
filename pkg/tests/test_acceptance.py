"""Acceptance criteria, one test each.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary (and immediately, uncaptured, when the test finishes).
"""

import contextlib
import os
import sys
import time

import numpy as np
import pytest

import conftest
from geomanip.kinematics import PlanarChain, fk, inverse_kinematics, planar_jacobian
from geomanip.manipulability import manipulability
from geomanip.mixture import em_fit, gmr_condition, responsibilities
from geomanip.sim import cli, demos, export, gmm, selftest
from geomanip.sim.scenario import ScenarioConfig, load_skill, run_scenario
from geomanip.spd import distance, exp_map, geodesic, log_map
from geomanip.tensor import mandel_fold, mandel_vec
from geomanip.tracking import damped_pinv, gain_from_precision
from geomanip.errors import ConvergenceError, SingularConfigurationError

from test_mixture import A, B, geodesic_data, noisy_geodesic_data

SCENARIOS = os.path.join(os.path.dirname(__file__), os.pardir, "src", "geomanip", "scenarios")
FOUR = PlanarChain([1.0] * 4)
NOMINAL = np.array([0.2, 0.8, 0.8, 0.8])
PROJECTOR_TOL = 1e-10


@contextlib.contextmanager
def criterion(number, title):
    """Record and print one PASS/FAIL line; ``info`` collects the details."""
    info = {}
    start = time.perf_counter()
    try:
        yield info
    except BaseException as exc:
        line = f"criterion {number} FAIL {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        raise
    else:
        details = ", ".join(f"{k}={v}" for k, v in info.items())
        line = f"criterion {number} PASS {title} ({details}; {time.perf_counter() - start:.1f} s)"
    finally:
        conftest.ACCEPTANCE.append(line)
        sys.__stdout__.write("\n" + line + "\n")
        sys.__stdout__.flush()


def scenario(**fields):
    doc = {"schema_version": 1, "robot": {"lengths": [1.0] * 4}, "integration": {"dt": 0.01, "steps": 500}}
    doc.update(fields)
    return ScenarioConfig.from_document(doc)


def test_criterion_1_manifold_identities():
    with criterion(1, "manifold identity suite") as info:
        start = time.perf_counter()
        results = selftest.manifold_checks(np.random.default_rng(101), cases=120)
        elapsed = time.perf_counter() - start
        failed = [(name, err) for name, ok, err in results if not ok]
        assert not failed, f"identities above tolerance: {failed}"
        assert elapsed < 5.0, f"took {elapsed:.1f} s"
        info["cases"] = 120
        info["worst"] = f"{max(err for _, _, err in results):.1e}"


def test_criterion_2_derivative_oracles():
    with criterion(2, "finite-difference derivative suite") as info:
        start = time.perf_counter()
        results = selftest.derivative_checks(np.random.default_rng(202), sizes=(2, 3, 4, 5, 8), configs=20)
        elapsed = time.perf_counter() - start
        failed = [(name, err) for name, ok, err in results if not ok]
        assert not failed, f"derivatives above tolerance: {failed}"
        assert elapsed < 30.0, f"took {elapsed:.1f} s"
        info["checks"] = len(results)
        info["configs_per_size"] = 20


def decay_r2(dist):
    """R^2 of a line fit to log d over the first 80% of its log decay."""
    logd = np.log(dist)
    cut = logd[0] - 0.8 * (logd[0] - logd[-1])
    k = int(np.flatnonzero(logd <= cut)[0]) + 1
    x, y = np.arange(k), logd[:k]
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    return 1.0 - resid @ resid / np.sum((y - y.mean()) ** 2)


def test_criterion_3_exponential_stability():
    with criterion(3, "exponential stability") as info:
        rng = np.random.default_rng(2)
        start = time.perf_counter()
        worst_r2, worst_steps = 1.0, 0
        for _ in range(100):
            target = manipulability(FOUR, NOMINAL + rng.uniform(-0.4, 0.4, 4))
            # undamped, a few paths brush a rank loss of the manipulability
            # Jacobian and one Euler step jumps branches
            cfg = scenario(q0=NOMINAL.tolist(), controller={"type": "main", "gains": {"K_M": 5.0}, "damping": 0.05},
                           target={"matrix": target.tolist()},
                           integration={"dt": 0.01, "steps": 500, "stop_distance": 1e-6})
            tr = run_scenario(cfg, projector_tol=PROJECTOR_TOL)
            steps = tr.steps_to(1e-2)
            assert steps is not None, "target not reached within 500 steps"
            assert np.all(np.diff(tr.dist) < 0), "distance not monotone"
            worst_r2 = min(worst_r2, decay_r2(tr.dist))
            worst_steps = max(worst_steps, steps)
        elapsed = time.perf_counter() - start
        assert worst_r2 > 0.99, f"log-linear fit R^2 {worst_r2:.4f}"
        assert elapsed < 60.0, f"took {elapsed:.1f} s"
        info["targets"] = 100
        info["max_steps_to_1e-2"] = worst_steps
        info["min_R2"] = f"{worst_r2:.5f}"


def redundancy_cases(count=20, seed=0):
    """Start poses near the nominal one and targets taken from other poses
    with the same tip position, so both tasks are feasible together."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        q0 = NOMINAL + rng.uniform(-0.3, 0.3, 4)
        x = fk(FOUR, q0)[:2]
        J = planar_jacobian(FOUR, q0)
        N = np.eye(4) - damped_pinv(J) @ J
        try:
            q_star = inverse_kinematics(FOUR, x, q0 + 2 * N @ rng.uniform(-1, 1, 4))
        except (ConvergenceError, SingularConfigurationError):
            continue
        target = manipulability(FOUR, q_star)
        if 0.5 <= distance(manipulability(FOUR, q0), target) <= 2.5:
            out.append((q0, x, target))
    return out


def test_criterion_4_redundancy_resolution():
    with criterion(4, "redundancy resolution") as info:
        reductions, drifts = [], []
        for q0, x, target in redundancy_cases():
            cfg = scenario(q0=q0.tolist(), target={"matrix": target.tolist()},
                           controller={"type": "redundant", "gains": {"K_M": 0.5, "K_x": 50.0}, "damping": 0.05,
                                       "prioritized": True, "x_target": x.tolist()},
                           integration={"dt": 0.01, "steps": 2500})
            tr = run_scenario(cfg, projector_tol=PROJECTOR_TOL)
            reductions.append(1.0 - tr.final_distance / tr.dist[0])
            drifts.append(np.linalg.norm(tr.x - x, axis=1).max())
        assert min(reductions) >= 0.5, f"smallest reduction {min(reductions):.3f}"
        assert max(drifts) < 1e-3, f"largest tip drift {max(drifts):.2e} m"
        info["scenarios"] = 20
        info["min_reduction"] = f"{min(reductions):.0%}"
        info["max_tip_drift_m"] = f"{max(drifts):.1e}"


def test_criterion_5_baseline_comparison():
    with criterion(5, "baseline comparison") as info:
        cfg = ScenarioConfig.load(os.path.join(SCENARIOS, "divergence_4link.json"))
        res = cli.run_comparison(cfg, projector_tol=PROJECTOR_TOL)
        errors = {m: str(r) for m, r in res.items() if isinstance(r, Exception)}
        assert not errors, f"aborted runs: {errors}"
        geo, euc, chol, cj = (res[m] for m in ("geometry", "euclidean", "cholesky", "cholesky_jacobian"))
        assert geo.final_distance < 1e-2
        assert np.all(np.diff(geo.dist) <= 0), "geometry-aware trace not monotone"
        for name, tr in (("euclidean", euc), ("cholesky", chol)):
            assert tr.final_distance > 0.5, f"{name} final distance {tr.final_distance:.3f}"
            assert np.any(np.diff(tr.dist) > 0), f"{name} trace is monotone"
        sg, sj = geo.steps_to(1e-2), cj.steps_to(1e-2)
        assert sj is not None, "cholesky-jacobian never reaches 1e-2"
        assert sj >= 2 * sg, f"cholesky-jacobian steps {sj} vs geometry-aware {sg}"
        assert not cli.ordering_violations(res)
        info["geometry"] = f"{geo.final_distance:.1e}"
        info["euclidean"] = f"{euc.final_distance:.2f}"
        info["cholesky"] = f"{chol.final_distance:.2f}"
        info["steps_to_1e-2"] = f"{sg} vs cholesky-jacobian {sj}"


def test_criterion_6_learning_suite():
    with criterion(6, "learning suite") as info:
        worst_drop = 0.0
        for seed in range(20):
            t, Y = noisy_geodesic_data(seed)
            ll = np.asarray(em_fit(t, Y, 4, seed=seed).log_likelihood)
            worst_drop = max(worst_drop, float(-np.diff(ll).min(initial=0.0)))
        assert worst_drop <= 1e-8, f"log-likelihood dropped by {worst_drop:.2e}"

        t, Y = geodesic_data()
        worst_extrap = 0.0
        for K in (1, 2, 3):
            m = em_fit(t, Y, K)
            for s in (-0.3, -0.1, 1.1, 1.3):
                worst_extrap = max(worst_extrap, distance(gmr_condition(m, s)[0], geodesic(A, B, s)))
        assert worst_extrap < 1e-2, f"extrapolation error {worst_extrap:.2e}"

        rng = np.random.default_rng(3)
        centers = [np.diag([1.0, 1.0]), np.diag([50.0, 0.2])]
        labels = np.repeat([0, 1], 30)
        tt = np.where(labels == 0, 0.0, 1.0) + 0.01 * rng.normal(size=60)
        YY = np.array([exp_map(centers[k], mandel_fold(0.05 * rng.normal(size=3))) for k in labels])
        found = responsibilities(em_fit(tt, YY, 2), tt, YY).argmax(1)
        assert len(set(zip(found, labels))) == 2, "clusters not recovered exactly"
        info["datasets"] = 20
        info["max_ll_drop"] = f"{worst_drop:.1e}"
        info["max_extrapolation"] = f"{worst_extrap:.1e}"


def tip_rms(csv_path, skill):
    tr = export.read_trace_csv(csv_path)
    t0 = skill["time_range"][0]
    x_target = np.array([gmm.gmr(skill["tip"], t0 + t)[0] for t in tr.t])
    return float(np.sqrt(np.mean(np.sum((tr.x - x_target) ** 2, axis=1)))), tr


def run_pipeline(out):
    os.makedirs(out, exist_ok=True)
    data, skill, rep = (os.path.join(out, f) for f in ("demos.json", "skill.json", "rep"))
    assert cli.main(["demo-gen", "--config", os.path.join(SCENARIOS, "cshape_demo.json"), "--out", data]) == 0
    assert cli.main(["fit", "--data", data, "-K", "5", "--seed", "0", "--out", skill]) == 0
    argv = ["reproduce", "--model", skill, "--robot", os.path.join(SCENARIOS, "student_5link.json"),
            "--gains", "scalar", "--out", rep, "--ablation", "--projector-tol", str(PROJECTOR_TOL)]
    assert cli.main(argv) == 0
    return skill, rep


def test_criterion_7_transfer_pipeline(tmp_path):
    with criterion(7, "end-to-end transfer pipeline") as info:
        start = time.perf_counter()
        skill_path, rep = run_pipeline(tmp_path / "a")
        elapsed = time.perf_counter() - start
        skill = load_skill(skill_path)
        rms, tr = tip_rms(os.path.join(rep, "reproduction.csv"), skill)
        abl = export.read_trace_csv(os.path.join(rep, "ablation.csv"))
        gain = 1.0 - np.mean(tr.dist) / np.mean(abl.dist)
        assert rms < 1e-2, f"tip RMS {rms:.3e} m"
        assert gain >= 0.3, f"mean distance only {gain:.0%} below the ablation"
        assert elapsed < 120.0, f"took {elapsed:.1f} s"
        skill_b, rep_b = run_pipeline(tmp_path / "b")
        for a, b in ((skill_path, skill_b), (os.path.join(rep, "reproduction.csv"), os.path.join(rep_b, "reproduction.csv"))):
            with open(a, "rb") as fa, open(b, "rb") as fb:
                assert fa.read() == fb.read(), f"{os.path.basename(a)} differs between identical runs"
        info["tip_rms_m"] = f"{rms:.1e}"
        info["ablation_gain"] = f"{gain:.0%}"
        info["pipeline_s"] = f"{elapsed:.1f}"


def test_criterion_8_precision_gains():
    with criterion(8, "precision-gain prioritization") as info:
        cfg = ScenarioConfig.load(os.path.join(SCENARIOS, "precision_4link.json"))
        # covariance whose Mandel unfolding is diag(0.1, 1, 1): m11 is ten times more precise than m22
        from geomanip.tensor import mandel_fold4

        K = gain_from_precision(mandel_fold4(np.diag([0.1, 1.0, 1.0])), kappa=1.0)
        assert K[0, 0] / K[1, 1] == pytest.approx(10.0)
        np.testing.assert_allclose(cfg.controller["gains"].K_M, K, rtol=1e-12)
        tr = run_scenario(cfg, projector_tol=PROJECTOR_TOL)
        err = np.abs([mandel_vec(log_map(mandel_fold(m), mandel_fold(mt))) for m, mt in zip(tr.m, tr.m_target)])
        assert err[0, 0] > 1.0 and err[0, 1] > 1.0, "both components need a large initial error"

        def tenth(i):
            idx = np.flatnonzero(err[:, i] <= 0.1 * err[0, i])
            return int(idx[0]) if idx.size else None

        fast, slow = tenth(0), tenth(1)
        assert slow is not None, "non-prioritized component never reaches 10%"
        assert fast is not None and fast <= slow / 2, f"steps to 10%: {fast} vs {slow}"
        info["steps_to_10pct"] = f"m11 {fast} vs m22 {slow}"


def test_criterion_9_projector_identities():
    # every run in criteria 3, 4, 5 and 7 passes projector_tol=1e-10 to
    # run_scenario, which aborts on the first step above it; this test
    # re-checks the recorded residuals on one run of each kind
    with criterion(9, "nullspace projector identities") as info:
        runs = [
            scenario(q0=NOMINAL.tolist(), controller={"type": "main", "gains": {"K_M": 5.0}},
                     target={"matrix": manipulability(FOUR, NOMINAL + 0.2).tolist()}),
            ScenarioConfig.load(os.path.join(SCENARIOS, "divergence_4link.json")),
            ScenarioConfig.load(os.path.join(SCENARIOS, "precision_4link.json")),
        ]
        q0, x, target = redundancy_cases(1)[0]
        runs.append(scenario(q0=q0.tolist(), target={"matrix": target.tolist()},
                             controller={"type": "redundant", "gains": {"K_M": 0.5, "K_x": 50.0}, "damping": 0.05,
                                         "x_target": x.tolist()}))
        worst = {}
        for cfg in runs:
            tr = run_scenario(cfg, projector_tol=PROJECTOR_TOL)
            for name, vals in tr.residuals.items():
                assert len(vals) == len(tr)
                worst[name] = max(worst.get(name, 0.0), float(np.max(vals)))
        assert max(worst.values()) <= PROJECTOR_TOL
        info.update({k: f"{v:.1e}" for k, v in worst.items()})
