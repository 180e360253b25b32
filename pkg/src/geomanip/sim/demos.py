"""Scripted teacher demonstrations and the learn-then-reproduce pipeline.

A 3-link teacher follows a C-shaped arc by damped least-squares inverse
kinematics; its velocity manipulability along the way is learned with an SPD
GMM, its tip path with a Euclidean GMM, and a student chain reproduces both
with the nullspace manipulability controller.
"""

import json
from dataclasses import dataclass

import numpy as np

from .. import mixture
from ..errors import ConvergenceError, SchemaError
from ..kinematics import PlanarChain, fk, inverse_kinematics
from ..manipulability import manipulability
from . import gmm
from .scenario import SCHEMA_VERSION, ScenarioConfig, _parse_controller, chain_from_doc, chain_to_doc, run_scenario


@dataclass(frozen=True)
class CShape:
    """A 3/4 circular arc traversed counter-clockwise over ``duration``."""

    center: tuple = (1.4, 0.9)
    radius: float = 0.5
    start_angle: float = np.pi / 4
    sweep: float = 1.5 * np.pi
    duration: float = 10.0
    samples: int = 100

    def times(self):
        return np.linspace(0.0, self.duration, self.samples)

    def points(self):
        a = self.start_angle + self.sweep * np.linspace(0.0, 1.0, self.samples)
        return np.asarray(self.center) + self.radius * np.column_stack([np.cos(a), np.sin(a)])


TEACHER = PlanarChain([1.0, 1.0, 1.0], name="teacher")
TEACHER_Q0 = np.array([0.3, 0.9, 0.9])
STUDENT = PlanarChain([0.6] * 5, name="student")
STUDENT_Q0 = np.array([0.2, 0.5, 0.5, 0.5, 0.5])


def teacher_pass(chain, path, q_start):
    """Joint trajectory following ``path`` by IK continuation from ``q_start``."""
    reach = float(np.sum(chain.lengths))
    qs, q = [], np.asarray(q_start, dtype=float)
    for i, x in enumerate(path):
        if np.linalg.norm(x) >= reach:
            raise ValueError(f"waypoint {i} at {np.round(x, 4).tolist()} is outside the reach {reach:g}")
        try:
            q = inverse_kinematics(chain, x, q)
        except ConvergenceError as exc:
            raise ConvergenceError(f"waypoint {i} at {np.round(x, 4).tolist()} is unreachable: {exc}",
                                   residual=exc.residual) from exc
        qs.append(q)
    return np.array(qs)


def generate_demonstrations(shape=CShape(), teacher=TEACHER, q_init=TEACHER_Q0, repetitions=4, noise=0.05, seed=0):
    """Record ``repetitions`` teacher passes over ``shape``.

    Each pass starts from ``q_init`` plus normal noise with standard
    deviation ``noise`` (rad) drawn from ``default_rng(seed)``.

    Returns
    -------
    dict
        JSON-ready dataset with per-demo ``t``, ``x``, ``q`` and ``M``.
    """
    rng = np.random.default_rng(seed)
    path, t = shape.points(), shape.times()
    demos = []
    for _ in range(repetitions):
        q = teacher_pass(teacher, path, np.asarray(q_init, dtype=float) + noise * rng.normal(size=teacher.n))
        demos.append({
            "t": t.tolist(),
            "q": q.tolist(),
            "x": np.array([fk(teacher, qi)[:2] for qi in q]).tolist(),
            "M": np.array([manipulability(teacher, qi) for qi in q]).tolist(),
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "type": "demonstrations",
        "teacher": chain_to_doc(teacher),
        "shape": {"center": list(shape.center), "radius": shape.radius, "start_angle": shape.start_angle,
                  "sweep": shape.sweep, "duration": shape.duration, "samples": shape.samples},
        "noise": noise,
        "seed": seed,
        "demos": demos,
    }


def dataset_arrays(dataset):
    """Stacked ``(t, x, M)`` over all demonstrations."""
    if dataset.get("type") != "demonstrations" or dataset.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError("not a demonstrations document of a supported version")
    if not dataset.get("demos"):
        raise SchemaError("dataset has no demonstrations")
    t = np.concatenate([d["t"] for d in dataset["demos"]])
    x = np.concatenate([d["x"] for d in dataset["demos"]])
    M = np.concatenate([d["M"] for d in dataset["demos"]])
    return t, x, M


def demo_spread(dataset):
    """Largest pairwise ellipsoid distance across demos at each time index."""
    from ..spd import distance

    Ms = np.array([d["M"] for d in dataset["demos"]])
    R = len(Ms)
    return np.array([
        max((distance(Ms[a, k], Ms[b, k]) for a in range(R) for b in range(a + 1, R)), default=0.0)
        for k in range(Ms.shape[1])
    ])


def fit_skill(dataset, K=5, seed=0):
    """Fit the SPD model on (t, M) and the tip model on (t, x)."""
    t, x, M = dataset_arrays(dataset)
    spd_model = mixture.em_fit(t, M, K, seed=seed)
    tip_model = gmm.fit_gmm(t, x, K)
    return {"spd": spd_model, "tip": tip_model, "time_range": (float(t.min()), float(t.max()))}


def reproduction_config(skill, student=STUDENT, q_nominal=STUDENT_Q0, gains_mode="scalar", K_M=2.0, K_x=20.0,
                        dt=0.01, steps=None, kappa=None, damping=0.1):
    """Scenario that drives ``student`` along the learned tip path while
    tracking the learned ellipsoids in the task nullspace.

    The start pose is ``q_nominal`` moved onto the first desired tip
    position by IK.
    """
    t0, t1 = skill["time_range"]
    steps = int(round((t1 - t0) / dt)) + 1 if steps is None else steps
    x0 = gmm.gmr(skill["tip"], t0)[0]
    q0 = inverse_kinematics(student, x0, q_nominal)
    ctrl = _parse_controller({"type": "redundant", "gains": {"K_M": K_M, "K_x": K_x}, "gain_mode": gains_mode,
                              "kappa": K_M if kappa is None else kappa, "damping": damping}, student)
    target = {"skill": skill, "time_range": (t0, t1), "position": None}
    return ScenarioConfig(student, q0, ctrl, target, dt, steps, name=f"reproduce-{gains_mode}")


def fit_and_reproduce(dataset, K=5, student=STUDENT, gains_mode="scalar", seed=0, ablation=True,
                      projector_tol=None, **kw):
    """Fit the skill and run the student; optionally also the K_M = 0 ablation.

    Returns
    -------
    dict
        ``skill``, ``trace`` and, with ``ablation``, ``ablation`` (the same
        run without the manipulability term).
    """
    skill = fit_skill(dataset, K, seed)
    cfg = reproduction_config(skill, student, gains_mode=gains_mode, **kw)
    out = {"skill": skill, "trace": run_scenario(cfg, projector_tol=projector_tol)}
    if ablation:
        abl = reproduction_config(skill, student, gains_mode="scalar", **{**kw, "K_M": 0.0})
        out["ablation"] = run_scenario(abl, projector_tol=projector_tol)
    return out


def save_json(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc


def demo_config_from_doc(doc):
    """Parse a ``demo-gen`` config: teacher, start pose, shape and noise."""
    from .scenario import _section

    _section(doc, "demo config", ("schema_version",), ("teacher", "q_init", "shape", "repetitions", "noise", "seed"))
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported demo config schema_version {doc['schema_version']!r}")
    teacher = chain_from_doc(doc["teacher"], "teacher") if "teacher" in doc else TEACHER
    shape_doc = _section(doc.get("shape", {}), "shape", (), ("center", "radius", "start_angle", "sweep",
                                                             "duration", "samples"))
    shape = CShape(**{k: (tuple(v) if k == "center" else v) for k, v in shape_doc.items()})
    return {
        "shape": shape,
        "teacher": teacher,
        "q_init": np.asarray(doc.get("q_init", TEACHER_Q0), dtype=float),
        "repetitions": int(doc.get("repetitions", 4)),
        "noise": float(doc.get("noise", 0.05)),
        "seed": int(doc.get("seed", 0)),
    }
