"""Declarative scenarios and the closed-loop integrator.

A scenario is a JSON document with ``schema_version`` and the sections
``robot``, ``q0``, ``controller``, ``target``, ``integration`` and optional
``seed``, ``qdot0``, ``name`` and ``outputs``. Unknown keys are rejected.
Velocity controllers are integrated with explicit Euler, the acceleration
controller with semi-implicit Euler.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .. import mixture
from ..errors import ControllerError, NotSPDError, SchemaError
from ..kinematics import PlanarChain, fk
from ..manipulability import KINDS, manipulability
from ..spd import check_spd, distance
from ..tensor import mandel_dim, mandel_fold, mandel_vec
from ..tracking import (
    BASELINES,
    Gains,
    TrackingCommand,
    accel_track,
    baseline_track,
    gain_from_precision,
    index_gradient,
    nullspace_secondary,
    precision_trace,
    projector_residuals,
    velocity_track_main,
    velocity_track_redundant,
)
from . import gmm

SCHEMA_VERSION = 1
CONTROLLERS = ("main", "redundant", "nullspace", "accel", "baseline", "index")


def _section(doc, where, required=(), optional=()):
    if not isinstance(doc, dict):
        raise SchemaError(f"{where} must be a mapping")
    unknown = set(doc) - set(required) - set(optional)
    if unknown:
        raise SchemaError(f"unknown key(s) in {where}: {sorted(unknown)}")
    missing = [k for k in required if k not in doc]
    if missing:
        raise SchemaError(f"missing key(s) in {where}: {missing}")
    return doc


def _floats(val, where, shape=None):
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where} must be numeric") from exc
    if shape is not None and arr.shape != shape:
        raise SchemaError(f"{where} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{where} must be finite")
    return arr


def chain_from_doc(doc, where="robot"):
    _section(doc, where, ("lengths",), ("n", "masses", "qdot_max", "tau_max", "name"))
    lengths = _floats(doc["lengths"], f"{where}.lengths")
    if "n" in doc and int(doc["n"]) != len(lengths):
        raise SchemaError(f"{where}.n does not match the number of lengths")
    kw = {k: _floats(doc[k], f"{where}.{k}") for k in ("masses", "qdot_max", "tau_max") if k in doc}
    try:
        return PlanarChain(lengths, name=doc.get("name", "chain"), **kw)
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def chain_to_doc(chain):
    return {
        "lengths": chain.lengths.tolist(),
        "masses": chain.masses.tolist(),
        "qdot_max": chain.qdot_max.tolist(),
        "tau_max": chain.tau_max.tolist(),
    }


@dataclass
class ScenarioConfig:
    """Validated scenario document. ``base_dir`` resolves relative paths."""

    chain: PlanarChain
    q0: np.ndarray
    controller: dict
    target: dict
    dt: float = 0.01
    steps: int = 500
    stop_distance: float = None
    seed: int = 0
    qdot0: np.ndarray = None
    name: str = "scenario"
    outputs: dict = field(default_factory=dict)
    base_dir: str = "."
    document: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_document(cls, doc, base_dir="."):
        _section(doc, "scenario", ("schema_version", "robot", "q0", "controller", "target", "integration"),
                 ("seed", "qdot0", "name", "outputs", "description"))
        if doc["schema_version"] != SCHEMA_VERSION:
            raise SchemaError(f"unsupported scenario schema_version {doc['schema_version']!r}")
        chain = chain_from_doc(doc["robot"])
        q0 = _floats(doc["q0"], "q0", (chain.n,))
        qdot0 = _floats(doc["qdot0"], "qdot0", (chain.n,)) if "qdot0" in doc else None
        integ = _section(doc["integration"], "integration", ("dt", "steps"), ("stop_distance",))
        dt, steps = float(integ["dt"]), int(integ["steps"])
        if not dt > 0 or steps < 1:
            raise SchemaError("integration needs dt > 0 and steps >= 1")
        ctrl = _parse_controller(doc["controller"], chain)
        target = _parse_target(doc["target"], base_dir)
        outputs = _section(doc.get("outputs", {}), "outputs", (), ("trace", "plot"))
        return cls(chain, q0, ctrl, target, dt, steps, integ.get("stop_distance"), int(doc.get("seed", 0)),
                   qdot0, str(doc.get("name", "scenario")), outputs, base_dir, doc)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_document(doc, os.path.dirname(os.path.abspath(path)))

    def with_controller(self, **changes):
        """Copy with some controller fields replaced."""
        ctrl = dict(self.controller, **changes)
        return ScenarioConfig(**{**self.__dict__, "controller": ctrl})


def _parse_controller(doc, chain):
    keys = ("kind", "weighted", "gains", "method", "alpha", "damping", "prioritized", "x_target",
            "joint_hold", "direction", "gain_mode", "kappa")
    _section(doc, "controller", ("type",), keys)
    ctype = doc["type"]
    if ctype not in CONTROLLERS:
        raise SchemaError(f"controller.type must be one of {CONTROLLERS}, got {ctype!r}")
    kind = doc.get("kind", "velocity")
    if kind not in KINDS:
        raise SchemaError(f"controller.kind must be one of {KINDS}")
    g = _section(doc.get("gains", {}), "controller.gains", (), ("K_M", "K_x", "K_p", "K_d"))
    try:
        gains = Gains(**{k: (v if np.ndim(v) == 0 else np.asarray(v, dtype=float)) for k, v in g.items()})
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"controller.gains: {exc}") from exc
    out = {
        "type": ctype,
        "kind": kind,
        "weighted": bool(doc.get("weighted", False)),
        "gains": gains,
        "method": doc.get("method"),
        "alpha": float(doc.get("alpha", 1.0)),
        "damping": float(doc.get("damping", 0.0)),
        "prioritized": bool(doc.get("prioritized", True)),
        "x_target": None if doc.get("x_target") is None else _floats(doc["x_target"], "controller.x_target", (2,)),
        "joint_hold": None,
        "direction": None if doc.get("direction") is None else _floats(doc["direction"], "controller.direction", (2,)),
        "gain_mode": doc.get("gain_mode", "scalar"),
        "kappa": float(doc.get("kappa", 1.0)),
    }
    if out["gain_mode"] not in ("scalar", "precision"):
        raise SchemaError("controller.gain_mode must be 'scalar' or 'precision'")
    if ctype == "baseline" and out["method"] not in BASELINES:
        raise SchemaError(f"controller.method must be one of {BASELINES}")
    if ctype == "index" and out["method"] not in ("volume", "compatibility"):
        raise SchemaError("controller.method must be 'volume' or 'compatibility' for index ascent")
    if "joint_hold" in doc:
        jh = _section(doc["joint_hold"], "controller.joint_hold", ("joint", "reference", "gain"))
        if not 0 <= int(jh["joint"]) < chain.n:
            raise SchemaError("controller.joint_hold.joint out of range")
        out["joint_hold"] = (int(jh["joint"]), float(jh["reference"]), float(jh["gain"]))
    return out


def _parse_target(doc, base_dir):
    _section(doc, "target", (), ("matrix", "model", "time_range", "position"))
    if ("matrix" in doc) == ("model" in doc):
        raise SchemaError("target needs exactly one of 'matrix' or 'model'")
    out = {"position": None if doc.get("position") is None else _floats(doc["position"], "target.position", (2,))}
    if "matrix" in doc:
        try:
            out["matrix"] = check_spd(_floats(doc["matrix"], "target.matrix"), "target.matrix")
        except NotSPDError as exc:
            raise SchemaError(str(exc)) from exc
        return out
    path = doc["model"] if os.path.isabs(doc["model"]) else os.path.join(base_dir, doc["model"])
    if not os.path.exists(path):
        raise SchemaError(f"target model file {path} does not exist")
    out["skill"] = load_skill(path)
    tr = doc.get("time_range", out["skill"]["time_range"])
    out["time_range"] = tuple(_floats(tr, "target.time_range", (2,)))
    return out


# skill documents: SPD model for the ellipsoids plus Euclidean model for the tip


def skill_to_document(spd_model, tip_model, time_range):
    return {
        "schema_version": SCHEMA_VERSION,
        "type": "manipulability_skill",
        "time_range": [float(v) for v in time_range],
        "manipulability": mixture.to_document(spd_model),
        "position": None if tip_model is None else gmm.to_document(tip_model),
    }


def load_skill(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("type") == "gmm_spd":
        return {"spd": mixture.from_document(doc), "tip": None, "time_range": (0.0, 1.0)}
    _section(doc, path, ("schema_version", "type", "time_range", "manipulability"), ("position",))
    if doc["schema_version"] != SCHEMA_VERSION or doc["type"] != "manipulability_skill":
        raise SchemaError(f"{path}: unsupported skill document")
    tip = doc.get("position")
    return {
        "spd": mixture.from_document(doc["manipulability"]),
        "tip": None if tip is None else gmm.from_document(tip),
        "time_range": tuple(doc["time_range"]),
    }


@dataclass
class TrackingTrace:
    """Per-step records of a closed-loop run.

    Row ``k`` holds the state at time ``t[k]``, the joint velocity applied
    from it, the current and desired ellipsoids as Mandel vectors, their
    distance, the tip position and the projector identity residuals.
    """

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    m: np.ndarray
    m_target: np.ndarray
    dist: np.ndarray
    x: np.ndarray
    x_target: np.ndarray
    residuals: dict
    gain_trace: np.ndarray = None
    name: str = "trace"

    def __len__(self):
        return len(self.t)

    @property
    def final_distance(self):
        return float(self.dist[-1])

    def steps_to(self, threshold):
        """First step with distance below ``threshold``, or None."""
        idx = np.flatnonzero(self.dist < threshold)
        return int(idx[0]) if idx.size else None

    def tip_rms(self):
        ok = np.all(np.isfinite(self.x_target), axis=1)
        return float(np.sqrt(np.mean(np.sum((self.x[ok] - self.x_target[ok]) ** 2, axis=1))))


class _Targets:
    """Per-step desired ellipsoid, its rate, the tip target and gain."""

    def __init__(self, cfg, x0):
        self.cfg = cfg
        self.fixed = cfg.target.get("matrix")
        self.position = cfg.target.get("position")
        if self.position is None:
            self.position = cfg.controller["x_target"]
        if self.position is None:
            self.position = x0
        if self.fixed is None:
            self.skill = cfg.target["skill"]
            t0, t1 = cfg.target["time_range"]
            span = max(cfg.steps - 1, 1) * cfg.dt
            self.t0, self.rate = t0, (t1 - t0) / span
            self._ref = None
            if cfg.controller["gain_mode"] == "precision":
                ts = t0 + np.linspace(0, 1, 21) * (t1 - t0)
                self._ref = float(np.mean([precision_trace(mixture.gmr_condition(self.skill["spd"], s)[1]) for s in ts]))

    def __call__(self, k):
        cfg = self.cfg
        if self.fixed is not None:
            return self.fixed, np.zeros_like(self.fixed), self.position, None, None
        s = self.t0 + self.rate * k * cfg.dt
        M, S, _ = mixture.gmr_condition(self.skill["spd"], s)
        h = 1e-3 * cfg.dt * self.rate if self.rate else 0.0
        if h and cfg.controller["type"] == "accel":
            M2 = mixture.gmr_condition(self.skill["spd"], s + h)[0]
            Mrate = (M2 - M) / h * self.rate
        else:
            Mrate = np.zeros_like(M)
        tip = self.skill["tip"]
        if tip is not None:
            x = gmm.gmr(tip, s)[0]
            xdot = gmm.gmr_rate(tip, s) * self.rate
        else:
            x, xdot = self.position, None
        K = None
        if cfg.controller["gain_mode"] == "precision":
            K = gain_from_precision(S, cfg.controller["kappa"], reference_trace=self._ref)
        return M, Mrate, x, xdot, K


def _command(cfg, q, qdot, M_target, M_rate, x_target, xdot_target, K_override):
    c = cfg.controller
    gains = c["gains"] if K_override is None else Gains(K_M=K_override, K_x=c["gains"].K_x,
                                                        K_p=c["gains"].K_p, K_d=c["gains"].K_d)
    kw = {"kind": c["kind"], "weighted": c["weighted"]}
    ctype = c["type"]
    if ctype == "main":
        return velocity_track_main(cfg.chain, q, M_target, gains, damping=c["damping"], **kw)
    if ctype == "redundant":
        return velocity_track_redundant(cfg.chain, q, x_target, M_target, gains, damping=c["damping"],
                                        prioritized=c["prioritized"], xdot_target=xdot_target, **kw)
    if ctype == "nullspace":
        qN = np.zeros(cfg.chain.n)
        if c["joint_hold"] is not None:
            j, ref, g = c["joint_hold"]
            qN[j] = g * (ref - q[j])
        return nullspace_secondary(cfg.chain, q, M_target, gains, qN, damping=c["damping"], **kw)
    if ctype == "accel":
        return accel_track(cfg.chain, q, qdot, M_target, M_rate, gains, damping=c["damping"], **kw)
    if ctype == "baseline":
        x = x_target if cfg.target.get("position") is not None or c["x_target"] is not None else None
        return baseline_track(c["method"], cfg.chain, q, M_target, gains, c["alpha"], x_target=x,
                              damping=c["damping"], **kw)
    # index ascent
    grad = index_gradient(c["method"], cfg.chain, q, c["direction"], kind=c["kind"])
    M = manipulability(cfg.chain, q, c["kind"], c["weighted"])
    return TrackingCommand(qdot=c["alpha"] * grad, distance=distance(M, M_target))


def run_scenario(cfg, projector_tol=None):
    """Run a scenario and return its :class:`TrackingTrace`.

    Parameters
    ----------
    cfg : ScenarioConfig
    projector_tol : float, optional
        If given, both projector identities are checked at every step and a
        residual above ``projector_tol`` aborts the run.

    Raises
    ------
    ControllerError
        When the controller fails or a projector check fails. ``step`` and
        ``diagnostics`` identify where.
    """
    chain = cfg.chain
    q = cfg.q0.astype(float).copy()
    v = np.zeros(chain.n) if cfg.qdot0 is None else cfg.qdot0.astype(float).copy()
    targets = _Targets(cfg, fk(chain, q)[:2])
    Dt = mandel_dim(2)
    rows = {k: [] for k in ("t", "q", "qdot", "m", "m_target", "dist", "x", "x_target", "gain")}
    res = {"task_projector": [], "manipulability_projector": []}
    kind, weighted = cfg.controller["kind"], cfg.controller["weighted"]
    accel = cfg.controller["type"] == "accel"
    for k in range(cfg.steps):
        try:
            M_t, M_rate, x_t, xdot_t, K = targets(k)
            cmd = _command(cfg, q, v, M_t, M_rate, x_t, xdot_t, K)
            r = projector_residuals(chain, q, kind, weighted)
            M = manipulability(chain, q, kind, weighted)
        except Exception as exc:
            raise ControllerError(f"step {k}: {type(exc).__name__}: {exc}", step=k,
                                  diagnostics={"q": q.tolist(), "last_distance": rows["dist"][-1] if rows["dist"] else None}) from exc
        for name, val in r.items():
            res[name].append(val)
        if projector_tol is not None and max(r.values()) > projector_tol:
            raise ControllerError(f"step {k}: projector residual {max(r.values()):.3e} exceeds {projector_tol:.1e}",
                                  step=k, diagnostics=r)
        qdot = v if accel else cmd.qdot
        if not np.all(np.isfinite(qdot)):
            raise ControllerError(f"step {k}: non-finite joint velocity", step=k, diagnostics={"q": q.tolist()})
        rows["t"].append(k * cfg.dt)
        rows["q"].append(q.copy())
        rows["qdot"].append(np.array(qdot, dtype=float))
        rows["m"].append(mandel_vec(M))
        rows["m_target"].append(mandel_vec(M_t))
        rows["dist"].append(distance(M, M_t))
        rows["x"].append(fk(chain, q)[:2])
        rows["x_target"].append(np.asarray(x_t, dtype=float))
        rows["gain"].append(np.nan if K is None else float(np.trace(K)))
        if cfg.stop_distance is not None and rows["dist"][-1] < cfg.stop_distance:
            break
        if accel:
            v = v + cfg.dt * cmd.qddot
            q = q + cfg.dt * v
        else:
            q = q + cfg.dt * qdot
    gain = np.array(rows.pop("gain"))
    arrays = {k: np.array(v_) for k, v_ in rows.items()}
    return TrackingTrace(
        residuals={k: np.array(v_) for k, v_ in res.items()},
        gain_trace=None if np.all(np.isnan(gain)) else gain,
        name=cfg.name,
        **arrays,
    )


def check_trace(trace, tol=1e-9):
    """Validate the trace invariants; returns a list of problems (empty if fine)."""
    problems = []
    if np.any(np.diff(trace.t) <= 0):
        problems.append("t is not strictly increasing")
    for name in ("q", "qdot", "m", "m_target", "dist", "x"):
        if not np.all(np.isfinite(getattr(trace, name))):
            problems.append(f"{name} has non-finite entries")
    if np.any(trace.dist < 0):
        problems.append("negative distance")
    for i, (a, b) in enumerate(zip(trace.m, trace.m_target)):
        if abs(distance(mandel_fold(a), mandel_fold(b)) - trace.dist[i]) > tol:
            problems.append(f"row {i}: dist column does not match the stored matrices")
            break
    return problems
