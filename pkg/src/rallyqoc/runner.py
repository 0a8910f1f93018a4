"""Experiment harness: validated configs, seeded runs, deterministic
aggregation.

A config fully determines every output byte except wall-time fields:
wall times live only in per-seed JSONs and the separate timing CSV, never
in aggregate.csv, so aggregate reruns are byte-identical. Success is
judged on the run's "score": the raw figure of merit for infidelities,
or energy above the exact ground state for energy targets.
"""

import csv
import functools
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import __version__
from . import analysis
from . import gradients
from . import pulses
from .errors import ParseError, SchemaMismatch
from .fom import FigureOfMerit
from .hamiltonians import (AmplitudeDomain, ControlSystem, build_ising,
                           build_rydberg, data_path, load_geometry,
                           load_molecular_hamiltonian)
from .optimizers import (OptimizerConfig, dcrab_driver, nelder_mead,
                         quasi_newton)
from .pulses import PropagatorCache, PulseSequence, RiseProfile
from .qcore import basis_state, entanglement_entropy, ghz_state

EXPERIMENTS = ("unitary_synthesis", "ground_state", "state_transfer",
               "moment_convergence", "robustness", "scaling")
METHOD_KINDS = ("rally_t", "rally_a", "grape", "dcrab")
OPTIMIZER_KINDS = ("quasi_newton", "nelder_mead")
ABSENT = "NA"
WORKERS_ENV = "RALLYQOC_WORKERS"
DEFAULT_DURATION_EDGES = [0.0, 25.0, 50.0, 75.0, 100.0, 150.0, 200.0, 300.0]

_OPTIMIZATION_EXPERIMENTS = ("unitary_synthesis", "ground_state",
                             "state_transfer")


# configuration ---------------------------------------------------------


def _as_seed_list(raw) -> List[int]:
    if raw is None:
        return list(range(10))
    if isinstance(raw, dict):
        return list(range(int(raw.get("start", 0)),
                          int(raw.get("start", 0)) + int(raw["count"])))
    if isinstance(raw, int):
        return [raw]
    return [int(s) for s in raw]


def _resolve_data_file(name: str, subdir: str = "") -> str:
    """Resolve a path as given, or fall back to the packaged data dir."""
    if os.path.exists(name):
        return name
    candidate = data_path(os.path.join(subdir, name) if subdir else name)
    if os.path.exists(candidate):
        return str(candidate)
    raise ParseError(f"referenced file not found: {name}")


def load_config(path: str) -> dict:
    """Parse and validate an experiment config; raises ParseError or
    SchemaMismatch on invalid input."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ParseError(f"config is not valid YAML: {exc}")
    if not isinstance(raw, dict):
        raise SchemaMismatch("config must be a mapping")
    return normalize_config(raw)


def normalize_config(raw: dict) -> dict:
    cfg = dict(raw)
    experiment = cfg.get("experiment")
    if experiment not in EXPERIMENTS:
        raise SchemaMismatch(
            f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    cfg["seeds"] = _as_seed_list(cfg.get("seeds"))
    if not cfg["seeds"]:
        raise SchemaMismatch("seeds must be nonempty")
    cfg["thresholds"] = [float(t) for t in cfg.get("thresholds", [1e-3])]

    if experiment != "scaling":
        system = cfg.get("system")
        if not isinstance(system, dict) or system.get("type") not in \
                ("ising", "rydberg"):
            raise SchemaMismatch("system.type must be 'ising' or 'rydberg'")
        if system["type"] == "rydberg":
            system["geometry"] = _resolve_data_file(
                str(system.get("geometry", "")), "geometries")
        else:
            if int(system.get("n_qubits", 0)) < 1:
                raise SchemaMismatch("system.n_qubits must be >= 1")

    if experiment in _OPTIMIZATION_EXPERIMENTS:
        method = cfg.get("method")
        if not isinstance(method, dict) or method.get("kind") not in \
                METHOD_KINDS:
            raise SchemaMismatch(
                f"method.kind must be one of {METHOD_KINDS}")
        for key in ("n_layers", "layer_size", "init_total_duration"):
            if key in method and not isinstance(method[key], list):
                method[key] = [method[key]]
        for nl in method.get("n_layers", [1]):
            if int(nl) < 1:
                raise SchemaMismatch("n_layers must be >= 1")
        if method["kind"] in ("rally_t", "rally_a") and \
                "n_layers" not in method:
            raise SchemaMismatch(f"{method['kind']} needs n_layers")
        if method["kind"] == "rally_a" and "dt" not in method:
            raise SchemaMismatch("rally_a needs dt")
        if method["kind"] == "grape" and (
                "n_steps" not in method
                or ("dt" not in method and "total_time" not in method)):
            raise SchemaMismatch("grape needs n_steps and dt or total_time")
        if method["kind"] == "dcrab":
            for key in ("n_steps", "total_time", "n_frequencies",
                        "delta_omega"):
                if key not in method:
                    raise SchemaMismatch(f"dcrab needs {key}")
        target = cfg.get("target")
        if not isinstance(target, dict) or target.get("kind") not in \
                ("ghz", "cnot_12", "molecule"):
            raise SchemaMismatch(
                "target.kind must be ghz, cnot_12, or molecule")
        if target["kind"] == "molecule":
            target["file"] = _resolve_data_file(str(target.get("file", "")))
        optimizer = cfg.setdefault("optimizer", {})
        if optimizer.setdefault("kind", "quasi_newton") not in \
                OPTIMIZER_KINDS:
            raise SchemaMismatch(
                f"optimizer.kind must be one of {OPTIMIZER_KINDS}")
    elif experiment == "moment_convergence":
        section = cfg.get("moments")
        if not isinstance(section, dict):
            raise SchemaMismatch("moment_convergence needs a 'moments' block")
        section.setdefault("orders", [2])
        section.setdefault("n_pairs", 10 ** 5)
        section.setdefault("n_layers_list", [17, 50, 83])
        section.setdefault("layer_size_list", [1, 2, 4])
        section.setdefault("include_fixed_amplitudes", False)
        section.setdefault("duration_range", [0.0, 10.0])
    elif experiment == "robustness":
        section = cfg.get("robustness")
        if not isinstance(section, dict):
            raise SchemaMismatch("robustness needs a 'robustness' block")
        section.setdefault("methods", ["rally_t", "grape"])
        section.setdefault("sigma_taus", [1e-6, 1e-5, 1e-4])
        section.setdefault("sigma_us", [0.0])
        section.setdefault("n_samples", 200)
        section.setdefault("prep_target", 1e-8)
        section.setdefault("n_layers", 30)
        section.setdefault("layer_size", 3)
    elif experiment == "scaling":
        section = cfg.get("scaling")
        if not isinstance(section, dict):
            raise SchemaMismatch("scaling needs a 'scaling' block")
        section.setdefault("methods", ["rally_t", "grape"])
        section.setdefault("qubit_counts", [3, 4, 5, 6])
        section.setdefault("target_score", 1e-3)
        section.setdefault("budget_seconds", 300.0)
        section.setdefault("param_margin", 1.3)
    return cfg


def apply_overrides(cfg: dict, overrides: Sequence[str]) -> dict:
    """Apply dotted-path scalar overrides like optimizer.max_evaluations=5
    and re-validate."""
    out = json.loads(json.dumps(cfg))
    for item in overrides:
        if "=" not in item:
            raise ParseError(f"override must look like key=value: {item!r}")
        dotted, _, text = item.partition("=")
        value = yaml.safe_load(text)
        node = out
        *parents, leaf = dotted.split(".")
        for part in parents:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[leaf] = value
    return normalize_config(out)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# system and target construction ---------------------------------------


def _parse_domain(spec) -> Optional[AmplitudeDomain]:
    if spec is None:
        return None
    if "discrete" in spec:
        return AmplitudeDomain.discrete(*[float(v) for v in spec["discrete"]])
    if "interval" in spec:
        lo, hi = spec["interval"]
        return AmplitudeDomain.interval(float(lo), float(hi))
    raise SchemaMismatch("amplitude_domain needs 'discrete' or 'interval'")


def build_system(cfg: dict) -> Tuple[ControlSystem, int]:
    """System plus qubit count from the config's system block, with any
    method-level amplitude-domain override applied."""
    import dataclasses

    spec = cfg["system"]
    if spec["type"] == "ising":
        n = int(spec["n_qubits"])
        if "hx" in spec:
            hx, hz = spec["hx"], spec["hz"]
        else:
            rng = np.random.default_rng(int(spec.get("field_seed", 0)))
            hx = rng.uniform(0.5, 1.0, n)
            hz = rng.uniform(0.5, 1.0, n)
        sys = build_ising(n, hx, hz)
    else:
        geometry = load_geometry(spec["geometry"])
        sys = build_rydberg(geometry)
        n = len(geometry.positions)
    domain = _parse_domain(cfg.get("method", {}).get("amplitude_domain"))
    if domain is not None:
        sys = dataclasses.replace(sys, amplitude_domain=domain)
    return sys, n


def _cnot_12(n_qubits: int) -> np.ndarray:
    cx = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]],
                  dtype=complex)
    rest = np.eye(2 ** (n_qubits - 2), dtype=complex)
    return np.kron(cx, rest)


def build_target(cfg: dict, sys: ControlSystem, n_qubits: int
                 ) -> Tuple[FigureOfMerit, float]:
    """Figure of merit and its score offset (the exact ground energy for
    molecular targets, zero otherwise)."""
    spec = cfg["target"]
    weight = float(cfg.get("method", {}).get("penalty_weight", 0.0))
    if spec["kind"] == "ghz":
        return FigureOfMerit("state_infidelity", ghz_state(n_qubits),
                             psi0=basis_state(sys.dim, 0),
                             penalty_weight=weight), 0.0
    if spec["kind"] == "cnot_12":
        if n_qubits < 2:
            raise SchemaMismatch("cnot_12 needs at least 2 qubits")
        return FigureOfMerit("unitary_infidelity", _cnot_12(n_qubits),
                             penalty_weight=weight), 0.0
    h_target = load_molecular_hamiltonian(spec["file"])
    if h_target.shape[0] != sys.dim:
        raise SchemaMismatch(
            f"molecule dimension {h_target.shape[0]} does not match the "
            f"system dimension {sys.dim}")
    e0 = float(np.linalg.eigvalsh(h_target)[0])
    return FigureOfMerit("energy", h_target, psi0=basis_state(sys.dim, 0),
                         penalty_weight=weight), e0


# group expansion -------------------------------------------------------


def expand_groups(cfg: dict) -> List[dict]:
    experiment = cfg["experiment"]
    if experiment in _OPTIMIZATION_EXPERIMENTS:
        method = cfg["method"]
        groups = []
        if method["kind"] in ("rally_t", "rally_a"):
            for nl in method.get("n_layers", [1]):
                for ls in method.get("layer_size", [1]):
                    for tot in method.get("init_total_duration", [None]):
                        group = {"method": method["kind"],
                                 "n_layers": int(nl),
                                 "layer_size": int(ls)}
                        if tot is not None:
                            group["init_total_duration"] = float(tot)
                        groups.append(group)
        elif method["kind"] == "grape":
            groups.append({"method": "grape",
                           "n_steps": int(method["n_steps"])})
        else:
            groups.append({"method": "dcrab",
                           "n_steps": int(method["n_steps"]),
                           "n_frequencies": int(method["n_frequencies"])})
        return groups
    if experiment == "moment_convergence":
        section = cfg["moments"]
        variants = ["sampled"]
        if section["include_fixed_amplitudes"]:
            variants.append("fixed")
        return [{"variant": variant, "t": int(t), "n_layers": int(nl),
                 "layer_size": int(np_)}
                for variant in variants
                for t in section["orders"]
                for nl in section["n_layers_list"]
                for np_ in section["layer_size_list"]]
    if experiment == "robustness":
        section = cfg["robustness"]
        return [{"method": m, "sigma_u": float(su), "sigma_tau": float(st)}
                for m in section["methods"]
                for st in section["sigma_taus"]
                for su in section["sigma_us"]]
    section = cfg["scaling"]
    return [{"method": m, "n_qubits": int(q)}
            for m in section["methods"]
            for q in section["qubit_counts"]]


# single-run drivers ----------------------------------------------------


def _optimizer_config(cfg: dict, offset: float) -> OptimizerConfig:
    spec = cfg.get("optimizer", {})
    target_score = spec.get("target_score")
    return OptimizerConfig(
        max_evaluations=int(spec.get("max_evaluations", 10000)),
        target_fom=None if target_score is None
        else float(target_score) + offset,
        xatol=float(spec.get("xatol", 1e-8)),
        fatol=float(spec.get("fatol", 1e-12)),
        gtol=float(spec.get("gtol", 1e-10)),
        max_iterations=spec.get("max_iterations"),
        max_seconds=spec.get("max_seconds"))


def _run_optimization(cfg: dict, group: dict, seed: int) -> dict:
    sys, n_qubits = build_system(cfg)
    fom, offset = build_target(cfg, sys, n_qubits)
    method = cfg["method"]
    ocfg = _optimizer_config(cfg, offset)
    opt_kind = cfg["optimizer"]["kind"]
    kind = group["method"]
    t0 = time.perf_counter()

    if kind == "rally_t":
        bandwidth = None
        if method.get("bandwidth"):
            bandwidth = RiseProfile(**{k: v for k, v in
                                       method["bandwidth"].items()})
        seq = PulseSequence.rally_t(
            sys, group["n_layers"], group["layer_size"], seed,
            bandwidth=bandwidth,
            total_duration=group.get("init_total_duration"))
        cache = PropagatorCache(sys)
        cache.stack(seq.pulse_amplitudes())
        preprocess = time.perf_counter() - t0
        lo = group["layer_size"] * sys.min_pulse_duration
        bounds = [(lo, None)] * group["n_layers"]
        if opt_kind == "quasi_newton":
            def objective(p):
                res = gradients.rally_t_gradient(
                    sys, seq.with_parameters(p), fom, cache)
                return res.value, res.gradient
            run = quasi_newton(objective, seq.parameters, ocfg, bounds)
        else:
            run = nelder_mead(
                lambda p: gradients.fom_value(
                    sys, seq.with_parameters(p), fom, cache),
                seq.parameters, ocfg, bounds)
        best_seq = seq.with_parameters(run.best_params)
        total = pulses.rally_t_with_bandwidth(sys, best_seq, cache=cache) \
            if bandwidth is not None \
            else pulses.rally_t_propagator(sys, best_seq, cache)
        final_duration = best_seq.total_duration()
        n_params = group["n_layers"]
    elif kind == "rally_a":
        seq = PulseSequence.rally_a(sys, group["n_layers"],
                                    group["layer_size"],
                                    float(method["dt"]), seed)
        preprocess = time.perf_counter() - t0
        bounds = [(0.0, 1.0)] * group["n_layers"]
        if opt_kind == "quasi_newton":
            def objective(p):
                res = gradients.rally_a_gradient(
                    sys, seq.with_parameters(p), fom)
                return res.value, res.gradient
            run = quasi_newton(objective, seq.parameters, ocfg, bounds)
        else:
            run = nelder_mead(
                lambda p: gradients.fom_value(
                    sys, seq.with_parameters(p), fom),
                seq.parameters, ocfg, bounds)
        best_seq = seq.with_parameters(run.best_params)
        total = pulses.rally_a_propagator(sys, best_seq)
        final_duration = best_seq.total_duration()
        n_params = group["n_layers"]
    elif kind == "grape":
        n_steps = group["n_steps"]
        dt = float(method["dt"]) if "dt" in method \
            else float(method["total_time"]) / n_steps
        if sys.amplitude_domain.is_discrete:
            raise SchemaMismatch("grape needs a continuous amplitude domain")
        x0 = sys.amplitude_domain.sample(np.random.default_rng(seed),
                                         n_steps)
        preprocess = time.perf_counter() - t0
        dom = (sys.amplitude_domain.lower, sys.amplitude_domain.upper)
        bounds = [dom] * n_steps
        if opt_kind == "quasi_newton":
            def objective(p):
                res = gradients.grape_gradient(sys, p, dt, fom)
                return res.value, res.gradient
            run = quasi_newton(objective, x0, ocfg, bounds)
        else:
            run = nelder_mead(
                lambda p: fom.value(pulses.grape_propagator(sys, p, dt)),
                x0, ocfg, bounds)
        total = pulses.grape_propagator(sys, run.best_params, dt)
        final_duration = n_steps * dt
        n_params = n_steps
    else:
        total_time = float(method["total_time"])
        run = dcrab_driver(sys, fom, total_time, group["n_steps"],
                           group["n_frequencies"],
                           float(method["delta_omega"]), ocfg, seed)
        preprocess = 0.0
        total = pulses.grape_propagator(sys, run.best_params,
                                        total_time / group["n_steps"])
        final_duration = total_time
        n_params = 1 + 2 * group["n_frequencies"]

    extras = {"final_duration": final_duration, "n_params": n_params}
    if cfg["experiment"] == "ground_state":
        psi = total @ fom.psi0
        extras["entropy"] = entanglement_entropy(psi, n_qubits)
        extras["ground_energy"] = offset
    return {
        "experiment": cfg["experiment"],
        "seed": seed,
        "group": group,
        "score": run.best_fom - offset,
        "best_fom": run.best_fom,
        "fom_evaluations": run.fom_evaluations,
        "stop_reason": run.stop_reason,
        "score_trace": [[n, v - offset] for n, v in run.trace],
        "best_params": np.asarray(run.best_params).tolist(),
        "wall_time": run.wall_time,
        "preprocess_seconds": preprocess,
        "extras": extras,
    }


def _run_moments(cfg: dict, group: dict, seed: int) -> dict:
    sys, _ = build_system(cfg)
    section = cfg["moments"]
    duration_range = tuple(float(x) for x in section["duration_range"])
    if group["variant"] == "fixed":
        template = PulseSequence.rally_t(sys, group["n_layers"],
                                         group["layer_size"],
                                         int(section.get("template_seed", 0)))
        estimate = analysis.moment_gap_fixed_amplitudes(
            sys, template, group["t"], int(section["n_pairs"]), seed,
            duration_range)
    else:
        sampler = analysis.rally_t_sampler(sys, group["n_layers"],
                                           group["layer_size"],
                                           duration_range)
        estimate = analysis.moment_gap(sampler, group["t"],
                                       int(section["n_pairs"]), seed)
    return {
        "experiment": cfg["experiment"],
        "seed": seed,
        "group": group,
        "delta": estimate.delta,
        "value": estimate.value,
        "plateau": estimate.plateau,
        "n_pairs": estimate.n_pairs,
        "wall_time": 0.0,
    }


def _converged_pair(cfg: dict, seed: int
                    ) -> Tuple[ControlSystem, FigureOfMerit,
                               PulseSequence, PulseSequence]:
    """Optimize one rally_t and one total-time-matched grape solution for
    the robustness study. Memoized per (config, seed): every sigma group
    perturbs the same converged pair."""
    return _converged_pair_cached(json.dumps(cfg, sort_keys=True), seed)


@functools.lru_cache(maxsize=8)
def _converged_pair_cached(cfg_json: str, seed: int):
    cfg = json.loads(cfg_json)
    section = cfg["robustness"]
    sys, n_qubits = build_system(cfg)
    fom, offset = build_target(cfg, sys, n_qubits)
    n_layers = int(section["n_layers"])
    layer_size = int(section["layer_size"])
    ocfg = OptimizerConfig(max_evaluations=20000,
                           target_fom=float(section["prep_target"]) + offset,
                           fatol=1e-15, gtol=1e-12)
    seq = PulseSequence.rally_t(sys, n_layers, layer_size, seed)
    cache = PropagatorCache(sys)

    def rt_objective(p):
        res = gradients.rally_t_gradient(sys, seq.with_parameters(p), fom,
                                         cache)
        return res.value, res.gradient

    rt_run = quasi_newton(rt_objective, seq.parameters, ocfg,
                          [(0.0, None)] * n_layers)
    best_rt = seq.with_parameters(rt_run.best_params)

    dt = best_rt.total_duration() / n_layers
    x0 = np.random.default_rng(seed + 10 ** 6).uniform(
        sys.amplitude_domain.lower, sys.amplitude_domain.upper, n_layers)

    def g_objective(p):
        res = gradients.grape_gradient(sys, p, dt, fom)
        return res.value, res.gradient

    g_run = quasi_newton(g_objective, x0, ocfg,
                         [(sys.amplitude_domain.lower,
                           sys.amplitude_domain.upper)] * n_layers)
    best_g = PulseSequence.grape(n_layers, dt, g_run.best_params)
    return sys, fom, best_rt, best_g


def _run_robustness(cfg: dict, group: dict, seed: int) -> dict:
    section = cfg["robustness"]
    sys, fom, best_rt, best_g = _converged_pair(cfg, seed)
    seq = best_rt if group["method"] == "rally_t" else best_g
    rng = np.random.default_rng(seed + 2 ** 20)
    report = analysis.robustness_study(sys, seq, fom, group["sigma_u"],
                                       group["sigma_tau"],
                                       int(section["n_samples"]), rng)
    return {
        "experiment": cfg["experiment"],
        "seed": seed,
        "group": group,
        "mean_delta_j": report.mean_delta_j,
        "bound": report.bound,
        "n_samples": report.samples,
        "unperturbed_score": gradients.fom_value(sys, seq, fom),
        "wall_time": 0.0,
    }


def _run_scaling(cfg: dict, group: dict, seed: int) -> dict:
    section = cfg["scaling"]
    n_qubits = group["n_qubits"]
    sys, fom = analysis.ising_ghz_family(n_qubits, field_seed=n_qubits)
    n_params = math.ceil(float(section["param_margin"]) * (2 * sys.dim - 2))
    reached, pre, total_s, evals = analysis.scaling_run(
        sys, fom, group["method"], n_params,
        float(section["target_score"]), float(section["budget_seconds"]),
        seed)
    return {
        "experiment": cfg["experiment"],
        "seed": seed,
        "group": group,
        "dimension": sys.dim,
        "reached": bool(reached),
        "fom_evaluations": evals,
        "preprocess_seconds": pre,
        "wall_time": total_s,
    }


def run_one(cfg: dict, group: dict, seed: int) -> dict:
    experiment = cfg["experiment"]
    if experiment in _OPTIMIZATION_EXPERIMENTS:
        return _run_optimization(cfg, group, seed)
    if experiment == "moment_convergence":
        return _run_moments(cfg, group, seed)
    if experiment == "robustness":
        return _run_robustness(cfg, group, seed)
    return _run_scaling(cfg, group, seed)


def _pool_task(payload):
    cfg, group_index, group, seed = payload
    record = run_one(cfg, group, seed)
    record["group_index"] = group_index
    return record


# aggregation -----------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ABSENT
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _median(values: Sequence[float]) -> Optional[float]:
    return float(np.median(values)) if len(values) else None


def _evals_to(record: dict, threshold: float) -> Optional[int]:
    for n, score in record.get("score_trace", []):
        if score <= threshold:
            return int(n)
    return None


def _duration_bin(value: float,
                  edges: Sequence[float]) -> Tuple[str, float]:
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo <= value < hi:
            return f"{lo:g}-{hi:g}", float(lo)
    return f">={edges[-1]:g}", float(edges[-1])


def aggregate_records(records: List[dict], cfg: dict) -> List[dict]:
    """Deterministic per-group summary rows (no wall-time fields)."""
    if not records:
        raise SchemaMismatch("no run records to aggregate")
    experiment = cfg["experiment"]
    thresholds = cfg.get("thresholds", [1e-3])

    def group_of(record):
        try:
            return record["group"], record["group_index"]
        except KeyError as exc:
            raise SchemaMismatch(f"run record missing key {exc}")

    buckets: Dict[str, dict] = {}
    for record in sorted(records,
                         key=lambda r: (r.get("group_index", 0),
                                        r.get("seed", 0))):
        group, index = group_of(record)
        if experiment in _OPTIMIZATION_EXPERIMENTS and \
                cfg.get("aggregate_by_duration"):
            edges = cfg["aggregate_by_duration"].get(
                "edges", DEFAULT_DURATION_EDGES)
            label, lo = _duration_bin(record["extras"]["final_duration"],
                                      edges)
            group = {"layer_size": group.get("layer_size", 1),
                     "duration_bin": label}
            index = (group["layer_size"], lo)
        key = json.dumps(group, sort_keys=True)
        buckets.setdefault(key, {"group": group, "index": index,
                                 "records": []})["records"].append(record)

    rows = []
    for bucket in sorted(buckets.values(), key=lambda b: b["index"]):
        group, members = bucket["group"], bucket["records"]
        # canonical column order: identical whether records come from
        # memory or from re-read JSON files
        row = {key: group[key] for key in sorted(group)}
        row["n_seeds"] = len(members)
        if experiment in _OPTIMIZATION_EXPERIMENTS:
            scores = [r["score"] for r in members]
            row["median_score"] = _median(scores)
            row["n_params"] = members[0]["extras"]["n_params"]
            for threshold in thresholds:
                successes = [r for r in members if r["score"] <= threshold]
                row[f"success_at_{threshold:g}"] = \
                    len(successes) / len(members)
                evals = [_evals_to(r, threshold) for r in successes]
                evals = [e for e in evals if e is not None]
                row[f"median_evals_at_{threshold:g}"] = _median(evals)
            if cfg["experiment"] == "ground_state":
                row["median_entropy"] = _median(
                    [r["extras"]["entropy"] for r in members])
        elif experiment == "moment_convergence":
            row["median_delta"] = _median([r["delta"] for r in members])
            row["median_value"] = _median([r["value"] for r in members])
            row["plateau"] = members[0]["plateau"]
            row["n_pairs"] = members[0]["n_pairs"]
        elif experiment == "robustness":
            row["median_mean_delta_j"] = _median(
                [r["mean_delta_j"] for r in members])
            row["median_bound"] = _median([r["bound"] for r in members])
            row["n_samples"] = members[0]["n_samples"]
        else:
            row["dimension"] = members[0]["dimension"]
            reached = [r for r in members if r["reached"]]
            row["n_success"] = len(reached)
            row["median_evaluations"] = _median(
                [r["fom_evaluations"] for r in reached])
        rows.append(row)
    return rows


def write_csv(rows: List[dict], path: Path):
    if not rows:
        raise SchemaMismatch("nothing to write")
    columns = list(rows[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def _log_scale_flags(experiment: str) -> dict:
    if experiment == "moment_convergence":
        return {"delta": True}
    if experiment == "scaling":
        return {"dimension": True, "seconds": True}
    if experiment == "robustness":
        return {"sigma": True, "mean_delta_j": True}
    return {"median_score": True}


# experiment execution --------------------------------------------------


def run_experiment(cfg: dict, out_dir: str, workers: int = 1) -> Path:
    """Execute all groups and seeds; write per-seed JSONs, aggregate.csv,
    timing.csv (scaling only), and manifest.json. Returns the output dir."""
    out = Path(out_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    groups = expand_groups(cfg)
    tasks = [(cfg, gi, group, seed)
             for gi, group in enumerate(groups)
             for seed in cfg["seeds"]]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_pool_task, tasks))
    else:
        records = [_pool_task(task) for task in tasks]
    records.sort(key=lambda r: (r["group_index"], r["seed"]))

    for record in records:
        name = f"run_g{record['group_index']:03d}_s{record['seed']:05d}.json"
        (out / "runs" / name).write_text(
            json.dumps(record, sort_keys=True, indent=1), encoding="utf-8")

    rows = aggregate_records(records, cfg)
    write_csv(rows, out / "aggregate.csv")

    if cfg["experiment"] == "scaling":
        timing = [{"method": r["group"]["method"],
                   "dimension": r["dimension"], "seed": r["seed"],
                   "reached": r["reached"],
                   "preprocess_seconds": r["preprocess_seconds"],
                   "total_seconds": r["wall_time"]} for r in records]
        write_csv(timing, out / "timing.csv")

    manifest = {
        "toolkit_version": __version__,
        "experiment": cfg["experiment"],
        "config": cfg,
        "config_hash": config_hash(cfg),
        "log_scale": _log_scale_flags(cfg["experiment"]),
        "n_records": len(records),
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8")
    return out


def read_run_dir(path: str) -> Tuple[List[dict], dict]:
    """Load per-seed records and the manifest config from a run directory."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise SchemaMismatch(f"no manifest.json under {path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    records = []
    for file in sorted((root / "runs").glob("*.json")):
        records.append(json.loads(file.read_text(encoding="utf-8")))
    if not records:
        raise SchemaMismatch(f"no run records under {path}/runs")
    return records, manifest["config"]


def aggregate_dir(path: str, out_path: Optional[str] = None) -> Path:
    """Re-aggregate a run directory into a CSV (aggregate.csv by default)."""
    records, cfg = read_run_dir(path)
    rows = aggregate_records(records, cfg)
    target = Path(out_path) if out_path else Path(path) / "aggregate.csv"
    write_csv(rows, target)
    return target


# plot data -------------------------------------------------------------

PLOT_KINDS = ("moments", "convergence", "heatmap", "scaling")


def emit_plot_data(path: str, kind: str,
                   out_path: Optional[str] = None) -> Path:
    """Long-format figure-ready CSV derived from a run directory."""
    if kind not in PLOT_KINDS:
        raise SchemaMismatch(f"plot kind must be one of {PLOT_KINDS}")
    records, cfg = read_run_dir(path)
    rows = aggregate_records(records, cfg)
    thresholds = cfg.get("thresholds", [1e-3])
    threshold = thresholds[0]
    if kind == "moments":
        out_rows = [{"t": row["t"],
                     "NL_times_NP": row["n_layers"] * row["layer_size"],
                     "variant": row["variant"],
                     "delta": row["median_delta"],
                     "plateau": row["plateau"]} for row in rows]
    elif kind == "convergence":
        out_rows = [{"n_params": row["n_params"],
                     "median_J": row["median_score"],
                     "success_prob": row[f"success_at_{threshold:g}"],
                     "median_evals": row[f"median_evals_at_{threshold:g}"]}
                    for row in rows]
    elif kind == "heatmap":
        if "duration_bin" not in rows[0]:
            edges = cfg.get("aggregate_by_duration", {}).get(
                "edges", DEFAULT_DURATION_EDGES)
            regrouped = dict(cfg)
            regrouped["aggregate_by_duration"] = {"edges": edges}
            rows = aggregate_records(records, regrouped)
        out_rows = [{"total_duration_bin": row["duration_bin"],
                     "NP": row["layer_size"],
                     "success_prob": row[f"success_at_{threshold:g}"]}
                    for row in rows]
    else:
        buckets: Dict[Tuple, List[float]] = {}
        for record in records:
            if not record.get("reached"):
                continue
            key = (record["group"]["method"], record["dimension"])
            buckets.setdefault(key, []).append(
                record["preprocess_seconds"] + record["wall_time"])
        out_rows = [{"dimension": dim, "median_seconds": _median(times),
                     "method": method}
                    for (method, dim), times in sorted(buckets.items())]
    target = Path(out_path) if out_path else Path(path) / f"plot_{kind}.csv"
    write_csv(out_rows, target)
    return target
