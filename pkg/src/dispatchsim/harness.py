"""Instance generation, trace ingestion and experiment orchestration.

Synthetic instances put the APs on a Barabasi-Albert graph, collocate the
edge servers with randomly chosen APs, and let each AP reach the cloud, its
own collocated server and the servers collocated with its graph neighbors.
Experiments run paired-seed policy comparisons (common random numbers) with
optional one-axis sensitivity sweeps and write CSV/JSON result bundles.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import networkx as nx
import numpy as np

from . import __version__
from .model import (ArrivalModel, Instance, ServiceModel, SignalingLatencyModel,
                    SystemConfig, UploadLatencyModel, horizon_for,
                    instance_to_json, make_topology, validate_instance)
from .policy import make_policy
from .sim import discounted_cost, run

RESULT_SCHEMA_VERSION = 1

SWEEP_AXES = ("none", "signaling_latency", "arrival_scale", "proc_time_scale")


class GenerationFailed(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


class IndexOutOfRange(ParseError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    """Knobs for the synthetic workload; defaults match the desk-scale setup."""
    num_aps: int = 15
    num_servers: int = 10
    num_job_types: int = 10
    ba_attachment: int = 2
    seed: int = 0
    arrival_scale: float = 1.0
    arrival_cap: float = 0.04
    proc_time_scale: float = 1.0
    signaling_fractions: tuple = (0.7, 0.9)
    slots_per_interval: int = 25
    max_queue_len: int = 50
    overflow_penalty: float = 120.0
    discount: float = 0.95

    def __post_init__(self):
        if self.ba_attachment < 1:
            raise GenerationFailed("ba_attachment must be >= 1")
        if self.arrival_scale <= 0 or self.proc_time_scale <= 0:
            raise GenerationFailed("scales must be positive")
        if not 0 < self.arrival_cap <= 1:
            raise GenerationFailed("arrival_cap must lie in (0, 1]")


def _bump_pmf(rng, center: float, width: float, lo: int, hi: int) -> np.ndarray:
    """Discretized gaussian bump supported on integer slots [lo, hi]."""
    xs = np.arange(lo, hi + 1, dtype=float)
    w = np.exp(-0.5 * ((xs - center) / width) ** 2)
    w += 1e-12
    return w / w.sum()


def generate_instance(spec: GeneratorSpec) -> Instance:
    """Random instance on a BA topology; deterministic in spec.seed."""
    K, M, J = spec.num_aps, spec.num_servers, spec.num_job_types
    if M > K:
        raise GenerationFailed(f"cannot place {M} servers on {K} APs")
    t_b = spec.slots_per_interval
    xi = 3 * t_b
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))

    if K == 1:
        graph = nx.empty_graph(1)
    else:
        graph = nx.barabasi_albert_graph(
            K, min(spec.ba_attachment, K - 1), seed=int(rng.integers(2 ** 31)))
    hosts = rng.choice(K, size=M, replace=False)    # server m=i+1 sits at AP hosts[i]
    host_of = {m + 1: int(hosts[m]) for m in range(M)}

    candidates = []
    for k in range(K):
        cand = {0}
        near = {k} | set(graph.neighbors(k))
        cand |= {m for m, h in host_of.items() if h in near}
        candidates.append(sorted(cand))
    collocated = [(h, m) for m, h in host_of.items()]
    topo = make_topology(candidates, collocated, M)

    # arrival intensities: lognormal across streams for load imbalance,
    # capped per stream so no single queue is hopelessly oversubscribed
    lam = spec.arrival_scale * rng.lognormal(np.log(0.02), 1.0, size=(K, J))
    lam = np.clip(lam, 0.0, spec.arrival_cap)

    pmf = np.zeros((K, M + 1, J, xi + 1))
    pmf[:, :, :, 1] = 1.0                           # unused routes: dummy point mass
    for k in range(K):
        for m in topo.candidate_servers[k]:
            if topo.is_collocated(k, m):
                pmf[k, m, :, :] = 0.0
                pmf[k, m, :, 0] = 1.0
                continue
            for j in range(J):
                if m == 0:
                    center = rng.uniform(2 * t_b, 3 * t_b)   # cloud is far
                else:
                    center = rng.uniform(1, 0.4 * t_b)
                pmf[k, m, j, :] = 0.0
                pmf[k, m, j, 1:] = _bump_pmf(rng, center, t_b / 4, 1, xi)

    proc = np.empty((M + 1, J))
    proc[0] = rng.uniform(20.0, 40.0, size=J)       # cloud: slow and far
    proc[1:] = rng.uniform(12.0, 18.0, size=(M, J))
    proc = np.maximum(1.0, spec.proc_time_scale * proc)

    lo = int(np.ceil(spec.signaling_fractions[0] * t_b))
    hi = int(np.floor(spec.signaling_fractions[1] * t_b))
    lo, hi = max(0, min(lo, t_b - 1)), max(0, min(hi, t_b - 1))
    if hi < lo:
        lo = hi
    sig = np.zeros((K, t_b))
    sig[:, lo:hi + 1] = 1.0 / (hi - lo + 1)

    config = SystemConfig(
        num_aps=K, num_servers=M, num_job_types=J, slots_per_interval=t_b,
        max_upload_latency=xi, max_queue_len=spec.max_queue_len,
        overflow_penalty=spec.overflow_penalty, discount=spec.discount,
        horizon_intervals=horizon_for(spec.discount, spec.max_queue_len,
                                      spec.overflow_penalty))
    return validate_instance(config, topo, ArrivalModel(lam),
                             UploadLatencyModel(pmf), ServiceModel(proc),
                             SignalingLatencyModel(sig))


# ---------------------------------------------------------------------------
# Trace ingestion

def ingest_trace(instance: Instance, arrivals_csv: str,
                 services_csv: str | None = None) -> Instance:
    """Replace the arrival model (and optionally processing times) from CSVs.

    Arrival rows are ``slot,ap,job_type[,count]``; multiple jobs on one row
    dispatch in that slot one after another in row order.  Service rows are
    ``job_type,server,mean_proc_slots``.  The Bernoulli intensities are reset
    to the empirical per-slot rates so value predictions track the trace.
    """
    cfg = instance.config
    K, J = cfg.num_aps, cfg.num_job_types
    trace: dict = {}
    counts = np.zeros((K, J))
    max_slot = -1
    with open(arrivals_csv, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if row[0].strip().lower() in ("slot", "t"):
                continue
            try:
                slot, k, j = int(row[0]), int(row[1]), int(row[2])
                count = int(row[3]) if len(row) > 3 and row[3].strip() else 1
            except (ValueError, IndexError):
                raise ParseError(arrivals_csv, lineno,
                                 f"expected slot,ap,job_type[,count], got {row!r}")
            if slot < 0 or count < 1:
                raise ParseError(arrivals_csv, lineno, "slot/count out of range")
            if not (0 <= k < K and 0 <= j < J):
                raise IndexOutOfRange(arrivals_csv, lineno,
                                      f"ap {k} or job type {j} out of range")
            trace.setdefault(slot, []).append((k, j, count))
            counts[k, j] += count
            max_slot = max(max_slot, slot)
    span = max_slot + 1
    probs = np.clip(counts / span, 0.0, 1.0) if span > 0 else np.zeros((K, J))
    arrivals = ArrivalModel(probs, {s: tuple(v) for s, v in sorted(trace.items())})

    service = instance.service
    if services_csv is not None:
        proc = instance.service.mean_proc.copy()
        with open(services_csv, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].strip().startswith("#"):
                    continue
                if row[0].strip().lower() in ("job_type", "j"):
                    continue
                try:
                    j, m, mean = int(row[0]), int(row[1]), float(row[2])
                except (ValueError, IndexError):
                    raise ParseError(services_csv, lineno,
                                     f"expected job_type,server,mean_proc_slots, got {row!r}")
                if not (0 <= j < J and 0 <= m <= cfg.num_servers):
                    raise IndexOutOfRange(services_csv, lineno,
                                          f"job type {j} or server {m} out of range")
                if mean < 1.0:
                    raise ParseError(services_csv, lineno,
                                     "mean processing time must be >= 1 slot")
                proc[m, j] = mean
        service = ServiceModel(proc)
    return validate_instance(cfg, instance.topology, arrivals, instance.upload,
                             service, instance.signaling)


# ---------------------------------------------------------------------------
# Experiments

@dataclass(frozen=True)
class ExperimentSpec:
    instance_path: str | None = None
    generator: GeneratorSpec | None = None
    policies: tuple = ("mdp", "random", "selfish", "queue_aware")
    num_intervals: int = 500
    replications: int = 5
    seed: int = 0
    sweep_axis: str = "none"
    sweep_values: tuple = ()
    out_dir: str = "results"
    jobs: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"sweep_axis must be one of {SWEEP_AXES}")
        if self.sweep_axis != "none" and not self.sweep_values:
            raise ValueError("sweep requires at least one value")
        if any(v <= 0 for v in self.sweep_values):
            raise ValueError("sweep values must be positive")


def experiment_spec_from_json(doc: dict) -> ExperimentSpec:
    gen = doc.get("generator")
    return ExperimentSpec(
        instance_path=doc.get("instance_path"),
        generator=GeneratorSpec(**gen) if gen else None,
        policies=tuple(doc.get("policies", ("mdp", "random", "selfish", "queue_aware"))),
        num_intervals=doc.get("num_intervals", 500),
        replications=doc.get("replications", 5),
        seed=doc.get("seed", 0),
        sweep_axis=doc.get("sweep_axis", "none"),
        sweep_values=tuple(doc.get("sweep_values", ())),
        out_dir=doc.get("out_dir", "results"),
        jobs=doc.get("jobs", 1))


def apply_sweep(instance: Instance, axis: str, value: float) -> Instance:
    """One-axis perturbation of an instance, revalidated."""
    cfg = instance.config
    arrivals, service, signaling = (instance.arrivals, instance.service,
                                    instance.signaling)
    if axis == "signaling_latency":
        d = min(int(value), cfg.slots_per_interval - 1)
        pmf = np.zeros((cfg.num_aps, cfg.slots_per_interval))
        pmf[:, d] = 1.0
        signaling = SignalingLatencyModel(pmf)
    elif axis == "arrival_scale":
        arrivals = ArrivalModel(np.clip(instance.arrivals.probs * value, 0.0, 1.0),
                                instance.arrivals.trace)
    elif axis == "proc_time_scale":
        service = ServiceModel(np.maximum(1.0, instance.service.mean_proc * value))
    elif axis != "none":
        raise ValueError(f"unknown sweep axis {axis!r}")
    return validate_instance(cfg, instance.topology, arrivals, instance.upload,
                             service, signaling)


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _run_csv(records, t_b: int) -> str:
    lines = ["t,cost,jobs_in_system,arrivals,completions,drops"]
    for r in records:
        lines.append(f"{r.interval},{r.cost:.6g},{r.jobs_in_system},"
                     f"{r.arrivals},{r.completions},{r.drops}")
    return "\n".join(lines) + "\n"


def _summarize(records, gamma: float, t_b: int) -> dict:
    arrivals = sum(r.arrivals for r in records)
    drops = sum(r.drops for r in records)
    resp_slots = [x for r in records for x in r.response_slots]
    resp_intervals = [x for r in records for x in r.response_intervals(t_b)]
    jobs = sorted(r.jobs_in_system for r in records)
    n = len(jobs)
    cdf = [[float(v), (i + 1) / n] for i, v in enumerate(jobs)
           if i + 1 == n or jobs[i + 1] != v]
    return {
        "mean_cost": float(np.mean([r.cost for r in records])),
        "discounted_cost": discounted_cost(records, gamma, len(records)),
        "mean_response_intervals": float(np.mean(resp_intervals)) if resp_intervals else 0.0,
        "mean_response_slots": float(np.mean(resp_slots)) if resp_slots else 0.0,
        "drop_rate": drops / arrivals if arrivals else 0.0,
        "mean_jobs_in_system": float(np.mean([r.mean_jobs for r in records])),
        "arrivals": arrivals,
        "completions": sum(r.completions for r in records),
        "drops": drops,
        "jobs_cdf": cdf,
    }


def _grid_point(instance: Instance, policy_name: str, num_intervals: int,
                seed: int) -> list:
    policy = make_policy(policy_name, instance, seed=seed)
    records = run(instance, policy, num_intervals, seed=seed)
    return records


@dataclass
class ResultBundle:
    out_dir: str
    manifest: dict
    aggregate: dict     # sweep label -> policy -> summary with per-rep lists


def run_experiment(spec: ExperimentSpec) -> ResultBundle:
    """Run the full (sweep value x policy x replication) grid and write results.

    Replication r of every policy shares ``seed + r``, so all policies face
    identical arrival draws (common random numbers).  Per-run CSVs are written
    as soon as each run finishes; the aggregate is flushed even if a later
    grid point fails.
    """
    if spec.instance_path:
        from .model import load_instance
        base = load_instance(spec.instance_path)
    elif spec.generator:
        base = generate_instance(spec.generator)
    else:
        raise ValueError("spec needs an instance path or a generator")

    doc = json.dumps(instance_to_json(base), sort_keys=True)
    manifest = {
        "schema_version": RESULT_SCHEMA_VERSION,
        "version": __version__,
        "instance_sha256": hashlib.sha256(doc.encode()).hexdigest(),
        "seed": spec.seed,
        "replication_seeds": [spec.seed + r for r in range(spec.replications)],
        "policies": list(spec.policies),
        "num_intervals": spec.num_intervals,
        "sweep_axis": spec.sweep_axis,
        "sweep_values": list(spec.sweep_values),
    }
    sweep_points = ([("base", base)] if spec.sweep_axis == "none" else
                    [(f"{spec.sweep_axis}={v:g}", apply_sweep(base, spec.sweep_axis, v))
                     for v in spec.sweep_values])

    aggregate: dict = {}
    gamma = base.config.discount
    t_b = base.config.slots_per_interval
    grid = [(label, inst, pol, r) for label, inst in sweep_points
            for pol in spec.policies for r in range(spec.replications)]
    summaries: dict = {}
    try:
        if spec.jobs > 1:
            pool = ProcessPoolExecutor(max_workers=spec.jobs)
            runs = pool.map(
                _grid_point,
                [inst for (_l, inst, _p, _r) in grid],
                [pol for (_l, _i, pol, _r) in grid],
                [spec.num_intervals] * len(grid),
                [spec.seed + r for (_l, _i, _p, r) in grid])
        else:
            pool = None
            runs = (_grid_point(inst, pol, spec.num_intervals, spec.seed + r)
                    for (_l, inst, pol, r) in grid)
        try:
            # flush each run's CSV as soon as it completes
            for (label, _inst, pol, r), records in zip(grid, runs):
                _atomic_write(os.path.join(spec.out_dir, "runs", label, pol,
                                           f"rep{r}.csv"),
                              _run_csv(records, t_b))
                summaries.setdefault((label, pol), []).append(
                    _summarize(records, gamma, t_b))
        finally:
            if pool is not None:
                pool.shutdown()
    finally:
        # aggregate whatever completed, even on abort
        for (label, pol), reps in summaries.items():
            merged = {k: [s[k] for s in reps] for k in reps[0]
                      if k != "jobs_cdf"}
            merged["jobs_cdf"] = _merge_cdfs([s["jobs_cdf"] for s in reps])
            aggregate.setdefault(label, {})[pol] = merged
        _atomic_write(os.path.join(spec.out_dir, "aggregate.json"),
                      json.dumps({"schema_version": RESULT_SCHEMA_VERSION,
                                  "aggregate": aggregate}, indent=1,
                                 sort_keys=True) + "\n")
        _atomic_write(os.path.join(spec.out_dir, "manifest.json"),
                      json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return ResultBundle(spec.out_dir, manifest, aggregate)


def _merge_cdfs(cdfs) -> list:
    """Pool per-replication empirical CDFs into one."""
    values = sorted({v for cdf in cdfs for (v, _c) in cdf})
    out = []
    for v in values:
        c = np.mean([_cdf_at(cdf, v) for cdf in cdfs])
        out.append([v, float(c)])
    return out


def _cdf_at(cdf, v) -> float:
    c = 0.0
    for (x, cx) in cdf:
        if x <= v:
            c = cx
        else:
            break
    return c


# ---------------------------------------------------------------------------
# Plot data

def emit_plotdata(bundle: ResultBundle) -> list:
    """Write per-figure CSVs under <out>/plotdata; returns the paths."""
    out = os.path.join(bundle.out_dir, "plotdata")
    paths = []

    lines = ["sweep,policy,mean_cost,mean_response_intervals,drop_rate,"
             "mean_jobs_in_system"]
    for label in bundle.aggregate:
        for pol, s in bundle.aggregate[label].items():
            lines.append(f"{label},{pol},{np.mean(s['mean_cost']):.6g},"
                         f"{np.mean(s['mean_response_intervals']):.6g},"
                         f"{np.mean(s['drop_rate']):.6g},"
                         f"{np.mean(s['mean_jobs_in_system']):.6g}")
    p = os.path.join(out, "bar_metrics.csv")
    _atomic_write(p, "\n".join(lines) + "\n")
    paths.append(p)

    for label in bundle.aggregate:
        for pol, s in bundle.aggregate[label].items():
            lines = ["jobs_in_system,cumulative_prob"]
            lines += [f"{v:g},{c:.6g}" for (v, c) in s["jobs_cdf"]]
            p = os.path.join(out, f"cdf_{label}_{pol}.csv".replace("=", "-"))
            _atomic_write(p, "\n".join(lines) + "\n")
            paths.append(p)

    lines = ["sweep,policy,mean_jobs_in_system"]
    for label in bundle.aggregate:
        for pol, s in bundle.aggregate[label].items():
            lines.append(f"{label},{pol},{np.mean(s['mean_jobs_in_system']):.6g}")
    p = os.path.join(out, "sweep_curves.csv")
    _atomic_write(p, "\n".join(lines) + "\n")
    paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# Certification (oracle-vs-implementation checks, re-runnable on any instance)

def certify_instance(instance: Instance, seed: int = 0,
                     replications: int = 2000, T: int | None = None) -> list:
    """Run the oracle cross-checks on one instance; list of (name, ok, detail)."""
    from . import oracle
    from .valuefn import (ArrivalHazardSchedule, approx_value,
                          baseline_queue_hazards, queue_value, transit_value)
    from .policy import selfish_actions
    from .model import GlobalState

    cfg = instance.config
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    results = []

    if T is None:
        T = cfg.horizon_intervals + 1
    actions = selfish_actions(instance)
    empty = GlobalState({}, actions,
                        np.zeros((cfg.num_servers + 1, cfg.num_job_types),
                                 dtype=np.int64))
    est = oracle.mc_discounted_cost(instance, "static", T, replications, seed)
    approx = approx_value(empty, actions, instance).total
    gap = abs(approx - est.mean)
    tol = 3.0 * est.standard_error + est.tail_bound
    results.append(("value_vs_simulation", gap <= tol,
                    f"approx={approx:.4f} mc={est.mean:.4f}+-{est.standard_error:.4f} "
                    f"tail<{est.tail_bound:.2g}"))

    # queue chains at a few random routes
    ok, detail = True, []
    for _ in range(3):
        m = int(rng.integers(0, cfg.num_servers + 1))
        j = int(rng.integers(0, cfg.num_job_types))
        haz = baseline_queue_hazards(empty, actions, instance, m, j)
        init = np.zeros(cfg.max_queue_len + 1)
        init[int(rng.integers(0, cfg.max_queue_len + 1))] = 1.0
        mean_proc = float(instance.service.mean_proc[m, j])
        exact = queue_value(init, haz, mean_proc, cfg)
        mc = oracle.mc_queue_value(init, haz, mean_proc, cfg, 4000,
                                   seed + m * 100 + j)
        lim = max(3.0 * mc.standard_error, 0.02 * abs(mc.mean))
        if abs(exact - mc.mean) > lim + 1e-9:
            ok = False
        detail.append(f"({m},{j}): {exact:.3f} vs {mc.mean:.3f}+-{mc.standard_error:.3f}")
    results.append(("queue_value_vs_mc", ok, "; ".join(detail)))

    # transit terms against direct per-boundary enumeration
    ok, worst = True, 0.0
    for k in range(cfg.num_aps):
        for j in range(cfg.num_job_types):
            m = int(actions[k, j])
            lam = float(instance.arrivals.probs[k, j])
            a = transit_value((), instance.upload.pmf[k, m, j], lam, True, cfg)
            b = oracle.enum_transit_value((), instance.upload.pmf[k, m, j],
                                          lam, True, cfg)
            worst = max(worst, abs(a - b))
    if worst > 1e-9:
        ok = False
    results.append(("transit_value_vs_enumeration", ok, f"max gap {worst:.2e}"))
    return results
