"""Experiment drivers: baseline, offloaded LSTM, and cascade weak scaling.

Each driver returns an :class:`ExperimentResult` with three tables:

* ``rows``: deterministic columns only (metrics, byte counts, message
  counts), one row per (workload, scope) or per (regime, backends).  These
  feed ``report.csv``, so a re-run on the same host reproduces it exactly.
* ``measurements``: timings and memory, same keys, mean and stddev.
* ``seeds``: the raw per-seed records, for the JSON report.
"""

from __future__ import annotations

import contextlib
import json
import statistics
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Any

from .topology import Topology, child_env

MODES = ("baseline", "offload", "cascade")
SCOPES = ("Baseline", "dC-Client", "dC-Server", "dC-Agg")
REGIMES = ("small", "large")
METRIC_KEYS = tuple(f"{c}.{m}" for c in ("cpu", "mem") for m in ("mse", "mae", "smape", "rmse"))
MB = 1e6


@dataclass
class ExperimentSpec:
    mode: str = "offload"
    backends: int = 1
    labels: list[str] | None = None
    throttle: dict[int, float] = field(default_factory=dict)
    latency_ms: float = 0.0
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    out: str = "bench-out"
    # LSTM workload
    series_length: int = 2000
    dataset_seed: int = 0
    csv_path: str | None = None
    epochs: int = 100
    hidden: int = 64
    lags: int = 6
    batch_size: int = 64
    learning_rate: float = 1e-3
    server_backend: int = 1
    metadata: str | None = None  # use a running deployment instead of spawning one
    # cascade workload
    points_per_backend: int = 1024
    block_size: int = 128
    dims: int = 2
    C: float = 1.0
    kernel: str = "linear"
    gamma: float | None = None
    max_iterations: int = 5
    regimes: tuple[str, ...] = REGIMES

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.seeds:
            raise ValueError("seed list must not be empty")
        if self.mode == "baseline" and self.backends != 0:
            raise ValueError("baseline runs in-process and needs 0 backends")
        if self.mode != "baseline" and self.backends < 1:
            raise ValueError(f"{self.mode} needs at least one backend")
        if self.mode == "offload" and not 1 <= self.server_backend <= self.backends:
            raise ValueError(f"server backend {self.server_backend} not in topology")
        if self.mode == "cascade":
            if self.backends & (self.backends - 1):
                raise ValueError("cascade backend count must be a power of two")
            if self.points_per_backend % self.block_size:
                raise ValueError("points per backend must be a multiple of the block size")
            if any(r not in REGIMES for r in self.regimes):
                raise ValueError(f"regimes must be drawn from {REGIMES}")
        for k in self.throttle:
            if not 1 <= k <= max(self.backends, 0):
                raise ValueError(f"throttle names backend {k}, not in topology")

    def workload_config(self, seed: int) -> dict[str, Any]:
        return {"series_length": self.series_length, "dataset_seed": self.dataset_seed,
                "csv_path": self.csv_path, "epochs": self.epochs, "hidden": self.hidden,
                "lags": self.lags, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "seed": seed}

    def echo(self) -> dict[str, Any]:
        d = asdict(self)
        d["throttle"] = {str(k): v for k, v in sorted(self.throttle.items())}
        d["regimes"] = list(self.regimes)
        return d


@dataclass
class ScopeReport:
    workload: str
    scope: str
    seeds: int
    memory_mb: tuple[float, float] | None
    train_seconds: tuple[float, float] | None
    eval_seconds: tuple[float, float] | None
    total_seconds: tuple[float, float]
    bytes_on_wire: float

    def as_row(self) -> dict[str, Any]:
        row: dict[str, Any] = {"workload": self.workload, "scope": self.scope, "seeds": self.seeds}
        for name in ("memory_mb", "train_seconds", "eval_seconds", "total_seconds"):
            pair = getattr(self, name)
            row[f"{name}_mean"] = pair[0] if pair else None
            row[f"{name}_std"] = pair[1] if pair else None
        row["bytes_on_wire"] = self.bytes_on_wire
        return row


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[dict[str, Any]]
    measurements: list[dict[str, Any]]
    seeds: list[dict[str, Any]]
    extra: dict[str, Any] = field(default_factory=dict)
    partial: bool = False


def mean_std(values: list[float]) -> tuple[float, float]:
    """Mean and sample stddev (0 for a single value)."""
    vals = [float(v) for v in values]
    return statistics.fmean(vals), statistics.stdev(vals) if len(vals) > 1 else 0.0


def _run_seed(role: str, config: dict) -> dict:
    proc = subprocess.run([sys.executable, "-m", "aostore.bench.runners", role,
                           "--config", json.dumps(config)],
                          capture_output=True, text=True, env=child_env())
    if proc.returncode != 0:
        raise RuntimeError(f"{role} runner failed (seed {config.get('seed')}): "
                           f"{proc.stderr.strip()[-2000:]}")
    return json.loads(proc.stdout.strip().splitlines()[-1])


def _metric_row(seed_records: list[dict]) -> dict[str, Any]:
    """Deterministic workload outputs averaged over seeds."""
    row: dict[str, Any] = {}
    for key in ("final_train_mse", "first_train_mse"):
        row[key] = statistics.fmean(r[key] for r in seed_records)
    for key in ("val_mse_normalized", *METRIC_KEYS):
        row[key] = statistics.fmean(r["metrics"][key] for r in seed_records)
    row["parameters"] = seed_records[0]["metrics"]["parameters"]
    return row


def _scope_rows(reports: list[ScopeReport], seed_records: list[dict]) -> tuple[list, list]:
    metrics = _metric_row(seed_records) if seed_records else {}
    rows, measurements = [], []
    for rep in reports:
        full = rep.as_row()
        rows.append({"workload": rep.workload, "scope": rep.scope, "seeds": rep.seeds,
                     "bytes_on_wire": rep.bytes_on_wire, **metrics})
        measurements.append(full)
    return rows, measurements


def run_baseline(spec: ExperimentSpec) -> ExperimentResult:
    """One fresh process per seed, no store involved."""
    if spec.mode != "baseline":
        raise ValueError("run_baseline needs mode=baseline")
    records = []
    for seed in sorted(spec.seeds):
        records.append(_run_seed("baseline", spec.workload_config(seed)))
    rep = ScopeReport(
        "lstm", "Baseline", len(records),
        mean_std([r["peak_rss_bytes"] / MB for r in records]),
        mean_std([r["train_seconds"] for r in records]),
        mean_std([r["eval_seconds"] for r in records]),
        mean_std([r["total_seconds"] for r in records]),
        0,
    )
    rows, measurements = _scope_rows([rep], records)
    for r in records:
        r["scope"] = "Baseline"
    return ExperimentResult(spec, rows, measurements, records)


def scope_records(r: dict) -> list[dict]:
    """Split one offloaded seed into its three scoped records.

    Memory and time identities are enforced here per seed: the aggregate's
    memory is the sum of the two processes' peaks, and its total time is the
    client's end-to-end measurement.
    """
    client_mem = r["client_peak_rss_bytes"] / MB
    server_mem = r["server_peak_rss_bytes"] / MB
    wire = r["bytes_sent"] + r["bytes_received"]
    return [
        {"seed": r["seed"], "scope": "dC-Client", "memory_mb": client_mem,
         "train_seconds": r["client_train_overhead_seconds"],
         "eval_seconds": r["client_eval_overhead_seconds"],
         "total_seconds": r["client_overhead_seconds"], "bytes_on_wire": wire},
        {"seed": r["seed"], "scope": "dC-Server", "memory_mb": server_mem,
         "train_seconds": r["server_train_seconds"], "eval_seconds": r["server_eval_seconds"],
         "total_seconds": r["server_seconds"], "bytes_on_wire": wire},
        {"seed": r["seed"], "scope": "dC-Agg", "memory_mb": client_mem + server_mem,
         "train_seconds": None, "eval_seconds": None,
         "total_seconds": r["end_to_end_seconds"], "bytes_on_wire": wire},
    ]


def run_offload(spec: ExperimentSpec) -> ExperimentResult:
    """Client process per seed against a long-lived topology.

    With ``spec.metadata`` set, the seeds run against that deployment and the
    topology fields are not used to launch anything.
    """
    if spec.mode != "offload":
        raise ValueError("run_offload needs mode=offload")
    records: list[dict] = []
    partial = False
    error = None
    with contextlib.ExitStack() as stack:
        metadata = spec.metadata
        if metadata is None:
            topo = stack.enter_context(Topology(spec.backends, spec.labels, spec.throttle))
            metadata = topo.metadata_address
        for seed in sorted(spec.seeds):
            config = spec.workload_config(seed)
            config.update(metadata=metadata, backend=spec.server_backend,
                          latency_ms=spec.latency_ms)
            try:
                records.append(_run_seed("client", config))
            except RuntimeError as exc:
                # a dead backend aborts the run; finished seeds are kept
                partial, error = True, str(exc)
                break
    scoped = [s for r in records for s in scope_records(r)]
    reports = []
    for scope in SCOPES[1:]:
        sel = [s for s in scoped if s["scope"] == scope]
        if not sel:
            continue

        def agg(key: str) -> tuple[float, float] | None:
            vals = [s[key] for s in sel]
            return None if vals[0] is None else mean_std(vals)

        reports.append(ScopeReport("lstm", scope, len(sel), agg("memory_mb"),
                                   agg("train_seconds"), agg("eval_seconds"),
                                   agg("total_seconds"),
                                   statistics.fmean(s["bytes_on_wire"] for s in sel)))
    rows, measurements = _scope_rows(reports, records)
    extra = {"scoped_seeds": scoped}
    if partial:
        extra["aborted"] = error
    return ExperimentResult(spec, rows, measurements, records, extra, partial)


def doubling(limit: int) -> list[int]:
    counts, n = [], 1
    while n <= limit:
        counts.append(n)
        n *= 2
    return counts


def _peer_totals(session, backends: int) -> tuple[int, int]:
    sent = frames = 0
    for b in range(1, backends + 1):
        m = session.metrics(b)
        sent += m["peer_bytes_sent"] + m["peer_bytes_received"]
        frames += m["peer_frames"]
    return sent, frames


def cascade_config(spec: ExperimentSpec, session, backends: int, regime: str,
                   seed: int) -> dict[str, Any]:
    """Build, place and train one weak-scaling configuration."""
    from ..workloads import cascade, csvm

    n_points = backends * spec.points_per_backend
    x, y = csvm.generate_csvm_dataset(n_points, spec.dims, seed)
    per_block = spec.block_size if regime == "small" else spec.points_per_backend
    blocks = csvm.pad_to_power_of_two(csvm.partition_blocks(x, y, per_block))
    # contiguous placement: each backend owns one slice of the tree
    for i, b in enumerate(blocks):
        b.home_backend = 1 + i * backends // len(blocks)
    handles = cascade.store_blocks(session, blocks, spec.C, spec.kernel, spec.gamma)
    homes = [b.home_backend for b in blocks]
    bytes0, frames0 = _peer_totals(session, backends)
    result = cascade.cascade_train(session, handles, homes, spec.dims, spec.max_iterations)
    bytes1, frames1 = _peer_totals(session, backends)
    n_sv = session.invoke(result.model, "n_support")[0]
    return {
        "seed": seed, "regime": regime, "backends": backends, "points": n_points,
        "blocks": len(blocks), "iterations": result.iterations,
        "converged": int(result.converged),
        "layer_models": "-".join(map(str, result.layer_models)),
        "violations": "-".join(map(str, result.violations)),
        "support_vectors": n_sv,
        "peer_bytes": bytes1 - bytes0,
        "predicted_peer_bytes": cascade.predicted_peer_bytes(result),
        "peer_messages": frames1 - frames0,
        "client_messages": 2 * result.client_frames,
        "messages": frames1 - frames0 + 2 * result.client_frames,
        "wall_seconds": result.seconds,
        "seconds_per_point": result.seconds / n_points,
        "layer_seconds": result.layer_seconds,
    }


def run_cascade_scaling(spec: ExperimentSpec) -> ExperimentResult:
    """Weak scaling over 1, 2, 4, ... backends for each block regime.

    Every configuration gets a fresh topology so earlier objects cannot
    influence memory or timing.
    """
    if spec.mode != "cascade":
        raise ValueError("run_cascade_scaling needs mode=cascade")
    from ..client import Session

    records: list[dict] = []
    for regime in spec.regimes:
        for n in doubling(spec.backends):
            throttle = {k: v for k, v in spec.throttle.items() if k <= n}
            with Topology(n, spec.labels[:n] if spec.labels else None, throttle) as topo, \
                    Session(topo.metadata_address, latency=spec.latency_ms / 1000.0) as session:
                for seed in sorted(spec.seeds):
                    records.append(cascade_config(spec, session, n, regime, seed))
    rows, measurements = [], []
    walls: dict[tuple[str, int], float] = {}
    for regime in spec.regimes:
        for n in doubling(spec.backends):
            sel = [r for r in records if r["regime"] == regime and r["backends"] == n]
            row = {"workload": "csvm", "regime": regime, "backends": n, "seeds": len(sel),
                   "points": sel[0]["points"], "blocks": sel[0]["blocks"],
                   "blocks_per_backend": sel[0]["blocks"] // n}
            for key in ("iterations", "converged", "support_vectors", "peer_bytes",
                        "predicted_peer_bytes", "peer_messages", "client_messages", "messages"):
                row[f"{key}_mean"] = statistics.fmean(r[key] for r in sel)
            row["bytes_match"] = int(all(r["peer_bytes"] == r["predicted_peer_bytes"]
                                         for r in sel))
            rows.append(row)
            wall = mean_std([r["wall_seconds"] for r in sel])
            per_point = mean_std([r["seconds_per_point"] for r in sel])
            walls[(regime, n)] = wall[0]
            measurements.append({"workload": "csvm", "regime": regime, "backends": n,
                                 "seeds": len(sel), "wall_seconds_mean": wall[0],
                                 "wall_seconds_std": wall[1],
                                 "seconds_per_point_mean": per_point[0],
                                 "seconds_per_point_std": per_point[1]})
    ratios = {regime: [walls[(regime, 2 * n)] / walls[(regime, n)]
                       for n in doubling(spec.backends // 2)] for regime in spec.regimes}
    return ExperimentResult(spec, rows, measurements, records, {"doubling_ratios": ratios})


def storage_footprint() -> dict[str, Any]:
    """Bytes of source and compiled files per component (informational only)."""
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent
    groups = {
        "core-model": ["values.py", "registry.py", "errors.py"],
        "wire-protocol": ["protocol.py", "server.py"],
        "metadata": ["metadata.py"],
        "backend": ["backend.py", "rss.py"],
        "client-sdk": ["client.py"],
        "workload-lstm": ["workloads/lstm.py", "workloads/trainer.py"],
        "workload-csvm": ["workloads/csvm.py", "workloads/cascade.py"],
        "bench-harness": [str(p.relative_to(root)) for p in sorted((root / "bench").glob("*.py"))],
    }
    out: dict[str, Any] = {}
    for name, files in groups.items():
        src = sum((root / f).stat().st_size for f in files if (root / f).exists())
        compiled = 0
        for f in files:
            p = root / f
            cache = p.parent / "__pycache__"
            compiled += sum(c.stat().st_size for c in cache.glob(p.stem + ".*.pyc"))
        out[name] = {"source_bytes": src, "compiled_bytes": compiled}
    return out


def run(spec: ExperimentSpec) -> ExperimentResult:
    t0 = time.perf_counter()
    driver = {"baseline": run_baseline, "offload": run_offload,
              "cascade": run_cascade_scaling}[spec.mode]
    result = driver(spec)
    result.extra["storage_footprint"] = storage_footprint()
    result.extra["elapsed_seconds"] = time.perf_counter() - t0
    return result
