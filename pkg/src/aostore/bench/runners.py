"""Single-seed workload runs, each meant to execute in a fresh process.

``python -m aostore.bench.runners baseline|client --config JSON`` prints one
JSON line with the measurements.  The client path imports neither numpy nor
any workload module; it drives the trainer purely through stubs.
"""

from __future__ import annotations

import argparse
import gc
import json
import sys
import time

from ..rss import RssSampler

TRAINER = "workload.trainer"
WORKLOAD_KEYS = ("series_length", "dataset_seed", "csv_path", "hidden", "lags", "epochs",
                 "batch_size", "learning_rate", "seed")


def _attributes(config: dict) -> dict:
    return {k: config[k] for k in WORKLOAD_KEYS if config.get(k) is not None}


def run_baseline_seed(config: dict) -> dict:
    """Prepare, train and evaluate in this process; no store involved."""
    with RssSampler() as sampler:
        t0 = time.perf_counter()
        from ..values import unpairs
        from ..workloads.trainer import trainer

        obj = trainer.local(**_attributes(config))
        t1 = time.perf_counter()
        obj.call("prepare")
        t2 = time.perf_counter()
        final_train_mse = obj.call("train")
        t3 = time.perf_counter()
        metrics = unpairs(obj.call("evaluate"))
        t4 = time.perf_counter()
        history = obj.call("history")
        peak = sampler.peak
    return {
        "seed": config["seed"],
        "peak_rss_bytes": peak,
        "prepare_seconds": t2 - t1,
        "train_seconds": t3 - t2,
        "eval_seconds": t4 - t3,
        "total_seconds": t4 - t1,
        "final_train_mse": final_train_mse,
        "first_train_mse": history[0][1],
        "metrics": metrics,
        "bytes_on_wire": 0,
    }


def float_array_bytes_in_process() -> int:
    """Bytes held by FloatArray values anywhere in this process's heap."""
    from ..values import FloatArray

    gc.collect()
    return sum(o.nbytes for o in gc.get_objects() if isinstance(o, FloatArray))


def run_client_seed(config: dict) -> dict:
    """Offload one seed to ``config['backend']`` through stubs only."""
    from ..client import Session
    from ..values import unpairs

    with RssSampler() as sampler:
        session = Session(config["metadata"], latency=config.get("latency_ms", 0.0) / 1000.0)
        backend = config["backend"]
        session.metrics(backend, reset_peak=True)
        calls = []
        t0 = time.perf_counter()
        Trainer = session.stub(TRAINER)
        handle = Trainer(backend=backend, **_attributes(config))
        calls.append(("create", session.last_timing))
        for method in ("prepare", "train", "evaluate", "history"):
            value, timing = handle.invoke(method)
            calls.append((method, timing))
            if method == "train":
                final_train_mse = value
            elif method == "evaluate":
                metrics = unpairs(value)
            elif method == "history":
                history = value
        t_end = time.perf_counter()
        server_metrics = session.metrics(backend)
        client_peak = sampler.peak
        implementations = session.registry.implementation_count()
        resident = float_array_bytes_in_process()
        session.close()
    timings = dict(calls)
    server_seconds = sum(t.server_seconds for _, t in calls)
    return {
        "seed": config["seed"],
        "client_peak_rss_bytes": client_peak,
        "server_peak_rss_bytes": server_metrics["peak_rss_bytes"],
        "server_prepare_seconds": timings["prepare"].server_seconds,
        "server_train_seconds": timings["train"].server_seconds,
        "server_eval_seconds": timings["evaluate"].server_seconds,
        "server_seconds": server_seconds,
        "client_overhead_seconds": sum(t.overhead_seconds for _, t in calls),
        "client_train_overhead_seconds": timings["train"].overhead_seconds,
        "client_eval_overhead_seconds": timings["evaluate"].overhead_seconds,
        "end_to_end_seconds": t_end - t0,
        "bytes_sent": sum(t.bytes_sent for _, t in calls),
        "bytes_received": sum(t.bytes_received for _, t in calls),
        "final_train_mse": final_train_mse,
        "first_train_mse": history[0][1],
        "metrics": metrics,
        "client_implementations": implementations,
        "client_float_array_bytes": resident,
        "client_numpy_loaded": "numpy" in sys.modules,
        "object_id": str(handle.object_id),
    }


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="aostore-runner")
    ap.add_argument("role", choices=["baseline", "client"])
    ap.add_argument("--config", required=True, help="JSON object")
    args = ap.parse_args(argv)
    config = json.loads(args.config)
    result = run_baseline_seed(config) if args.role == "baseline" else run_client_seed(config)
    print(json.dumps(result), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
