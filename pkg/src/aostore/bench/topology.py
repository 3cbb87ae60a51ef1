"""Launch a metadata service and N backends as local processes."""

from __future__ import annotations

import os
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field

from ..errors import TransportError

# one BLAS thread everywhere: equal footing between processes, reproducible sums
SINGLE_THREAD_ENV = {
    "OMP_NUM_THREADS": "1",
    "OPENBLAS_NUM_THREADS": "1",
    "MKL_NUM_THREADS": "1",
}


def child_env(extra: dict[str, str] | None = None) -> dict[str, str]:
    env = dict(os.environ)
    env.update(SINGLE_THREAD_ENV)
    env.update(extra or {})
    return env


def _await_ready(proc: subprocess.Popen, what: str, timeout: float = 30.0) -> str:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        line = proc.stdout.readline()
        if not line:
            if proc.poll() is not None:
                proc.stderr.seek(0)
                err = proc.stderr.read()
                raise TransportError(f"{what} exited with {proc.returncode}: {err.strip()}")
            continue
        if line.startswith("READY "):
            return line.split()[1]
    proc.kill()
    raise TransportError(f"{what} did not start within {timeout}s")


def spawn(module: str, args: list[str], what: str) -> tuple[subprocess.Popen, str]:
    errlog = tempfile.TemporaryFile("w+")
    proc = subprocess.Popen([sys.executable, "-m", module, *args], stdout=subprocess.PIPE,
                            stderr=errlog, text=True, env=child_env())
    return proc, _await_ready(proc, what)


@dataclass
class Topology:
    """Context manager owning the service processes of one experiment.

    Backends register in launch order, so backend ``i`` (1-based) gets id ``i``.
    """

    backends: int = 1
    labels: list[str] | None = None
    throttle: dict[int, float] = field(default_factory=dict)
    heartbeat_interval: float = 2.0
    load: list[str] | None = None
    metadata_address: str = ""
    backend_addresses: list[str] = field(default_factory=list)
    _procs: list[subprocess.Popen] = field(default_factory=list)

    def __enter__(self) -> Topology:
        try:
            proc, self.metadata_address = spawn(
                "aostore.metadata", ["--heartbeat-interval", str(self.heartbeat_interval)],
                "metadata service")
            self._procs.append(proc)
            for i in range(1, self.backends + 1):
                self.start_backend(i)
        except BaseException:
            self.close()
            raise
        return self

    def label(self, i: int) -> str:
        return self.labels[i - 1] if self.labels else f"backend-{i}"

    def start_backend(self, i: int) -> str:
        args = ["--metadata", self.metadata_address, "--label", self.label(i),
                "--throttle", str(self.throttle.get(i, 1.0)),
                "--heartbeat-interval", str(self.heartbeat_interval)]
        for mod in self.load or []:
            args += ["--load", mod]
        if i <= len(self.backend_addresses):
            host, _, port = self.backend_addresses[i - 1].rpartition(":")
            args += ["--host", host, "--port", port]
        proc, address = spawn("aostore.backend", args, f"backend {i}")
        if i <= len(self.backend_addresses):
            self._procs[i] = proc
        else:
            self._procs.append(proc)
            self.backend_addresses.append(address)
        return address

    def stop_backend(self, i: int) -> None:
        proc = self._procs[i]
        proc.terminate()
        proc.wait(timeout=10)

    def close(self) -> None:
        for proc in reversed(self._procs):
            if proc.poll() is None:
                proc.terminate()
        for proc in self._procs:
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()
            for stream in (proc.stdout, proc.stderr):
                if stream:
                    stream.close()
        self._procs.clear()

    def __exit__(self, *exc) -> None:
        self.close()
