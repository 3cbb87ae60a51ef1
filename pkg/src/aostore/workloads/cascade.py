"""Client-side driver for cascade SVM training over persistent blocks.

Leaves train where their block lives; each merge runs on the backend of the
left model and pulls only the right model's support vectors.  After the
tree is reduced to one model, every block checks its own points against it
(the model travels, the data does not); violations trigger another pass
with the final support vectors fed back into every leaf.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from ..client import Session, StubHandle
from ..values import FloatArray
from . import csvm


@dataclass(frozen=True)
class Transfer:
    """One object-to-object fetch issued from inside an active method."""

    caller_backend: int
    source_backend: int
    method: str
    n_support: int
    dims: int
    kernel: str

    @property
    def remote(self) -> bool:
        return self.caller_backend != self.source_backend


@dataclass
class CascadeResult:
    model: StubHandle
    converged: bool
    iterations: int
    layer_models: list[int]
    layer_seconds: list[list[float]]
    violations: list[int]
    transfers: list[Transfer] = field(default_factory=list)
    seconds: float = 0.0
    client_frames: int = 0  # requests issued by the driver during training

    @property
    def remote_transfers(self) -> list[Transfer]:
        return [t for t in self.transfers if t.remote]


def store_blocks(session: Session, blocks: list[csvm.DataBlock], C: float = csvm.C_DEFAULT,
                 kernel: str = "linear", gamma: float | None = None,
                 tol: float = csvm.TOL) -> list[StubHandle]:
    """Persist every block on its home backend."""
    Block = session.stub("csvm.block")
    handles = []
    for b in blocks:
        dims = b.points.shape[1]
        spec = csvm.KernelSpec.make(kernel, gamma, dims)
        handles.append(Block(
            backend=b.home_backend,
            points=FloatArray.from_numpy(b.points),
            labels=FloatArray.from_numpy(b.labels),
            block_id=b.block_id, C=float(C), kernel=spec.name, gamma=spec.gamma, tol=float(tol),
        ))
    return handles


def cascade_train(session: Session, blocks: list[StubHandle], homes: list[int],
                  dims: int, max_iterations: int = csvm.FEEDBACK_CAP,
                  parallel: bool = True) -> CascadeResult:
    """Binary-tree cascade with feedback; ``len(blocks)`` must be a power of two."""
    n = len(blocks)
    if n == 0 or n & (n - 1):
        raise ValueError(f"cascade needs a power-of-two block count, got {n}")
    pool = ThreadPoolExecutor(max_workers=n if parallel else 1)
    Model = session.stub("csvm.model")
    kernel = session.get_attribute(blocks[0], "kernel")
    location: dict = {}
    fetches: list[tuple[int, StubHandle, str]] = []
    layer_seconds: list[list[float]] = []
    violations: list[int] = []
    layer_models: list[int] = []
    final: StubHandle | None = None
    converged = False
    frames0 = session.frames_sent
    t_start = time.perf_counter()

    def note(caller: int, source: StubHandle, method: str) -> None:
        fetches.append((caller, source, method))

    try:
        iteration = 0
        while iteration < max_iterations:
            iteration += 1
            times = []
            t0 = time.perf_counter()
            refs = list(pool.map(
                lambda b: session.invoke(b, "train_block",
                                         [final.object_id if final else None])[0], blocks))
            models = [Model.attach(r) for r in refs]
            for h, home in zip(models, homes):
                location[h.object_id] = home
                if final is not None:
                    note(home, final, "support_set")
            times.append(time.perf_counter() - t0)
            counts = [len(models)]
            while len(models) > 1:
                t0 = time.perf_counter()
                pairs = [(models[k], models[k + 1]) for k in range(0, len(models), 2)]
                for a, b in pairs:
                    note(location[a.object_id], b, "support_set")
                merged = list(pool.map(
                    lambda ab: session.invoke(ab[0], "merge", [ab[1].object_id])[0], pairs))
                models = []
                for (a, _), ref in zip(pairs, merged):
                    h = Model.attach(ref)
                    location[h.object_id] = location[a.object_id]
                    models.append(h)
                counts.append(len(models))
                times.append(time.perf_counter() - t0)
            final = models[0]
            if not layer_models:
                layer_models = counts
            for home in homes:
                note(home, final, "export")
            bad = sum(pool.map(lambda b: session.invoke(b, "violations", [final.object_id])[0],
                               blocks))
            violations.append(bad)
            layer_seconds.append(times)
            if bad == 0:
                converged = True
                break
    finally:
        pool.shutdown()
    seconds = time.perf_counter() - t_start
    frames = session.frames_sent - frames0
    # accounting queries happen after the clock stops
    sizes: dict = {}
    for _, h, _ in fetches:
        if h.object_id not in sizes:
            sizes[h.object_id] = session.invoke(h, "n_support")[0]
    transfers = [Transfer(caller, location[h.object_id], method, sizes[h.object_id], dims, kernel)
                 for caller, h, method in fetches]
    return CascadeResult(final, converged, iteration, layer_models, layer_seconds, violations,
                         transfers, seconds, frames)


def fetch_bytes(t: Transfer) -> int:
    """Wire bytes of one fetch: request and response frames, from the layouts.

    Deliberately written from the framing rules rather than by encoding
    messages, so it can check the byte counters independently.
    """
    header = 17
    ref, empty_list, float_v = 17, 5, 9
    text = lambda s: 5 + len(s.encode())  # noqa: E731
    array = lambda rank, count: 2 + 4 * rank + 8 * count  # noqa: E731
    request = header + ref + text(t.method) + empty_list
    s, d = t.n_support, t.dims
    if t.method == "support_set":
        result = 5 + array(2, s * d) + array(1, s) + text(t.kernel) + float_v + float_v
    elif t.method == "export":
        result = (5 + array(2, s * d) + array(1, s) + array(1, s) + float_v
                  + text(t.kernel) + float_v + float_v)
    else:
        raise ValueError(t.method)
    response = header + result + float_v
    return request + response


def predicted_peer_bytes(result: CascadeResult) -> int:
    return sum(fetch_bytes(t) for t in result.remote_transfers)
