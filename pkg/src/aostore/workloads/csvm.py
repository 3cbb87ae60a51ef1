"""Binary SVM pieces for the cascade workload.

``smo`` solves the soft-margin dual with second-order working-set selection
(maximal gain pair).  Persistent classes ``csvm.block`` (a data partition) and
``csvm.model`` (a trained SVM reduced to its support vectors) expose the
training, merge and feedback steps as active methods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigConflict, InvalidDataset, ShapeError, SolverStalled
from ..registry import ActiveClass
from ..values import FloatArray, Kind

TOL = 1e-3
C_DEFAULT = 1.0
SV_EPS = 1e-10
TAU = 1e-12
FEEDBACK_CAP = 5


@dataclass(frozen=True)
class KernelSpec:
    name: str = "linear"
    gamma: float = 0.0

    def __post_init__(self):
        if self.name not in ("linear", "rbf"):
            raise ConfigConflict(f"unknown kernel {self.name!r}")

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.name == "linear":
            return a @ b.T
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
        return np.exp(-self.gamma * np.maximum(sq, 0.0))

    @classmethod
    def make(cls, name: str = "linear", gamma: float | None = None, dims: int = 1) -> KernelSpec:
        if name == "rbf":
            return cls("rbf", gamma if gamma else 1.0 / dims)
        return cls("linear", 0.0)


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # (s, d)
    sv_labels: np.ndarray        # (s,) of +-1
    alphas: np.ndarray           # (s,)
    bias: float
    kernel: KernelSpec
    C: float
    iterations: int = 0

    @property
    def coefficients(self) -> np.ndarray:
        return self.alphas * self.sv_labels

    @property
    def n_support(self) -> int:
        return len(self.alphas)

    @property
    def dims(self) -> int:
        return self.support_vectors.shape[1]

    def decision_function(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.n_support == 0:
            return np.full(len(points), self.bias)
        if points.shape[1] != self.dims:
            raise ShapeError(f"model expects {self.dims}-d points, got {points.shape[1]}-d")
        return self.kernel(points, self.support_vectors) @ self.coefficients + self.bias


def classify(model: SvmModel, points: np.ndarray) -> np.ndarray:
    """Sign of the decision function; exact zeros go to +1."""
    return np.where(model.decision_function(points) >= 0.0, 1.0, -1.0)


def smo(points: np.ndarray, labels: np.ndarray, C: float = C_DEFAULT,
        kernel: KernelSpec = KernelSpec(), tol: float = TOL,
        max_iter: int | None = None) -> SvmModel:
    """Train a soft-margin SVM; stops when the maximal KKT violation < ``tol``.

    The cap defaults to ``10 * m`` passes, one pass being ``m`` pair updates.
    """
    x = np.asarray(points, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    m = len(y)
    if x.ndim != 2 or x.shape[0] != m:
        raise ShapeError(f"points {x.shape} and labels {y.shape} disagree")
    if m == 0:
        return SvmModel(np.zeros((0, x.shape[1] if x.ndim == 2 else 0)), np.zeros(0),
                        np.zeros(0), 0.0, kernel, C)
    if not np.all(np.abs(y) == 1.0):
        raise InvalidDataset("labels must be +1 or -1")
    cap = max_iter if max_iter is not None else 10 * m * m
    K = kernel(x, x)
    Q = (y[:, None] * y[None, :]) * K
    diag = np.diag(K).copy()
    alpha = np.zeros(m)
    grad = -np.ones(m)  # Q @ alpha - 1
    it = 0
    while True:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        score = -y * grad
        if not up.any() or not low.any():
            break
        up_scores = np.where(up, score, -np.inf)
        i = int(np.argmax(up_scores))
        g_max = up_scores[i]
        g_min = np.min(np.where(low, score, np.inf))
        if g_max - g_min < tol:
            break
        if it >= cap:
            violating = int(np.sum(up & (score > g_min + tol)) + np.sum(low & (score < g_max - tol)))
            raise SolverStalled(f"SMO did not converge in {cap} iterations; "
                                f"{violating} points still violate KKT (gap {g_max - g_min:.3g})")
        b = g_max - score
        a = diag[i] + diag - 2.0 * y[i] * y * Q[i]
        a = np.where(a > 0, a, TAU)
        cand = low & (score < g_max)
        gain = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(gain))
        _update_pair(i, j, alpha, grad, y, Q, C, diag, K)
        it += 1
    sv = alpha > SV_EPS * max(C, 1.0)
    bias = _bias(alpha, grad, y, C)
    return SvmModel(x[sv].copy(), y[sv].copy(), alpha[sv].copy(), bias, kernel, C, it)


def _update_pair(i, j, alpha, grad, y, Q, C, diag, K) -> None:
    """Analytic two-variable update (LIBSVM form) keeping sum(alpha*y) fixed."""
    ai, aj = alpha[i], alpha[j]
    quad = diag[i] + diag[j] - 2.0 * K[i, j]
    if quad <= 0:
        quad = TAU
    if y[i] != y[j]:
        delta = (-grad[i] - grad[j]) / quad
        diff = ai - aj
        ai += delta
        aj += delta
        if diff > 0:
            if aj < 0:
                aj, ai = 0.0, diff
        elif ai < 0:
            ai, aj = 0.0, -diff
        if diff > 0:
            if ai > C:
                ai, aj = C, C - diff
        elif aj > C:
            aj, ai = C, C + diff
    else:
        delta = (grad[i] - grad[j]) / quad
        total = ai + aj
        ai -= delta
        aj += delta
        if total > C:
            if ai > C:
                ai, aj = C, total - C
        elif aj < 0:
            aj, ai = 0.0, total
        if total > C:
            if aj > C:
                aj, ai = C, total - C
        elif ai < 0:
            ai, aj = 0.0, total
    d_i, d_j = ai - alpha[i], aj - alpha[j]
    alpha[i], alpha[j] = ai, aj
    grad += Q[:, i] * d_i + Q[:, j] * d_j


def _bias(alpha, grad, y, C) -> float:
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(-np.mean(yg[free]))
    ub = np.inf
    lb = -np.inf
    at0, atC = alpha <= 0, alpha >= C
    # bounds on rho = y_i * grad_i from multipliers stuck at 0 or C
    upper_set = (at0 & (y > 0)) | (atC & (y < 0))
    lower_set = (at0 & (y < 0)) | (atC & (y > 0))
    if upper_set.any():
        ub = np.min(yg[upper_set])
    if lower_set.any():
        lb = np.max(yg[lower_set])
    if np.isinf(ub) or np.isinf(lb):
        rho = lb if np.isinf(ub) else ub
    else:
        rho = (ub + lb) / 2.0
    return float(-rho)


def train_svm(points, labels, C: float = C_DEFAULT, kernel: str = "linear",
              gamma: float | None = None, tol: float = TOL) -> SvmModel:
    x = np.asarray(points, dtype=np.float64)
    spec = KernelSpec.make(kernel, gamma, x.shape[1] if x.ndim == 2 else 1)
    return smo(x, labels, C, spec, tol)


def kkt_violations(model: SvmModel, points: np.ndarray, labels: np.ndarray,
                   tol: float = TOL) -> np.ndarray:
    """Mask of points that are not support vectors yet sit inside the margin."""
    margin = labels * model.decision_function(points)
    inside = margin < 1.0 - tol
    if model.n_support and len(points):
        is_sv = _rows_in(points, model.support_vectors)
        inside &= ~is_sv
    return inside


def _rows_in(rows: np.ndarray, table: np.ndarray) -> np.ndarray:
    if len(table) == 0:
        return np.zeros(len(rows), dtype=bool)
    keys = {r.tobytes() for r in np.ascontiguousarray(table)}
    return np.array([r.tobytes() in keys for r in np.ascontiguousarray(rows)], dtype=bool)


def union(x_a, y_a, x_b, y_b) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate two labelled point sets, dropping rows of b already in a."""
    if len(x_b) == 0:
        return x_a, y_a
    keep = ~_rows_in(x_b, x_a)
    return np.concatenate([x_a, x_b[keep]]), np.concatenate([y_a, y_b[keep]])


# -- datasets and partitioning ------------------------------------------------


def generate_csvm_dataset(n: int, dims: int = 2, seed: int = 0,
                          spacing: float = 4.0) -> tuple[np.ndarray, np.ndarray]:
    """Two unit-variance Gaussian classes whose means are ``spacing`` apart.

    The classes differ in size by at most one and rows are shuffled.
    """
    if n < 4:
        raise InvalidDataset("need at least 4 points")
    rng = np.random.default_rng(seed)
    direction = np.ones(dims) / np.sqrt(dims)
    n_pos = n - n // 2
    y = np.concatenate([np.ones(n_pos), -np.ones(n // 2)])
    x = rng.normal(size=(n, dims)) + (y[:, None] * spacing / 2.0) * direction
    order = rng.permutation(n)
    return x[order], y[order]


@dataclass
class DataBlock:
    points: np.ndarray
    labels: np.ndarray
    block_id: int
    home_backend: int | None = None

    @property
    def size(self) -> int:
        return len(self.labels)


def _both_classes(labels: np.ndarray) -> bool:
    return bool((labels > 0).any() and (labels < 0).any())


def partition_blocks(points, labels, points_per_block: int,
                     backends: list[int] | None = None) -> list[DataBlock]:
    """Contiguous blocks of ``points_per_block`` rows (the last may be short).

    A block holding a single class is merged into its successor (or its
    predecessor, for the last block).  Homes are assigned round-robin.
    """
    if points_per_block < 2:
        raise ValueError("points_per_block must be >= 2")
    x = np.asarray(points, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if not _both_classes(y):
        raise InvalidDataset("dataset holds a single class")
    chunks = [(x[s:s + points_per_block], y[s:s + points_per_block])
              for s in range(0, len(y), points_per_block)]
    merged: list[tuple[np.ndarray, np.ndarray]] = []
    carry = None
    for cx, cy in chunks:
        if carry is not None:
            cx, cy = np.concatenate([carry[0], cx]), np.concatenate([carry[1], cy])
            carry = None
        if len(cy) >= 2 and _both_classes(cy):
            merged.append((cx, cy))
        else:
            carry = (cx, cy)
    if carry is not None:
        px, py = merged.pop()
        merged.append((np.concatenate([px, carry[0]]), np.concatenate([py, carry[1]])))
    blocks = [DataBlock(bx, by, i) for i, (bx, by) in enumerate(merged)]
    if backends:
        for b in blocks:
            b.home_backend = backends[b.block_id % len(backends)]
    return blocks


def pad_to_power_of_two(blocks: list[DataBlock]) -> list[DataBlock]:
    """Split the largest block in two (interleaved rows) until the count is 2^k."""
    blocks = list(blocks)
    while len(blocks) & (len(blocks) - 1):
        big = max(range(len(blocks)), key=lambda k: (blocks[k].size, -k))
        b = blocks[big]
        halves = [(b.points[0::2], b.labels[0::2]), (b.points[1::2], b.labels[1::2])]
        if not all(len(hy) >= 2 and _both_classes(hy) for _, hy in halves):
            raise InvalidDataset(f"block {b.block_id} cannot be split into two valid blocks")
        blocks[big:big + 1] = [DataBlock(hx, hy, 0, b.home_backend) for hx, hy in halves]
    for i, b in enumerate(blocks):
        b.block_id = i
    return blocks


# -- persistent classes -------------------------------------------------------

block_class = ActiveClass("csvm.block", {
    "points": Kind.FLOAT_ARRAY,
    "labels": Kind.FLOAT_ARRAY,
    "block_id": Kind.INT,
    "C": Kind.FLOAT,
    "kernel": Kind.TEXT,
    "gamma": Kind.FLOAT,
    "tol": Kind.FLOAT,
})

model_class = ActiveClass("csvm.model", {
    "support_vectors": Kind.FLOAT_ARRAY,
    "sv_labels": Kind.FLOAT_ARRAY,
    "alphas": Kind.FLOAT_ARRAY,
    "bias": Kind.FLOAT,
    "kernel": Kind.TEXT,
    "gamma": Kind.FLOAT,
    "C": Kind.FLOAT,
    "tol": Kind.FLOAT,
    "iterations": Kind.INT,
})


def _settings(obj) -> tuple[float, KernelSpec, float]:
    dims = obj["points"].shape[1]
    C = obj["C"] if obj["C"] is not None else C_DEFAULT
    spec = KernelSpec.make(obj["kernel"] or "linear", obj["gamma"], dims)
    tol = obj["tol"] if obj["tol"] is not None else TOL
    return C, spec, tol


def _persist_model(obj, model: SvmModel, tol: float) -> object:
    return obj.context.create("csvm.model", model_attributes(model, tol))


def model_attributes(model: SvmModel, tol: float = TOL) -> dict:
    return {
        "support_vectors": FloatArray.from_numpy(model.support_vectors),
        "sv_labels": FloatArray.from_numpy(model.sv_labels),
        "alphas": FloatArray.from_numpy(model.alphas),
        "bias": float(model.bias),
        "kernel": model.kernel.name,
        "gamma": float(model.kernel.gamma),
        "C": float(model.C),
        "tol": float(tol),
        "iterations": int(model.iterations),
    }


def model_from_export(v: list) -> SvmModel:
    sv, labels, alphas, bias, kernel, gamma, C = v
    return SvmModel(sv.to_numpy(), labels.to_numpy(), alphas.to_numpy(), bias,
                    KernelSpec(kernel, gamma), C)


def _model_of(obj) -> SvmModel:
    return SvmModel(obj.array("support_vectors"), obj.array("sv_labels"), obj.array("alphas"),
                    obj["bias"], KernelSpec(obj["kernel"], obj["gamma"]), obj["C"],
                    obj["iterations"] or 0)


@block_class.method(params=[Kind.OBJECT_REF], returns=Kind.OBJECT_REF)
def train_block(obj, feedback):
    """Train on this block, plus the support vectors of ``feedback`` if given."""
    C, spec, tol = _settings(obj)
    x, y = obj.array("points"), obj.array("labels")
    if feedback is not None:
        extra = obj.context.call(feedback, "support_set")
        x, y = union(x, y, extra[0].to_numpy(), extra[1].to_numpy())
    return _persist_model(obj, smo(x, y, C, spec, tol), tol)


@block_class.method(params=[Kind.OBJECT_REF], returns=Kind.INT)
def violations(obj, model_ref) -> int:
    """How many of this block's points break the KKT conditions of ``model_ref``."""
    _, _, tol = _settings(obj)
    model = model_from_export(obj.context.call(model_ref, "export"))
    return int(kkt_violations(model, obj.array("points"), obj.array("labels"), tol).sum())


@block_class.method(returns=Kind.INT)
def size(obj) -> int:
    return obj["points"].shape[0]


@model_class.method(returns=Kind.LIST)
def support_set(obj) -> list:
    """Support vectors with their labels and the solver settings needed to merge."""
    return [obj["support_vectors"], obj["sv_labels"], obj["kernel"], obj["gamma"], obj["C"]]


@model_class.method(returns=Kind.LIST)
def export(obj) -> list:
    return [obj["support_vectors"], obj["sv_labels"], obj["alphas"], obj["bias"],
            obj["kernel"], obj["gamma"], obj["C"]]


@model_class.method(params=[Kind.OBJECT_REF], returns=Kind.OBJECT_REF)
def merge(obj, other):
    """Train on the union of this model's and ``other``'s support vectors.

    Runs where this model lives; only ``other``'s support set travels.
    """
    sv_b, y_b, kernel_b, gamma_b, C_b = obj.context.call(other, "support_set")
    if (kernel_b, gamma_b, C_b) != (obj["kernel"], obj["gamma"], obj["C"]):
        raise ConfigConflict(f"cannot merge {obj['kernel']}/C={obj['C']} with "
                             f"{kernel_b}/C={C_b}")
    x, y = union(obj.array("support_vectors"), obj.array("sv_labels"),
                 sv_b.to_numpy(), y_b.to_numpy())
    tol = obj["tol"] if obj["tol"] is not None else TOL
    model = smo(x, y, obj["C"], KernelSpec(obj["kernel"], obj["gamma"]), tol)
    return _persist_model(obj, model, tol)


@model_class.method(returns=Kind.INT)
def n_support(obj) -> int:
    return obj["support_vectors"].shape[0]


@model_class.method(params=[Kind.FLOAT_ARRAY], returns=Kind.FLOAT_ARRAY)
def predict(obj, points):
    return FloatArray.from_numpy(classify(_model_of(obj), points.to_numpy()))


def register(registry) -> None:
    block_class.register(registry)
    model_class.register(registry)
