from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aostore.errors import ConfigConflict, InvalidDataset, SchemaViolation, ShapeError, SolverStalled
from aostore.values import FloatArray
from aostore.workloads import cascade, csvm


def weights(model: csvm.SvmModel) -> np.ndarray:
    """Primal weight vector of a linear-kernel model."""
    return model.coefficients @ model.support_vectors


def duality_gap(model: csvm.SvmModel, x, y) -> tuple[float, float]:
    """(primal, dual) objectives of a linear-kernel model over the full set."""
    w = weights(model)
    hinge = np.maximum(0.0, 1.0 - y * (x @ w + model.bias))
    primal = 0.5 * w @ w + model.C * hinge.sum()
    a = model.alphas * model.sv_labels
    dual = model.alphas.sum() - 0.5 * a @ (model.support_vectors @ model.support_vectors.T) @ a
    return float(primal), float(dual)


def test_square_hard_margin():
    x = np.array([[1.0, 1.0], [2.0, 2.0], [-1.0, -1.0], [-2.0, -2.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    m = csvm.train_svm(x, y, C=1e6, tol=1e-9)
    np.testing.assert_allclose(weights(m), [0.5, 0.5], atol=1e-6)
    assert m.bias == pytest.approx(0.0, abs=1e-6)
    np.testing.assert_allclose(m.decision_function(x), [1.0, 2.0, -1.0, -2.0], atol=1e-6)
    assert np.array_equal(csvm.classify(m, m.support_vectors), m.sv_labels)


@pytest.mark.parametrize("n, seed", [(64, 0), (200, 1), (400, 2)])
def test_duality_gap_is_small(n, seed):
    x, y = csvm.generate_csvm_dataset(n, 2, seed, spacing=2.5)
    m = csvm.train_svm(x, y)
    primal, dual = duality_gap(m, x, y)
    assert primal >= dual - 1e-9
    assert (primal - dual) / primal < 1e-2
    tight = csvm.train_svm(x, y, tol=1e-9)
    primal, dual = duality_gap(tight, x, y)
    assert (primal - dual) / primal < 1e-6


@given(st.integers(8, 60), st.integers(0, 10_000), st.sampled_from([0.1, 1.0, 10.0]))
@settings(max_examples=30, deadline=None)
def test_dual_feasibility(n, seed, C):
    x, y = csvm.generate_csvm_dataset(n, 2, seed, spacing=2.0)
    m = csvm.train_svm(x, y, C=C)
    assert np.all(m.alphas > 0) and np.all(m.alphas <= C * (1 + 1e-12))
    assert abs(float(m.alphas @ m.sv_labels)) < 1e-9 * max(1.0, C * n)


def test_duplicate_dataset_same_decision_function():
    x, y = csvm.generate_csvm_dataset(120, 2, seed=5, spacing=6.0)
    single = csvm.train_svm(x, y, C=100.0, tol=1e-10)
    double = csvm.train_svm(np.vstack([x, x]), np.concatenate([y, y]), C=100.0, tol=1e-10)
    probe = np.random.default_rng(0).normal(scale=3, size=(200, 2))
    np.testing.assert_allclose(single.decision_function(probe), double.decision_function(probe),
                               atol=1e-6)


def test_large_c_separable_has_zero_training_error():
    x, y = csvm.generate_csvm_dataset(200, 2, seed=7, spacing=8.0)
    m = csvm.train_svm(x, y, C=1e6)
    assert np.all(csvm.classify(m, x) == y)


def test_rbf_kernel_default_gamma():
    spec = csvm.KernelSpec.make("rbf", None, dims=4)
    assert spec.gamma == 0.25
    x, y = csvm.generate_csvm_dataset(100, 4, seed=1)
    m = csvm.train_svm(x, y, kernel="rbf")
    assert np.mean(csvm.classify(m, x) == y) > 0.9


def test_mirror_symmetry():
    rng = np.random.default_rng(3)
    pos = rng.normal(size=(50, 2)) + [2.0, 1.0]
    x = np.vstack([pos, -pos])
    y = np.concatenate([np.ones(50), -np.ones(50)])
    m = csvm.train_svm(x, y, tol=1e-9)
    q = rng.normal(scale=3, size=(300, 2))
    f = m.decision_function(q)
    q = q[np.abs(f) > 1e-6]
    assert np.array_equal(csvm.classify(m, -q), -csvm.classify(m, q))


def test_classify_shape_error():
    x, y = csvm.generate_csvm_dataset(20, 2)
    m = csvm.train_svm(x, y)
    with pytest.raises(ShapeError):
        csvm.classify(m, np.zeros((3, 3)))


def test_iteration_cap_raises():
    x, y = csvm.generate_csvm_dataset(100, 2, seed=0, spacing=1.0)
    with pytest.raises(SolverStalled):
        csvm.smo(x, y, max_iter=1)


def test_invalid_labels():
    with pytest.raises(InvalidDataset):
        csvm.smo(np.zeros((2, 2)), np.array([1.0, 0.0]))


def test_merge_identities():
    x, y = csvm.generate_csvm_dataset(300, 2, seed=9)
    a = csvm.train_svm(x, y, tol=1e-10)
    probe = np.random.default_rng(1).normal(scale=3, size=(100, 2))
    # merge with an empty model
    ux, uy = csvm.union(a.support_vectors, a.sv_labels, np.zeros((0, 2)), np.zeros(0))
    again = csvm.smo(ux, uy, a.C, a.kernel, tol=1e-10)
    np.testing.assert_allclose(again.decision_function(probe), a.decision_function(probe), atol=1e-6)
    # merge(A, A): the union collapses to A's support set
    ux, uy = csvm.union(a.support_vectors, a.sv_labels, a.support_vectors, a.sv_labels)
    assert len(ux) == a.n_support
    twice = csvm.smo(ux, uy, a.C, a.kernel, tol=1e-10)
    np.testing.assert_allclose(twice.decision_function(probe), a.decision_function(probe), atol=1e-6)


def test_dataset_is_mostly_separable():
    x, y = csvm.generate_csvm_dataset(1024, 2, seed=0)
    m = csvm.train_svm(x, y)
    assert np.mean(csvm.classify(m, x) == y) > 0.9
    assert abs(int((y > 0).sum()) - int((y < 0).sum())) <= 1


def test_partition_counts():
    x, y = csvm.generate_csvm_dataset(1024, 2)
    blocks = csvm.partition_blocks(x, y, 128, backends=[1, 2])
    assert [b.size for b in blocks] == [128] * 8
    assert [b.home_backend for b in blocks] == [1, 2] * 4
    x, y = csvm.generate_csvm_dataset(1000, 2)
    sizes = [b.size for b in csvm.partition_blocks(x, y, 128)]
    assert sizes == [128] * 7 + [104]


def test_single_class_block_is_absorbed():
    x = np.arange(12.0).reshape(6, 2)
    y = np.array([1.0, -1.0, 1.0, 1.0, -1.0, 1.0])
    blocks = csvm.partition_blocks(x, y, 2)
    assert [b.size for b in blocks] == [2, 4]
    assert sum(b.size for b in blocks) == 6


def test_pad_to_power_of_two_keeps_every_point():
    x, y = csvm.generate_csvm_dataset(300, 2)
    blocks = csvm.pad_to_power_of_two(csvm.partition_blocks(x, y, 100))
    assert len(blocks) == 4
    assert [b.block_id for b in blocks] == [0, 1, 2, 3]
    stacked = np.vstack([b.points for b in blocks])
    assert sorted(map(tuple, stacked)) == sorted(map(tuple, x))


# -- active classes and the cascade over a live cluster -----------------------

def direct_agreement(model_handle, session, x, y) -> float:
    direct = csvm.train_svm(x, y)
    pred = session.invoke(model_handle, "predict", [FloatArray.from_numpy(x)])[0].to_numpy()
    return float(np.mean(pred == csvm.classify(direct, x)))


@pytest.mark.parametrize("n_blocks", [1, 4, 8])
def test_cascade_matches_direct_smo(cluster, session, n_blocks):
    x, y = csvm.generate_csvm_dataset(512, 2, seed=11)
    blocks = csvm.partition_blocks(x, y, 512 // n_blocks, backends=[1, 2])
    handles = cascade.store_blocks(session, blocks)
    homes = [b.home_backend for b in blocks]
    res = cascade.cascade_train(session, handles, homes, dims=2)
    assert res.converged
    assert res.layer_models == [n_blocks >> k for k in range(n_blocks.bit_length())]
    assert direct_agreement(res.model, session, x, y) >= 0.99


def test_cascade_peer_bytes_match_prediction(cluster, session):
    x, y = csvm.generate_csvm_dataset(512, 2, seed=12)
    blocks = csvm.partition_blocks(x, y, 64, backends=[1, 2])
    handles = cascade.store_blocks(session, blocks)
    before = sum(b.metrics()["peer_bytes_sent"] + b.metrics()["peer_bytes_received"]
                 for b in cluster.backends)
    res = cascade.cascade_train(session, handles, [b.home_backend for b in blocks], dims=2)
    after = sum(b.metrics()["peer_bytes_sent"] + b.metrics()["peer_bytes_received"]
                for b in cluster.backends)
    assert after - before == cascade.predicted_peer_bytes(res) > 0
    # only support sets travel, never a whole block
    raw = sum(b.points.nbytes + b.labels.nbytes for b in blocks)
    assert max(cascade.fetch_bytes(t) for t in res.remote_transfers) < raw / len(blocks)


def test_cascade_rejects_non_power_of_two(session):
    with pytest.raises(ValueError):
        cascade.cascade_train(session, [None] * 3, [1] * 3, dims=2)


def test_merge_config_conflict(session):
    x, y = csvm.generate_csvm_dataset(40, 2)
    a = session.make_persistent("csvm.model", csvm.model_attributes(csvm.train_svm(x, y, C=1.0)),
                                backend=1)
    b = session.make_persistent("csvm.model", csvm.model_attributes(csvm.train_svm(x, y, C=2.0)),
                                backend=2)
    with pytest.raises(ConfigConflict):
        a.merge(b.object_id)


def test_merge_transfer_bounded_by_support_set(cluster, session):
    x, y = csvm.generate_csvm_dataset(200, 2, seed=4)
    ma, mb = csvm.train_svm(x[:100], y[:100]), csvm.train_svm(x[100:], y[100:])
    a = session.make_persistent("csvm.model", csvm.model_attributes(ma), backend=1)
    b = session.make_persistent("csvm.model", csvm.model_attributes(mb), backend=2)
    m0 = cluster.backends[0].metrics()
    a.merge(b.object_id)
    m1 = cluster.backends[0].metrics()
    moved = (m1["peer_bytes_sent"] - m0["peer_bytes_sent"]
             + m1["peer_bytes_received"] - m0["peer_bytes_received"])
    t = cascade.Transfer(1, 2, "support_set", mb.n_support, 2, "linear")
    assert moved == cascade.fetch_bytes(t)
    payload = 8 * mb.n_support * 3  # coordinates plus labels
    assert moved <= payload + 200


def test_block_feedback_must_be_a_reference(session):
    x, y = csvm.generate_csvm_dataset(40, 2)
    [h] = cascade.store_blocks(session, csvm.partition_blocks(x, y, 40, backends=[1]))
    with pytest.raises(SchemaViolation):
        h.train_block("not-a-ref")
    model = session.attach(h.train_block(None))
    assert model.n_support() > 0
