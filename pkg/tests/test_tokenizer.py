import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dualtab import tokenizer as tok
from dualtab.errors import ContractError, DimensionError
from dualtab.model import ICLModel
from dualtab.numerics import RngStream, float64_mode
from tests.conftest import TINY


def test_zero_projection_gives_zero_offsets():
    pert = tok.sample_perturbations(5, 4, torch.zeros(8, 4), seed=1)
    assert torch.equal(pert.offsets, torch.zeros(5, 8))


def test_offsets_are_W_times_draws():
    W = torch.randn(8, 4, dtype=torch.float64)
    pert = tok.sample_perturbations(3, 4, W, seed=11)
    for j in range(3):
        p = RngStream(11, "attr", j).normal(4)
        assert np.array_equal(pert.raw[j], p)
        np.testing.assert_allclose(pert.offsets[j].numpy(), W.numpy() @ p, rtol=0, atol=1e-12)


def test_same_seed_bit_exact():
    W = torch.randn(8, 4)
    a = tok.sample_perturbations(6, 4, W, 5)
    b = tok.sample_perturbations(6, 4, W, 5)
    assert torch.equal(a.offsets, b.offsets)
    assert not torch.equal(a.offsets, tok.sample_perturbations(6, 4, W, 6).offsets)


def test_draws_are_far_from_parallel():
    raw = tok.draw_attribute_vectors(1000, 16, seed=0)
    unit = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    cos = unit @ unit.T
    np.fill_diagonal(cos, 0.0)
    assert np.abs(cos).max() < 0.9


def test_instance_zero_x_gives_offsets():
    W = torch.randn(8, 4)
    pert = tok.sample_perturbations(3, 4, W, 0)
    row = tok.tokenize_instance_v2(np.zeros(3), pert, torch.randn(8), torch.zeros(8))
    assert torch.equal(row[:3], pert.offsets)


def test_instance_direct_substitution():
    pert = tok.AttributePerturbations(np.zeros((1, 2)), torch.tensor([[0.0, 2.0]]), 0)
    row = tok.tokenize_instance_v2([3.0], pert, torch.tensor([1.0, 0.0]), torch.tensor([9.0, 9.0]))
    assert row.tolist() == [[3.0, 2.0], [9.0, 9.0]]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.integers(0, 5))
def test_instance_affine_in_x(xs, j):
    j = j % len(xs)
    with float64_mode():
        W = torch.randn(4, 3)
        u = torch.randn(4)
        pert = tok.sample_perturbations(len(xs), 3, W, 0)
        x = np.array(xs)
        bumped = x.copy()
        bumped[j] *= 2
        a = tok.tokenize_instance_v2(x, pert, u, torch.zeros(4))
        b = tok.tokenize_instance_v2(bumped, pert, u, torch.zeros(4))
        diff = b - a
        np.testing.assert_allclose(diff[j].numpy(), (x[j] * u).numpy(), atol=1e-9)
        others = [i for i in range(len(xs) + 1) if i != j]
        assert torch.equal(diff[others], torch.zeros(len(others), 4))


def test_class_index_cap():
    with pytest.raises(ContractError):
        tok.class_label_embeddings(torch.tensor([0, 10]), torch.zeros(10, 4))


def test_v1_pad_identity_and_shapes():
    proj = torch.eye(3, dtype=torch.float64)
    labels = torch.zeros(4, 3, dtype=torch.float64)
    S = np.arange(12.0).reshape(4, 3)
    out = tok.tokenize_context_v1(S, labels, np.ones((1, 3)), 3, proj, torch.zeros(3, dtype=torch.float64))
    assert out.shape == (5, 3)
    np.testing.assert_array_equal(out[:4].numpy(), S)


def test_v1_zero_input_zero_label():
    proj = torch.randn(5, 4)
    out = tok.tokenize_context_v1(np.zeros((2, 3)), torch.zeros(2, 4), np.zeros((1, 3)), 5, proj, torch.zeros(4))
    assert torch.equal(out, torch.zeros(3, 4))


def test_v1_queries_get_dummy():
    dummy = torch.tensor([1.0, 2.0])
    out = tok.tokenize_context_v1(np.zeros((1, 1)), torch.zeros(1, 2), np.zeros((2, 1)), 1, torch.zeros(1, 2), dummy)
    assert out[1:].tolist() == [[1.0, 2.0], [1.0, 2.0]]


def test_v1_too_wide():
    with pytest.raises(ContractError):
        tok.tokenize_context_v1(np.zeros((1, 4)), torch.zeros(1, 2), np.zeros((0, 4)), 3, torch.zeros(3, 2), torch.zeros(2))


def test_dummy_label_rules(tiny_model):
    m = tiny_model
    assert torch.equal(tok.dummy_label("classification", m, np.array([0, 0, 1])), m.dummy)
    assert torch.equal(tok.dummy_label("classification", m, np.array([1, 1, 1])), m.dummy)
    assert torch.equal(tok.dummy_label("regression", m), m.reg_bias)
    assert not any(torch.equal(m.dummy, row) for row in m.class_table)


def test_regression_dummy_independent_of_train_set(tiny_model):
    a = tok.build_context(np.zeros((3, 2)), np.array([-1.0, 0.0, 1.0]), np.zeros((1, 2)), tiny_model, 0, "regression")
    b = tok.build_context(np.zeros((2, 2)), np.array([-1.0, 1.0]), np.zeros((1, 2)), tiny_model, 0, "regression")
    assert torch.equal(a.values[-1, -1], b.values[-1, -1])


def test_build_context_shape_and_roles(tiny_model):
    ctx = tok.build_context(np.ones((2, 3)), np.array([0, 1]), np.ones((1, 3)), tiny_model, 4)
    assert ctx.shape == (3, 4, TINY.k)
    assert ctx.is_query.tolist() == [False, False, True]
    assert torch.equal(ctx.values[2, -1], tiny_model.dummy.detach())
    for i, y in enumerate([0, 1]):
        assert torch.equal(ctx.values[i, -1], tiny_model.class_table[y].detach())
        assert not torch.equal(ctx.values[i, -1], tiny_model.dummy.detach())


def test_build_context_reproducible(tiny_model):
    args = (np.random.default_rng(0).normal(size=(4, 3)), np.array([0, 1, 0, 1]), np.ones((2, 3)), tiny_model)
    assert torch.equal(tok.build_context(*args, 9).values, tok.build_context(*args, 9).values)


def test_build_context_column_permutation(tiny_model):
    g = np.random.default_rng(1)
    S, Q = g.normal(size=(4, 3)), g.normal(size=(2, 3))
    y = np.array([0, 1, 2, 1])
    base = tok.build_context(S, y, Q, tiny_model, 5)
    for order in itertools.permutations(range(3)):
        order = list(order)
        pert = base.perturbations.permuted(order)
        moved = tok.build_context(S[:, order], y, Q[:, order], tiny_model, 5, perturbations=pert)
        assert torch.equal(moved.values[:, :3], base.values[:, order])
        assert torch.equal(moved.values[:, 3], base.values[:, 3])


def test_build_context_dimension_mismatch(tiny_model):
    with pytest.raises(DimensionError):
        tok.build_context(np.zeros((2, 3)), np.array([0, 1]), np.zeros((1, 2)), tiny_model, 0)
    with pytest.raises(ContractError):
        tok.build_context(np.zeros((0, 3)), np.array([]), np.zeros((1, 3)), tiny_model, 0)
