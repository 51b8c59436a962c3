import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from cleants.embedding import (
    MomentumBank,
    SpatialEncoder,
    WindowEncoder,
    export_embeddings,
    normalized_adjacency,
    select_auxiliary,
    similarity,
    similarity_matrix,
)


# -- momentum updates ---------------------------------------------------------

def bank_with_state(state, gamma):
    state = torch.as_tensor(state, dtype=torch.float64)
    bank = MomentumBank(state.shape[0], state.shape[1], gamma=gamma).double()
    with torch.no_grad():
        bank.state.copy_(state)
    return bank


def test_momentum_blend_arithmetic():
    bank = bank_with_state([[1.0]], gamma=0.9)
    bank.update(torch.tensor([0]), torch.tensor([[0.0]], dtype=torch.float64))
    assert bank.state[0, 0].item() == pytest.approx(0.9)


def test_momentum_converges_geometrically_to_constant_output():
    bank = bank_with_state([[5.0, -3.0]], gamma=0.8)
    v = torch.tensor([[1.0, 1.0]], dtype=torch.float64)
    gaps = []
    for _ in range(20):
        bank.update(torch.tensor([0]), v)
        gaps.append(float(torch.linalg.norm(bank.state[0] - v[0])))
    ratios = np.array(gaps[1:]) / np.array(gaps[:-1])
    assert np.allclose(ratios, 0.8, atol=1e-9)


def test_gamma_one_freezes_state():
    bank = bank_with_state([[2.0, 4.0]], gamma=1.0)
    bank.update(torch.tensor([0]), torch.tensor([[100.0, -100.0]], dtype=torch.float64))
    assert torch.equal(bank.state, torch.tensor([[2.0, 4.0]], dtype=torch.float64))


def test_series_absent_from_batch_unchanged():
    bank = bank_with_state([[1.0], [2.0], [3.0]], gamma=0.5)
    bank.update(torch.tensor([1]), torch.tensor([[0.0]], dtype=torch.float64))
    assert bank.state[0, 0].item() == 1.0
    assert bank.state[1, 0].item() == pytest.approx(1.0)
    assert bank.state[2, 0].item() == 3.0


def test_update_from_windows_uses_per_series_mean():
    torch.manual_seed(0)
    encoder = WindowEncoder(4, 2).double()
    bank = bank_with_state([[0.0, 0.0], [0.0, 0.0]], gamma=0.5)
    windows = torch.randn(3, 4, dtype=torch.float64)
    series = torch.tensor([0, 0, 1])
    with torch.no_grad():
        enc = encoder(windows)
    expected0 = 0.5 * enc[:2].mean(dim=0)
    expected1 = 0.5 * enc[2]
    bank.update_from_windows(encoder, series, windows)
    assert torch.allclose(bank.state[0], expected0)
    assert torch.allclose(bank.state[1], expected1)


def test_non_finite_encoder_output_rejected():
    bank = bank_with_state([[0.0]], gamma=0.5)
    with pytest.raises(FloatingPointError):
        bank.update(torch.tensor([0]), torch.tensor([[float("nan")]], dtype=torch.float64))


# -- similarity and selection ---------------------------------------------------

def test_similarity_identical_vectors():
    v = np.array([0.3, -1.2, 4.0])
    assert similarity(v, v) == pytest.approx(1.0)


def test_similarity_orthogonal_vectors():
    assert similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.0)


def test_similarity_45_degrees():
    assert similarity(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(1 / np.sqrt(2), abs=1e-5)


def test_similarity_zero_norm_rejected():
    with pytest.raises(ValueError, match="zero-norm"):
        similarity(np.zeros(3), np.ones(3))


finite_vec = st.lists(st.floats(-50, 50), min_size=2, max_size=6)


@settings(max_examples=60, deadline=None)
@given(finite_vec, finite_vec, st.floats(0.01, 100), st.floats(0.01, 100))
def test_similarity_symmetric_bounded_scale_invariant(u, v, a, b):
    n = min(len(u), len(v))
    u = np.asarray(u[:n])
    v = np.asarray(v[:n])
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    r = similarity(u, v)
    assert -1.0 - 1e-12 <= r <= 1.0 + 1e-12
    assert r == pytest.approx(similarity(v, u))
    assert r == pytest.approx(similarity(a * u, b * v), abs=1e-9)


def test_select_single_is_target_only():
    emb = np.random.default_rng(0).normal(size=(5, 3))
    assert select_auxiliary(2, emb, 1).tolist() == [2]


def test_select_all_is_permutation_with_target_first():
    emb = np.random.default_rng(1).normal(size=(6, 4))
    sel = select_auxiliary(3, emb, 6)
    assert sel[0] == 3
    assert sorted(sel.tolist()) == list(range(6))


def test_select_matches_brute_force_ranking():
    # oracle: rank cosine similarities computed from the definition, descending,
    # breaking ties by ascending index
    emb = np.array(
        [
            [1.0, 0.0],
            [1.0, 0.2],
            [-1.0, 0.0],
            [0.8, 0.1],
        ]
    )
    target = 0
    sims = {}
    for j in range(4):
        if j == target:
            continue
        num = float(np.dot(emb[target], emb[j]))
        den = float(np.linalg.norm(emb[target]) * np.linalg.norm(emb[j]))
        sims[j] = num / den
    expected = [target] + sorted(sims, key=lambda j: (-sims[j], j))
    assert select_auxiliary(target, emb, 4).tolist() == expected
    assert select_auxiliary(target, emb, 2).tolist() == expected[:2]


def test_select_tie_break_is_ascending_index():
    emb = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [0.0, 1.0]])
    # series 1 and 2 both have similarity exactly 1 with the target
    sel = select_auxiliary(0, emb, 3)
    assert sel.tolist() == [0, 1, 2]


def test_selection_no_duplicates_target_first():
    rng = np.random.default_rng(3)
    emb = rng.normal(size=(9, 5))
    for target in range(9):
        sel = select_auxiliary(target, emb, 4)
        assert sel[0] == target
        assert len(set(sel.tolist())) == len(sel)


def test_select_m_too_large_rejected():
    emb = np.random.default_rng(0).normal(size=(3, 2))
    with pytest.raises(ValueError):
        select_auxiliary(0, emb, 4)


def test_similarity_matrix_agrees_with_pairwise():
    emb = np.random.default_rng(4).normal(size=(5, 3))
    mat = similarity_matrix(emb)
    for i in range(5):
        for j in range(5):
            assert mat[i, j] == pytest.approx(similarity(emb[i], emb[j]))


# -- spatial encoder ------------------------------------------------------------

def test_normalized_adjacency_closed_form_complete_graph():
    # complete graph on 3 nodes: A + I is all-ones, degrees 3, A_hat = ones / 3
    a = np.ones((3, 3)) - np.eye(3)
    assert np.allclose(normalized_adjacency(a), np.ones((3, 3)) / 3.0)


def test_empty_graph_outputs_depend_only_on_own_features():
    torch.manual_seed(0)
    enc = SpatialEncoder(np.zeros((4, 4)), d_spat=3).double()
    base = enc().detach().clone()
    with torch.no_grad():
        enc.node_features[2] += 1.0
    bumped = enc().detach()
    changed = (bumped - base).abs().sum(dim=1)
    assert changed[2] > 0
    assert torch.allclose(changed[[0, 1, 3]], torch.zeros(3, dtype=torch.float64))


def test_symmetric_nodes_identical_features_get_identical_embeddings():
    # path graph 0-1-2; nodes 0 and 2 are mirror images
    a = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    torch.manual_seed(1)
    enc = SpatialEncoder(a, d_spat=3).double()
    with torch.no_grad():
        enc.node_features[2].copy_(enc.node_features[0])
    out = enc().detach()
    assert torch.allclose(out[0], out[2])


def test_complete_graph_identical_features_all_rows_equal_hand_computed():
    # oracle: for N=3 complete graph, A_hat = ones/3 exactly; with identical rows x,
    # each layer preserves row equality, so E_spat = A_hat relu(A_hat X W1) W2 has equal rows
    a = np.ones((3, 3)) - np.eye(3)
    enc = SpatialEncoder(a, d_spat=2).double()
    x = np.array([1.5, -0.5])
    w1 = np.array([[0.2, -1.0], [0.7, 0.3]])  # applied as X @ W1.T
    w2 = np.array([[1.0, 0.5], [-0.25, 2.0]])
    with torch.no_grad():
        enc.node_features.copy_(torch.tensor(np.tile(x, (3, 1))))
        enc.w1.weight.copy_(torch.tensor(w1))
        enc.w2.weight.copy_(torch.tensor(w2))
    a_hat = np.ones((3, 3)) / 3.0
    expected = a_hat @ np.maximum(a_hat @ np.tile(x, (3, 1)) @ w1.T, 0.0) @ w2.T
    out = enc().detach().numpy()
    assert np.allclose(out, expected, atol=1e-12)
    assert np.allclose(out[0], out[1]) and np.allclose(out[1], out[2])


def test_adjacency_validation():
    with pytest.raises(ValueError, match="symmetric"):
        normalized_adjacency(np.array([[0, 1], [0, 0]], dtype=float))
    with pytest.raises(ValueError, match="zero diagonal"):
        normalized_adjacency(np.eye(2))


def test_export_embeddings_format(tmp_path):
    import pandas as pd

    emb = np.arange(6, dtype=float).reshape(2, 3)
    path = tmp_path / "emb.csv"
    export_embeddings(emb, ["a", "b"], path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["series_id", "e_0", "e_1", "e_2"]
    assert frame.loc[1, "e_2"] == 5.0
