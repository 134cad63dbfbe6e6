"""Attention gate contracts, the brute-force basis-projection oracle, and the
GAP equivalence of the two squeezes at the zero-frequency index."""

import math

import numpy as np
import pytest
import torch

from conftest import finite_difference_check, param_count
from sfdnet.attention import (
    AttentionPair,
    FrequencyChannelGate,
    SqueezeExciteGate,
    lowest_frequency_indices,
)
from sfdnet.freq import dct_basis


def projection_oracle(plane, k, l):
    """Direct cosine summation of <plane, basis_k outer basis_l>."""
    height, width = plane.shape

    def coeff(idx, size):
        return math.sqrt(1.0 / size) if idx == 0 else math.sqrt(2.0 / size)

    total = 0.0
    for m in range(height):
        for n in range(width):
            row = coeff(k, height) * math.cos((2 * m + 1) * k * math.pi / (2 * height))
            col = coeff(l, width) * math.cos((2 * n + 1) * l * math.pi / (2 * width))
            total += plane[m, n] * row * col
    return total


def zero_parameters(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


class TestIndexOrder:
    def test_first_six(self):
        assert lowest_frequency_indices(6) == [(0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0)]

    def test_single(self):
        assert lowest_frequency_indices(1) == [(0, 0)]

    def test_invalid_count(self):
        with pytest.raises(ValueError):
            lowest_frequency_indices(0)


class TestSqueezeExcite:
    def test_weights_strictly_inside_unit_interval(self):
        torch.manual_seed(0)
        gate = SqueezeExciteGate(8, reduction=4)
        weights = gate.gate_weights(torch.randn(16, 8) * 5)
        assert torch.all(weights > 0)
        assert torch.all(weights < 1)

    def test_zero_excitation_gives_exact_half(self):
        gate = SqueezeExciteGate(8, reduction=4)
        zero_parameters(gate)
        x = torch.randn(4, 8)
        assert torch.equal(gate.gate_weights(x), torch.full((4, 8), 0.5))
        assert torch.allclose(gate(x), 0.5 * x)

    def test_map_and_vector_inputs_agree(self):
        torch.manual_seed(1)
        gate = SqueezeExciteGate(4, reduction=2)
        fmap = torch.randn(3, 4, 5, 5)
        pooled = fmap.mean(dim=(2, 3))
        assert torch.allclose(gate.gate_weights(fmap), gate.gate_weights(pooled))
        assert gate(fmap).shape == fmap.shape
        assert gate(pooled).shape == pooled.shape

    def test_validation(self):
        gate = SqueezeExciteGate(4, reduction=2)
        with pytest.raises(ValueError):
            gate(torch.zeros(2, 5))
        with pytest.raises(ValueError):
            gate(torch.zeros(2, 4, 3))
        with pytest.raises(ValueError):
            SqueezeExciteGate(6, reduction=4)
        with pytest.raises(ValueError):
            SqueezeExciteGate(0, reduction=1)


class TestFrequencyGate:
    def test_squeeze_matches_direct_summation(self):
        rng = np.random.default_rng(5)
        plane = rng.normal(size=(4, 4))
        gate = FrequencyChannelGate(2, 4, frequency_indices=[(0, 1)], reduction=2)
        x = torch.from_numpy(np.stack([plane, plane * 2.0])).float().unsqueeze(0)
        squeezed = gate.squeeze(x)
        expected = projection_oracle(plane, 0, 1)
        assert squeezed[0, 0].item() == pytest.approx(expected, abs=1e-6)
        assert squeezed[0, 1].item() == pytest.approx(2.0 * expected, abs=1e-6)

    def test_dc_squeeze_equals_scaled_average_pool(self):
        torch.manual_seed(2)
        for size in (2, 4, 7):
            gate = FrequencyChannelGate(8, size, frequency_indices=[(0, 0)], reduction=4)
            x = torch.randn(3, 8, size, size)
            scaled_gap = math.sqrt(size * size) * x.mean(dim=(2, 3))
            assert torch.allclose(gate.squeeze(x), scaled_gap, atol=1e-6)

    def test_default_index_is_dc(self):
        gate = FrequencyChannelGate(4, 3)
        assert gate.frequency_indices == [(0, 0)]

    def test_group_split_gives_remainder_to_last(self):
        gate = FrequencyChannelGate(5, 4, frequency_indices=[(0, 0), (0, 1)], reduction=1)
        row = torch.from_numpy(dct_basis(4).copy()).float()
        dc = torch.outer(row[0], row[0])
        ac = torch.outer(row[0], row[1])
        assert torch.allclose(gate.basis[0], dc)
        assert torch.allclose(gate.basis[1], dc)
        assert torch.allclose(gate.basis[2], ac)
        assert torch.allclose(gate.basis[4], ac)

    def test_zero_excitation_gives_exact_half(self):
        gate = FrequencyChannelGate(4, 4, reduction=2)
        zero_parameters(gate)
        x = torch.randn(2, 4, 4, 4)
        assert torch.allclose(gate(x), 0.5 * x)

    def test_validation(self):
        with pytest.raises(ValueError):
            FrequencyChannelGate(4, 4, frequency_indices=[(0, 4)])
        with pytest.raises(ValueError):
            FrequencyChannelGate(2, 4, frequency_indices=[(0, 0)] * 3, reduction=1)
        with pytest.raises(ValueError):
            FrequencyChannelGate(4, 4, frequency_indices=[])
        gate = FrequencyChannelGate(4, 4, reduction=2)
        with pytest.raises(ValueError):
            gate.squeeze(torch.zeros(1, 4, 5, 5))
        with pytest.raises(ValueError):
            gate.squeeze(torch.zeros(1, 3, 4, 4))


class TestAttentionPair:
    def test_output_is_mean_of_branches(self):
        torch.manual_seed(3)
        pair = AttentionPair(8, 4, reduction=4)
        fmap = torch.randn(2, 8, 4, 4)
        se_vec, fca_vec = pair.branch_vectors(fmap)
        assert torch.allclose(pair(fmap), 0.5 * (se_vec + fca_vec))
        assert pair(fmap).shape == (2, 8)

    def test_zero_input_gives_zero_output(self):
        torch.manual_seed(4)
        pair = AttentionPair(4, 3, reduction=2)
        out = pair(torch.zeros(2, 4, 3, 3))
        assert torch.equal(out, torch.zeros(2, 4))

    def test_branches_agree_on_1x1_maps_with_shared_excitation(self):
        torch.manual_seed(5)
        pair = AttentionPair(8, 1, reduction=4)
        pair.fca_gate.excite.load_state_dict(pair.se_gate.excite.state_dict())
        fmap = torch.randn(3, 8, 1, 1)
        se_vec, fca_vec = pair.branch_vectors(fmap)
        assert torch.allclose(se_vec, fca_vec, atol=1e-6)

    def test_zero_excitation_halves_pooled_features(self):
        pair = AttentionPair(4, 4, reduction=2)
        zero_parameters(pair)
        fmap = torch.randn(2, 4, 4, 4)
        assert torch.allclose(pair(fmap), 0.5 * fmap.mean(dim=(2, 3)), atol=1e-6)

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(6)
        pair = AttentionPair(4, 4, reduction=4).double()
        assert param_count(pair) <= 1000
        fmap = torch.rand(3, 4, 4, 4, dtype=torch.float64)

        def loss_fn():
            return (pair(fmap) ** 2).sum()

        finite_difference_check(loss_fn, pair.parameters())
