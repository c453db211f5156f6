"""LSTM cell, BPTT, and the bidirectional encoder contracts."""

import numpy as np
import pytest

from textcnn.errors import ConfigError
from textcnn.lstm import BiLstmEncoder, LstmCell, Merge, run_sequence, run_sequence_backward
from textcnn.tensor import Pcg32


def fd_grad(loss_fn, arr, h=1e-5):
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = loss_fn()
        flat[i] = orig - h
        lm = loss_fn()
        flat[i] = orig
        gflat[i] = (lp - lm) / (2 * h)
    return grad


def max_rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float((np.abs(a - b) / denom).max())


class TestLstmCell:
    def test_zero_parameters_give_zero_states(self):
        cell = LstmCell(Pcg32(1), 2, 3)
        for key in cell.params:
            cell.params[key][...] = 0.0
        h = np.zeros((2, 3))
        c = np.zeros((2, 3))
        x = Pcg32(2).uniform_array((2, 2), -1, 1)
        for _ in range(4):
            h, c, _ = cell.step(x, h, c)
            np.testing.assert_array_equal(h, 0.0)  # candidate tanh(0) = 0
            np.testing.assert_array_equal(c, 0.0)

    def test_saturated_forget_gate_preserves_cell(self):
        cell = LstmCell(Pcg32(1), 2, 2)
        for key in cell.params:
            cell.params[key][...] = 0.0
        cell.params["b_f"][...] = 50.0
        c_prev = np.array([[0.7, -0.4]])
        h_prev = np.zeros((1, 2))
        _, c, _ = cell.step(np.zeros((1, 2)), h_prev, c_prev)
        np.testing.assert_allclose(c, c_prev, atol=1e-12)

    def test_hidden_state_strictly_inside_unit_box(self):
        rng = Pcg32(3)
        cell = LstmCell(rng, 3, 4)
        h = np.zeros((5, 4))
        c = np.zeros((5, 4))
        for _ in range(20):
            x = rng.uniform_array((5, 3), -5, 5)
            h, c, _ = cell.step(x, h, c)
            assert (np.abs(h) < 1.0).all()

    def test_input_width_checked(self):
        cell = LstmCell(Pcg32(1), 3, 2)
        with pytest.raises(Exception):
            cell.step(np.zeros((1, 4)), np.zeros((1, 2)), np.zeros((1, 2)))

    @pytest.mark.parametrize("seed,length,hidden", [(1, 3, 2), (2, 5, 3), (3, 4, 1)])
    def test_bptt_matches_finite_differences(self, seed, length, hidden):
        rng = Pcg32(seed)
        cell = LstmCell(rng, 2, hidden)
        x = rng.uniform_array((2, length, 2), -1, 1)
        r = rng.uniform_array((2, length, hidden), -1, 1)

        def loss():
            hs, _ = run_sequence(cell, x)
            return float((hs * r).sum())

        for g in cell.grads.values():
            g.fill(0.0)
        hs, caches = run_sequence(cell, x)
        dx = run_sequence_backward(cell, r.copy(), caches)
        assert max_rel_err(dx, fd_grad(loss, x)) < 1e-5
        for key in cell.params:
            assert max_rel_err(cell.grads[key], fd_grad(loss, cell.params[key])) < 1e-5, key


class TestMergeModes:
    @pytest.mark.parametrize("hidden", [1, 2, 8])
    def test_output_widths(self, hidden):
        rng = Pcg32(4)
        enc_c = BiLstmEncoder(rng, 3, hidden, "concat")
        enc_w = BiLstmEncoder(rng, 3, hidden, "weighted_sum")
        x = rng.uniform_array((2, 4, 3), -1, 1)
        per_c, fin_c, _ = enc_c.forward(x)
        per_w, fin_w, _ = enc_w.forward(x)
        assert per_c.shape == (2, 4, 2 * hidden) and fin_c.shape == (2, 2 * hidden)
        assert per_w.shape == (2, 4, hidden) and fin_w.shape == (2, hidden)

    def test_weighted_identity_projection(self):
        rng = Pcg32(5)
        enc = BiLstmEncoder(rng, 3, 2, "weighted_sum")
        enc.merge.params["omega"][...] = np.eye(2)
        enc.merge.params["vartheta"][...] = 0.0
        enc.merge.params["b"][...] = 0.0
        x = rng.uniform_array((2, 4, 3), -1, 1)
        per, fin, _ = enc.forward(x)
        hs_f, _ = run_sequence(enc.fwd, x)
        np.testing.assert_allclose(per, hs_f, atol=1e-14)
        np.testing.assert_allclose(fin, hs_f[:, -1], atol=1e-14)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            Merge(Pcg32(1), 2, "average")


class TestBiLstmEncoder:
    def test_single_token_final_is_concat_of_both_passes(self):
        rng = Pcg32(6)
        enc = BiLstmEncoder(rng, 2, 3, "concat")
        x = rng.uniform_array((2, 1, 2), -1, 1)
        per, fin, _ = enc.forward(x)
        hf, _, _ = enc.fwd.step(x[:, 0], np.zeros((2, 3)), np.zeros((2, 3)))
        hb, _, _ = enc.bwd.step(x[:, 0], np.zeros((2, 3)), np.zeros((2, 3)))
        np.testing.assert_array_equal(fin, np.concatenate([hf, hb], axis=1))
        np.testing.assert_array_equal(per[:, 0], fin)

    def test_palindrome_with_shared_params_is_mirror_symmetric(self):
        rng = Pcg32(7)
        enc = BiLstmEncoder(rng, 2, 3, "concat")
        # make both directions share parameters
        for key in enc.fwd.params:
            enc.bwd.params[key][...] = enc.fwd.params[key]
        token = rng.uniform_array((1, 1, 2), -1, 1)
        mid = rng.uniform_array((1, 1, 2), -1, 1)
        x = np.concatenate([token, mid, token], axis=1)  # palindrome, L=3
        per, _, _ = enc.forward(x)
        h = 3
        reversed_tokens = per[:, ::-1]
        swapped_halves = np.concatenate([per[..., h:], per[..., :h]], axis=-1)
        np.testing.assert_allclose(reversed_tokens, swapped_halves, atol=1e-14)

    def test_empty_sequence_rejected(self):
        enc = BiLstmEncoder(Pcg32(8), 2, 2, "concat")
        with pytest.raises(ValueError):
            enc.forward(np.zeros((1, 0, 2)))

    @pytest.mark.parametrize("merge", ["concat", "weighted_sum"])
    def test_reversal_duality_exact(self, merge):
        # encoding with (fwd, bwd) equals, token-reversed, encoding the
        # reversed sequence with (bwd, fwd) and swapped merge operands
        rng = Pcg32(9)
        for _ in range(5):
            enc = BiLstmEncoder(rng, 2, 2, merge)
            x = rng.uniform_array((2, 4, 2), -1, 1)
            per, fin, _ = enc.forward(x)

            swapped = BiLstmEncoder(rng, 2, 2, merge)
            for key in enc.fwd.params:
                swapped.fwd.params[key][...] = enc.bwd.params[key]
                swapped.bwd.params[key][...] = enc.fwd.params[key]
            if merge == "weighted_sum":
                swapped.merge.params["omega"][...] = enc.merge.params["vartheta"]
                swapped.merge.params["vartheta"][...] = enc.merge.params["omega"]
                swapped.merge.params["b"][...] = enc.merge.params["b"]
            per2, fin2, _ = swapped.forward(x[:, ::-1])
            if merge == "concat":
                h = enc.hidden
                per2 = np.concatenate([per2[..., h:], per2[..., :h]], axis=-1)
                fin2 = np.concatenate([fin2[..., h:], fin2[..., :h]], axis=-1)
            np.testing.assert_array_equal(per2[:, ::-1], per)
            np.testing.assert_array_equal(fin2, fin)

    def test_backward_matches_finite_differences(self):
        rng = Pcg32(10)
        enc = BiLstmEncoder(rng, 2, 2, "weighted_sum")
        x = rng.uniform_array((2, 3, 2), -1, 1)
        r_tok = rng.uniform_array((2, 3, 2), -1, 1)
        r_fin = rng.uniform_array((2, 2), -1, 1)

        def loss():
            per, fin, _ = enc.forward(x)
            return float((per * r_tok).sum() + (fin * r_fin).sum())

        for cell in (enc.fwd, enc.bwd):
            for g in cell.grads.values():
                g.fill(0.0)
        for g in enc.merge.grads.values():
            g.fill(0.0)
        _, _, cache = enc.forward(x)
        dx = enc.backward(r_tok, r_fin, cache)
        assert max_rel_err(dx, fd_grad(loss, x)) < 1e-5
        for key in enc.merge.params:
            assert max_rel_err(
                enc.merge.grads[key], fd_grad(loss, enc.merge.params[key])
            ) < 1e-5
