"""Architecture assembly, shape conformance, and checkpoint round-trips."""

import numpy as np
import pytest

from textcnn import models as M
from textcnn.errors import ConfigError, CorruptError, FormatError
from textcnn.tensor import Pcg32
from textcnn.train import grad_check_model


def make_ids(rng, n, length, vocab):
    ids = np.array(
        [[rng.bounded(vocab) for _ in range(length)] for _ in range(n)],
        dtype=np.int64,
    )
    return ids


class TestConfigValidation:
    def test_filter_size_exceeds_max_len(self):
        cfg = M.ModelConfig(arch="kim_cnn", filter_sizes=(10,), max_len=5)
        with pytest.raises(ConfigError, match="filter size 10 exceeds max_len 5"):
            cfg.resolved()

    def test_unknown_arch(self):
        with pytest.raises(ConfigError):
            M.ModelConfig(arch="transformer").resolved()

    def test_deep_cnn_needs_room_for_second_conv(self):
        cfg = M.ModelConfig(arch="deep_cnn", filter_sizes=(4,), max_len=6)
        with pytest.raises(ConfigError, match="max_len >= 7"):
            cfg.resolved()

    def test_cnn_bilstm_rejects_even_kernels(self):
        cfg = M.ModelConfig(arch="cnn_bilstm", filter_sizes=(2,))
        with pytest.raises(ConfigError, match="odd"):
            cfg.resolved()

    def test_bilstm_rejects_multi_channel(self):
        cfg = M.ModelConfig(arch="bilstm", channels="multi")
        with pytest.raises(ConfigError):
            cfg.resolved()

    def test_per_arch_filter_size_defaults(self):
        assert M.ModelConfig(arch="kim_cnn").resolved().filter_sizes == (2, 3, 4)
        assert M.ModelConfig(arch="deep_cnn", max_len=12).resolved().filter_sizes == (1, 2, 3, 4, 5)

    def test_unknown_config_key(self):
        with pytest.raises(ConfigError, match="unknown model config keys"):
            M.ModelConfig.from_dict({"archs": "kim_cnn"})


class TestShapeConformance:
    def test_worked_example_dimensions(self):
        # L=7, E=5, sizes {2,3,4}, two filters per size
        cfg = M.ModelConfig(
            arch="kim_cnn", filter_sizes=(2, 3, 4), num_filters=2, emb_dim=5,
            max_len=7,
        )
        model = M.build(cfg, vocab_size=30, rng=Pcg32(1, 1))
        ids = make_ids(Pcg32(2), 1, 7, 30)
        model.forward(ids, mode="eval")
        trace = model.last_trace
        assert trace["conv_h2"] == (1, 2, 6)
        assert trace["conv_h3"] == (1, 2, 5)
        assert trace["conv_h4"] == (1, 2, 4)
        assert trace["pool_h2"] == (1, 2)
        assert trace["pool_h3"] == (1, 2)
        assert trace["pool_h4"] == (1, 2)
        assert trace["concat"] == (1, 6)

    def test_concat_width_rule_over_grid(self):
        rng = Pcg32(3)
        for sizes in [(2,), (2, 3), (2, 3, 4), (3, 5)]:
            for num_filters in (1, 2, 4):
                cfg = M.ModelConfig(
                    arch="kim_cnn", filter_sizes=sizes, num_filters=num_filters,
                    emb_dim=4, max_len=8,
                )
                model = M.build(cfg, 20, Pcg32(4, 1))
                ids = make_ids(rng, 2, 8, 20)
                model.forward(ids, mode="eval")
                trace = model.last_trace
                for h in sizes:
                    assert trace[f"conv_h{h}"] == (2, num_filters, 8 - h + 1)
                assert trace["concat"] == (2, len(sizes) * num_filters)

    def test_deep_cnn_layer_inventory(self):
        cfg = M.ModelConfig(arch="deep_cnn", max_len=12, num_filters=2, emb_dim=4)
        model = M.build(cfg, 20, Pcg32(5, 1))
        names = [name for name, _ in model.state_items()]
        conv_ws = [n for n in names if n.endswith(".w") and "conv" in n]
        bn_gammas = [n for n in names if n.endswith(".gamma")]
        dense_ws = [n for n in names if n in ("fc1.w", "fc2.w")]
        assert len(conv_ws) == 10  # two convolutions per branch, five branches
        assert len(bn_gammas) == 10
        assert len(dense_ws) == 2

    def test_deep_cnn_second_conv_lengths(self):
        cfg = M.ModelConfig(
            arch="deep_cnn", filter_sizes=(2, 3), num_filters=2, emb_dim=3,
            max_len=10, fc_hidden=4,
        )
        model = M.build(cfg, 15, Pcg32(6, 1))
        ids = make_ids(Pcg32(7), 2, 10, 15)
        model.forward(ids, mode="eval")
        assert model.last_trace["conv1_h2"] == (2, 2, 9)
        assert model.last_trace["conv2_h2"] == (2, 2, 8)
        assert model.last_trace["conv1_h3"] == (2, 2, 8)
        assert model.last_trace["conv2_h3"] == (2, 2, 6)


class TestForwardContracts:
    def test_degenerate_vocab_still_builds(self):
        cfg = M.ModelConfig(arch="kim_cnn", filter_sizes=(2,), num_filters=2,
                            emb_dim=3, max_len=4)
        model = M.build(cfg, 2, Pcg32(8, 1))
        logits = model.forward(np.zeros((2, 4), dtype=np.int64), mode="eval")
        assert np.isfinite(logits).all()

    def test_zero_weights_logit_is_bias(self):
        cfg = M.ModelConfig(arch="kim_cnn", filter_sizes=(2,), num_filters=2,
                            emb_dim=3, max_len=5)
        model = M.build(cfg, 10, Pcg32(9, 1))
        for _, p, _ in model.trainable_items():
            p[...] = 0.0
        model.fc.params["b"][...] = 0.25
        rng = Pcg32(10)
        logits = model.forward(make_ids(rng, 3, 5, 10), mode="eval")
        np.testing.assert_array_equal(logits, [0.25, 0.25, 0.25])

    @pytest.mark.parametrize("arch", M.ARCHS)
    def test_batch_permutation_equivariance(self, arch):
        sizes = {"deep_cnn": (2, 3), "bilstm": None, "cnn_bilstm": (3,)}.get(arch, (2, 3))
        cfg = M.ModelConfig(arch=arch, filter_sizes=sizes, emb_dim=4, max_len=6,
                            num_filters=2, hidden=3, fc_hidden=4)
        model = M.build(cfg, 12, Pcg32(11, 1))
        ids = make_ids(Pcg32(12), 5, 6, 12)
        logits = model.forward(ids, mode="eval")
        perm = [3, 0, 4, 1, 2]
        permuted = model.forward(ids[perm], mode="eval")
        np.testing.assert_array_equal(permuted, logits[perm])

    @pytest.mark.parametrize("arch", M.ARCHS)
    def test_eval_forward_is_bitwise_deterministic(self, arch):
        sizes = {"deep_cnn": (2, 3), "bilstm": None, "cnn_bilstm": (3,)}.get(arch, (2, 3))
        cfg = M.ModelConfig(arch=arch, filter_sizes=sizes, emb_dim=4, max_len=6,
                            num_filters=2, hidden=3, fc_hidden=4)
        model = M.build(cfg, 12, Pcg32(13, 1))
        ids = make_ids(Pcg32(14), 4, 6, 12)
        a = model.forward(ids, mode="eval")
        b = model.forward(ids, mode="eval")
        np.testing.assert_array_equal(a, b)

    def test_out_of_range_id_names_position(self):
        cfg = M.ModelConfig(arch="kim_cnn", filter_sizes=(2,), emb_dim=3, max_len=4)
        model = M.build(cfg, 5, Pcg32(15, 1))
        ids = np.zeros((2, 4), dtype=np.int64)
        ids[1, 2] = 9
        with pytest.raises(ValueError, match="batch 1, position 2"):
            model.forward(ids, mode="eval")

    def test_backward_requires_forward(self):
        cfg = M.ModelConfig(arch="kim_cnn", filter_sizes=(2,), emb_dim=3, max_len=4)
        model = M.build(cfg, 5, Pcg32(16, 1))
        with pytest.raises(RuntimeError):
            model.backward(np.zeros(2))


class TestPoolingVariants:
    @pytest.mark.parametrize("pool,width", [("max1", 4), ("kmax", 8), ("avg", 4)])
    def test_concat_width_per_pool_kind(self, pool, width):
        cfg = M.ModelConfig(arch="kim_cnn", filter_sizes=(2, 3), num_filters=2,
                            emb_dim=3, max_len=6, pool=pool, kmax_k=2)
        model = M.build(cfg, 10, Pcg32(30, 1))
        ids = make_ids(Pcg32(31), 3, 6, 10)
        logits = model.forward(ids, mode="eval")
        assert logits.shape == (3,)
        assert model.last_trace["concat"] == (3, width)

    @pytest.mark.parametrize("pool", ["kmax", "avg"])
    def test_gradients_flow_through_pool_variants(self, pool):
        cfg = M.ModelConfig(arch="kim_cnn", filter_sizes=(2,), num_filters=2,
                            emb_dim=3, max_len=6, pool=pool, kmax_k=2)
        model = M.build(cfg, 8, Pcg32(32, 1))
        # keep pre-activations off the ReLU kink: an all-pad window's conv
        # output equals the bias exactly, and avg pooling sums every
        # position's kink into the finite differences
        model.convs[2].params["b"][...] = 0.05
        rng = Pcg32(33)
        ids = np.array([[2 + rng.bounded(6) for _ in range(6)] for _ in range(4)],
                       dtype=np.int64)
        labels = (rng.uniform_array(4) < 0.5).astype(np.float64)
        report = grad_check_model(model, ids, labels, tol=1e-4)
        assert report.passed, [(r.name, r.max_rel_err) for r in report.rows]


class TestMultiChannel:
    def test_channel_sum_linearity(self):
        # frozen table == trainable table with halved branch weights must
        # reproduce the single-channel logits
        base_cfg = M.ModelConfig(arch="kim_cnn", filter_sizes=(2, 3), num_filters=2,
                                 emb_dim=4, max_len=6, channels="single")
        single = M.build(base_cfg, 15, Pcg32(17, 1))
        multi = M.build(
            M.ModelConfig(arch="kim_cnn", filter_sizes=(2, 3), num_filters=2,
                          emb_dim=4, max_len=6, channels="multi"),
            15, Pcg32(18, 1),
        )
        np.copyto(multi.emb.tables[0], single.emb.tables[0])
        np.copyto(multi.emb.tables[1], single.emb.tables[0])
        for h in (2, 3):
            for c in (0, 1):
                multi.convs[h].params["w"][:, c] = single.convs[h].params["w"][:, 0] / 2.0
            multi.convs[h].params["b"][...] = single.convs[h].params["b"]
        multi.fc.params["w"][...] = single.fc.params["w"]
        multi.fc.params["b"][...] = single.fc.params["b"]
        ids = make_ids(Pcg32(19), 4, 6, 15)
        np.testing.assert_allclose(
            multi.forward(ids, mode="eval"),
            single.forward(ids, mode="eval"),
            atol=1e-12,
        )

    def test_multi_channel_gradients_match_finite_differences(self):
        cfg = M.ModelConfig(arch="kim_cnn", filter_sizes=(2,), num_filters=2,
                            emb_dim=3, max_len=5, channels="multi")
        model = M.build(cfg, 9, Pcg32(34, 1))
        rng = Pcg32(35)
        ids = make_ids(rng, 4, 5, 9)
        labels = (rng.uniform_array(4) < 0.5).astype(np.float64)
        report = grad_check_model(model, ids, labels, tol=1e-4)
        assert report.passed, [(r.name, r.max_rel_err) for r in report.rows]

    def test_frozen_channel_not_trainable(self):
        cfg = M.ModelConfig(arch="kim_cnn", filter_sizes=(2,), emb_dim=3,
                            max_len=4, channels="multi")
        model = M.build(cfg, 8, Pcg32(20, 1))
        names = [n for n, _, _ in model.trainable_items()]
        assert "embedding.table" in names
        assert all("frozen" not in n for n in names)
        assert "embedding.frozen_table_1" in dict(model.state_items())


class TestHybridFrontend:
    def test_disabled_frontend_reduces_to_bilstm(self):
        cfg_hybrid = M.ModelConfig(arch="cnn_bilstm", filter_sizes=(), emb_dim=4,
                                   max_len=5, hidden=3)
        cfg_bilstm = M.ModelConfig(arch="bilstm", emb_dim=4, max_len=5, hidden=3)
        hybrid = M.build(cfg_hybrid, 10, Pcg32(21, 1))
        plain = M.build(cfg_bilstm, 10, Pcg32(21, 1))
        ids = make_ids(Pcg32(22), 3, 5, 10)
        np.testing.assert_array_equal(
            hybrid.forward(ids, mode="eval"), plain.forward(ids, mode="eval")
        )

    def test_identity_kernel_passthrough(self):
        emb_dim = 3
        cfg = M.ModelConfig(arch="cnn_bilstm", filter_sizes=(1,), num_filters=emb_dim,
                            emb_dim=emb_dim, max_len=5, hidden=2)
        with_front = M.build(cfg, 10, Pcg32(23, 1))
        with_front.front[1].params["w"][...] = np.eye(emb_dim).reshape(emb_dim, 1, 1, emb_dim)
        with_front.front[1].params["b"][...] = 0.0
        frontless = M.build(
            M.ModelConfig(arch="cnn_bilstm", filter_sizes=(), emb_dim=emb_dim,
                          max_len=5, hidden=2),
            10, Pcg32(24, 1),
        )
        np.copyto(frontless.emb.tables[0], with_front.emb.tables[0])
        for cell_a, cell_b in ((frontless.encoder.fwd, with_front.encoder.fwd),
                               (frontless.encoder.bwd, with_front.encoder.bwd)):
            for key in cell_a.params:
                np.copyto(cell_a.params[key], cell_b.params[key])
        for key in frontless.fc.params:
            np.copyto(frontless.fc.params[key], with_front.fc.params[key])
        ids = make_ids(Pcg32(25), 3, 5, 10)
        np.testing.assert_allclose(
            with_front.forward(ids, mode="eval"),
            frontless.forward(ids, mode="eval"),
            atol=1e-12,
        )


class TestCheckpoint:
    def _model(self, arch="deep_cnn"):
        cfg = M.ModelConfig(arch=arch, filter_sizes=(2, 3), num_filters=2,
                            emb_dim=3, max_len=6, fc_hidden=4, hidden=3)
        if arch == "cnn_bilstm":
            cfg = M.ModelConfig(arch=arch, filter_sizes=(3,), num_filters=2,
                                emb_dim=3, max_len=6, hidden=3)
        return M.build(cfg, 9, Pcg32(26, 1))

    @pytest.mark.parametrize("arch", M.ARCHS)
    def test_roundtrip_forward_bitwise(self, arch, tmp_path):
        model = self._model(arch)
        ids = make_ids(Pcg32(27), 4, 6, 9)
        if arch == "deep_cnn":  # move running stats off their init values
            labels = np.array([0.0, 1.0, 0.0, 1.0])
            from textcnn.layers import bce_with_logits
            z = model.forward(ids, mode="train")
            _, dz = bce_with_logits(z, labels)
            model.backward(dz)
        before = model.forward(ids, mode="eval")
        path = tmp_path / "m.txcn"
        M.save(model, path, {"vocab": ["<pad>", "<unk>"], "seed": 1})
        loaded, extra = M.load(path)
        assert extra["vocab"] == ["<pad>", "<unk>"]
        after = loaded.forward(ids, mode="eval")
        np.testing.assert_array_equal(before, after)

    def test_empty_file_is_corrupt(self, tmp_path):
        path = tmp_path / "empty.txcn"
        path.write_bytes(b"")
        with pytest.raises(CorruptError):
            M.load(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.txcn"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(FormatError, match="magic"):
            M.load(path)

    def test_unsupported_version_names_supported(self, tmp_path):
        model = self._model("kim_cnn")
        path = tmp_path / "v.txcn"
        M.save(model, path)
        data = bytearray(path.read_bytes())
        data[4:8] = (999).to_bytes(4, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="999.*supported: 1"):
            M.load(path)

    def test_truncated_payload(self, tmp_path):
        model = self._model("kim_cnn")
        path = tmp_path / "t.txcn"
        M.save(model, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 16])
        with pytest.raises(CorruptError):
            M.load(path)

    def test_stable_parameter_order(self, tmp_path):
        a = self._model("deep_cnn")
        b = self._model("deep_cnn")
        assert [n for n, _ in a.state_items()] == [n for n, _ in b.state_items()]


class TestEndToEndGradients:
    def test_tiny_deep_cnn_against_finite_differences(self):
        cfg = M.ModelConfig(arch="deep_cnn", filter_sizes=(2, 3), num_filters=2,
                            emb_dim=3, max_len=6, fc_hidden=4)
        model = M.build(cfg, 6, Pcg32(28, 1))
        rng = Pcg32(29)
        ids = make_ids(rng, 4, 6, 6)
        labels = (rng.uniform_array(4) < 0.5).astype(np.float64)
        report = grad_check_model(model, ids, labels, tol=1e-4)
        assert report.passed, [(r.name, r.max_rel_err) for r in report.rows]
