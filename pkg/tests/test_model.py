"""End-to-end model object: parameter bookkeeping, forward/backward
wiring, ablation variants, and the evaluation paths."""

import numpy as np
import pytest

from shgt import model as model_mod
from shgt.config import TrainConfig
from shgt.data import make_examples
from shgt.errors import ConfigError, NumericalError
from shgt.hypergraph import build_hypergraph
from shgt.model import ParameterSet, ShgtModel, stream
from shgt.objectives import sample_negatives


def make_model(small_cohort, **overrides):
    examples = make_examples(small_cohort)
    h = build_hypergraph(small_cohort, examples)
    fields = dict(d=8, layers=2, alpha=0.3, dropout=0.0, epochs=5, patience=10, seed=0)
    fields.update(overrides)
    return ShgtModel(h, examples, TrainConfig(**fields).validate())


class TestParameterSet:
    def test_set_rejects_shape_change(self):
        params = ParameterSet([("a", np.zeros((2, 3)))])
        with pytest.raises(ConfigError, match="shape"):
            params.set_("a", np.zeros((3, 2)))

    def test_setitem_and_copy_independence(self):
        params = ParameterSet([("a", np.zeros((2, 2)))])
        clone = params.copy()
        params["a"] = np.ones((2, 2))
        assert np.all(clone["a"] == 0.0)
        assert np.all(params["a"] == 1.0)

    def test_check_finite_names_offender_and_stage(self):
        params = ParameterSet([("a", np.zeros(3)), ("b", np.array([1.0, np.nan]))])
        with pytest.raises(NumericalError, match="b") as excinfo:
            params.check_finite("backward")
        assert excinfo.value.stage == "backward"


class TestStreams:
    def test_same_path_reproduces_draws(self):
        a = stream(7, model_mod.STREAM_DROPOUT, 3).random(5)
        b = stream(7, model_mod.STREAM_DROPOUT, 3).random(5)
        assert np.array_equal(a, b)

    def test_distinct_paths_decorrelate(self):
        a = stream(7, model_mod.STREAM_DROPOUT, 3).random(5)
        b = stream(7, model_mod.STREAM_DROPOUT, 4).random(5)
        c = stream(7, model_mod.STREAM_PAIRS, 3).random(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestParameterShapes:
    def test_full_model_order_and_shapes(self, small_model):
        m, n = small_model.h.num_nodes, small_model.h.num_edges
        d, labels = 8, small_model.num_labels
        assert small_model.parameter_shapes() == [
            ("x_v", (m, d)),
            ("w_v", (n, d)),
            ("w_e", (m, d)),
            ("layer0.w_q", (d, d)),
            ("layer0.w_k", (d, d)),
            ("layer0.w_v", (d, d)),
            ("layer1.w_q", (d, d)),
            ("layer1.w_k", (d, d)),
            ("layer1.w_v", (d, d)),
            ("w_p", (d, labels)),
            ("b_p", (labels,)),
        ]

    def test_structural_ablation_drops_weight_tables(self, small_cohort):
        model = make_model(small_cohort, ablate="wo-S")
        names = [name for name, _ in model.parameter_shapes()]
        assert "w_v" not in names and "w_e" not in names
        assert names[0] == "x_v" and names[-2:] == ["w_p", "b_p"]

    def test_transformer_ablation_drops_layers(self, small_cohort):
        model = make_model(small_cohort, ablate="wo-T")
        names = [name for name, _ in model.parameter_shapes()]
        assert not any(name.startswith("layer") for name in names)
        assert model.num_layers == 0

    def test_loss_ablation_keeps_shapes_but_zeroes_alpha(self, small_cohort):
        model = make_model(small_cohort, ablate="wo-L")
        full = make_model(small_cohort)
        assert model.parameter_shapes() == full.parameter_shapes()
        assert model.alpha == 0.0


class TestInit:
    def test_deterministic_per_seed(self, small_model):
        a = small_model.init_parameters(5)
        b = small_model.init_parameters(5)
        c = small_model.init_parameters(6)
        for name in a.names():
            assert np.array_equal(a[name], b[name])
        assert not np.array_equal(a["x_v"], c["x_v"])

    def test_bias_zero_and_weights_bounded(self, small_model):
        params = small_model.init_parameters(0)
        assert np.all(params["b_p"] == 0.0)
        for name, shape in small_model.parameter_shapes():
            if name == "b_p":
                continue
            rows, cols = shape
            bound = np.sqrt(6.0 / (rows + cols))
            assert np.abs(params[name]).max() <= bound


class TestForward:
    def test_trace_shapes_and_loss_arithmetic(self, small_model, backend):
        params = small_model.init_parameters(0)
        pairs = sample_negatives(small_model.h, np.random.default_rng(1))
        rows = np.arange(len(small_model.examples))
        breakdown, trace = small_model.forward(params, pairs, rows)
        m, n, d = small_model.h.num_nodes, small_model.h.num_edges, 8
        assert trace.z_v_out.shape == (m, d)
        assert trace.z_e_out.shape == (n, d)
        assert trace.u.shape == (rows.size, d)
        assert trace.logits.shape == (rows.size, small_model.num_labels)
        assert trace.pos_logits.size == pairs.pos_rows.size
        assert trace.neg_logits.size == pairs.neg_rows.size
        assert len(trace.attn_traces) == 2
        assert np.isfinite(breakdown.total)
        assert breakdown.total == pytest.approx(
            breakdown.classification + 0.3 * breakdown.reconstruction, rel=1e-15
        )

    def test_eval_mode_returns_no_trace(self, small_model):
        params = small_model.init_parameters(0)
        pairs = sample_negatives(small_model.h, np.random.default_rng(1))
        rows = np.arange(4)
        breakdown, trace = small_model.forward(params, pairs, rows, train_mode=False)
        assert trace is None
        assert np.isfinite(breakdown.total)

    def test_dropout_needs_both_train_mode_and_rng(self, small_cohort):
        model = make_model(small_cohort, dropout=0.5)
        params = model.init_parameters(0)
        pairs = sample_negatives(model.h, np.random.default_rng(1))
        rows = np.arange(4)
        no_rng, _ = model.forward(params, pairs, rows, train_mode=True, rng=None)
        eval_mode, _ = model.forward(params, pairs, rows, train_mode=False)
        dropped, _ = model.forward(
            params, pairs, rows, train_mode=True, rng=np.random.default_rng(0)
        )
        assert no_rng.total == eval_mode.total
        assert dropped.total != eval_mode.total

    def test_degenerate_variant_is_pooled_logistic_regression(self, small_cohort, backend):
        # Zero attention layers and a zero reconstruction weight leave
        # mean-pool -> linear head -> sigmoid, checked densely here.
        model = make_model(small_cohort, ablate="wo-T", alpha=0.0, d=4)
        params = model.init_parameters(2)
        dense = model.h.to_dense()
        deg = dense.sum(axis=0)
        x_e = dense.T @ params["x_v"] / deg[:, None]
        z_e = dense.T @ params["w_e"] + x_e
        u = np.stack(
            [
                z_e[list(example.input_visit_edge_ids)].mean(axis=0)
                for example in model.examples
            ]
        )
        expected = 1.0 / (1.0 + np.exp(-(u @ params["w_p"] + params["b_p"])))
        probs = model.predict_proba(params)
        assert np.allclose(probs, expected, atol=1e-12)

    def test_non_finite_loss_is_reported_at_loss_stage(self, small_cohort):
        model = make_model(small_cohort, ablate="wo-T")
        params = model.init_parameters(0)
        poisoned = params["x_v"].copy()
        poisoned[0, 0] = np.nan
        params["x_v"] = poisoned
        pairs = sample_negatives(model.h, np.random.default_rng(1))
        with pytest.raises(NumericalError) as excinfo:
            with np.errstate(over="ignore", invalid="ignore"):
                model.forward(params, pairs, np.arange(4))
        assert excinfo.value.stage == "loss"


class TestBackward:
    def test_gradient_names_match_parameters(self, small_cohort, backend):
        for ablate in (None, "wo-S", "wo-T", "wo-L"):
            model = make_model(small_cohort, ablate=ablate)
            params = model.init_parameters(0)
            pairs = sample_negatives(model.h, np.random.default_rng(1))
            _, trace = model.forward(params, pairs, np.arange(6))
            grads = model.backward(trace, params)
            assert grads.names() == params.names()
            for name, value in grads.items():
                assert value.shape == params[name].shape
                assert np.isfinite(value).all()

    def test_loss_ablation_matches_zero_alpha_gradients(self, small_cohort, backend):
        # `wo-L` must silence the reconstruction branch entirely: its
        # gradients coincide with a model configured with alpha = 0.
        ablated = make_model(small_cohort, ablate="wo-L")
        plain = make_model(small_cohort, alpha=0.0)
        params = ablated.init_parameters(0)
        pairs = sample_negatives(ablated.h, np.random.default_rng(1))
        rows = np.arange(6)
        _, trace_a = ablated.forward(params, pairs, rows)
        _, trace_b = plain.forward(params, pairs, rows)
        grads_a = ablated.backward(trace_a, params)
        grads_b = plain.backward(trace_b, params)
        for name in grads_a.names():
            assert np.array_equal(grads_a[name], grads_b[name])

    def test_fault_hook_is_applied(self, small_model):
        params = small_model.init_parameters(0)
        pairs = sample_negatives(small_model.h, np.random.default_rng(1))
        _, trace = small_model.forward(params, pairs, np.arange(4))

        def zero_all(grads):
            for name in grads.names():
                grads[name] = np.zeros_like(grads[name])
            return grads

        model_mod._grad_fault_hook = zero_all
        try:
            grads = small_model.backward(trace, params)
        finally:
            model_mod._grad_fault_hook = None
        assert all(np.all(value == 0.0) for _, value in grads.items())


class TestInference:
    def test_predict_proba_deterministic_and_bounded(self, small_model, backend):
        params = small_model.init_parameters(0)
        a = small_model.predict_proba(params)
        b = small_model.predict_proba(params)
        assert np.array_equal(a, b)
        assert a.shape == (len(small_model.examples), small_model.num_labels)
        assert np.all((a > 0.0) & (a < 1.0))

    def test_predict_proba_row_subset(self, small_model):
        params = small_model.init_parameters(0)
        rows = np.array([2, 0, 5])
        subset = small_model.predict_proba(params, label_rows=rows)
        full = small_model.predict_proba(params)
        assert np.array_equal(subset, full[rows])

    def test_reconstruction_probs_shapes_and_range(self, small_model, backend):
        params = small_model.init_parameters(0)
        pairs = sample_negatives(small_model.h, np.random.default_rng(2))
        pos, neg = small_model.reconstruction_probs(params, pairs)
        assert pos.shape == (pairs.pos_rows.size,)
        assert neg.shape == (pairs.neg_rows.size,)
        assert np.all((pos > 0.0) & (pos < 1.0))
        assert np.all((neg > 0.0) & (neg < 1.0))
