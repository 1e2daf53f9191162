"""End-to-end model: fused embeddings, attention stack, dual objectives.

The forward pass runs encoder -> attention -> both losses and keeps a
trace of every intermediate the hand-written backward pass consumes.
The backward pass replays the trace in reverse and produces exact
gradients for every parameter, including the three routes into the code
embedding table: its own rows, the mean-pool into visit embeddings, and
the fan-out of the final embeddings into both losses.

Ablation variants reshape the parameter set itself: `wo-S` drops the
structural weight tables, `wo-T` runs zero attention layers, `wo-L`
keeps the reconstruction term out of the total (weight zero).
"""

from dataclasses import dataclass

import numpy as np

from . import attention, encoder, kernels, objectives
from .errors import ConfigError, NumericalError

# Independent rng stream tags, combined with the run seed (and epoch
# where applicable) so adding draws to one stream never shifts another.
STREAM_INIT = 1
STREAM_PAIRS = 2
STREAM_DROPOUT = 3
STREAM_SPLIT = 4

# Test seam: when set, applied to every GradientSet before it is
# returned; lets the fault path of the gradient checker be exercised
# without corrupting real math.
_grad_fault_hook = None


def stream(seed, *path):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


class ParameterSet:
    """Ordered name -> float64 tensor map with a fixed key set."""

    __slots__ = ("_tensors",)

    def __init__(self, tensors):
        self._tensors = {name: np.asarray(value, dtype=np.float64) for name, value in tensors}

    def __getitem__(self, name):
        return self._tensors[name]

    def __setitem__(self, name, value):
        self.set_(name, value)

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def get(self, name):
        return self._tensors.get(name)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def copy(self):
        return ParameterSet((name, value.copy()) for name, value in self._tensors.items())

    def set_(self, name, value):
        current = self._tensors[name]
        if value.shape != current.shape:
            raise ConfigError(f"parameter {name}: shape {value.shape} != {current.shape}")
        self._tensors[name] = np.asarray(value, dtype=np.float64)

    def check_finite(self, what):
        for name, value in self._tensors.items():
            if not np.isfinite(value).all():
                raise NumericalError(f"non-finite values in {name}", stage=what)


GradientSet = ParameterSet


@dataclass(frozen=True)
class ForwardTrace:
    pairs: objectives.SamplePairs
    label_rows: np.ndarray
    labels: np.ndarray
    attn_traces: list
    z_v_out: np.ndarray
    z_e_out: np.ndarray
    u: np.ndarray  # pooled patient matrix restricted to label_rows
    logits: np.ndarray
    pos_logits: np.ndarray
    neg_logits: np.ndarray


class ShgtModel:
    """Binds one hypergraph + example set to the trainable pipeline."""

    def __init__(self, hypergraph, examples, config):
        self.h = hypergraph
        self.examples = list(examples)
        self.config = config
        self.labels = np.stack([example.label for example in self.examples])
        self.num_labels = self.labels.shape[1]
        self.seg_indptr, self.seg_indices = objectives.example_segments(
            self.examples, hypergraph.num_edges
        )
        self.structural = config.ablate != "wo-S"
        self.num_layers = 0 if config.ablate == "wo-T" else config.layers
        self.alpha = 0.0 if config.ablate == "wo-L" else config.alpha

    # -- parameters ----------------------------------------------------

    def parameter_shapes(self):
        m, n, d = self.h.num_nodes, self.h.num_edges, self.config.d
        shapes = [("x_v", (m, d))]
        if self.structural:
            shapes += [("w_v", (n, d)), ("w_e", (m, d))]
        for i in range(self.num_layers):
            shapes += [
                (f"layer{i}.w_q", (d, d)),
                (f"layer{i}.w_k", (d, d)),
                (f"layer{i}.w_v", (d, d)),
            ]
        shapes += [("w_p", (d, self.num_labels)), ("b_p", (self.num_labels,))]
        return shapes

    def init_parameters(self, seed):
        rng = stream(seed, STREAM_INIT)
        tensors = []
        for name, shape in self.parameter_shapes():
            if name == "b_p":
                tensors.append((name, np.zeros(shape)))
            else:
                tensors.append((name, encoder.xavier_uniform(rng, *shape)))
        return ParameterSet(tensors)

    def _layers(self, params):
        return [
            attention.AttentionLayerParams(
                w_q=params[f"layer{i}.w_q"],
                w_k=params[f"layer{i}.w_k"],
                w_v=params[f"layer{i}.w_v"],
            )
            for i in range(self.num_layers)
        ]

    def _head(self, params):
        return objectives.PredictionHead(w_p=params["w_p"], b_p=params["b_p"])

    # -- forward / backward --------------------------------------------

    def _pipeline(self, params, dropout, rng):
        fused = encoder.fuse(self.h, params["x_v"], params.get("w_v"), params.get("w_e"))
        x0 = attention.concat_tokens(fused.z_v, fused.z_e)
        x_out, traces = attention.forward_stack(self._layers(params), x0, dropout, rng)
        z_v_out, z_e_out = attention.split_outputs(x_out, self.h.num_nodes)
        u_all = objectives.pool_patients(z_e_out, self.seg_indptr, self.seg_indices)
        return z_v_out, z_e_out, u_all, traces

    def forward(self, params, pairs, label_rows, train_mode=True, rng=None):
        dropout = self.config.dropout if (train_mode and rng is not None) else 0.0
        z_v_out, z_e_out, u_all, traces = self._pipeline(params, dropout, rng)
        label_rows = np.asarray(label_rows, dtype=np.int64)
        u = u_all[label_rows]
        labels = self.labels[label_rows]
        logits = objectives.patient_logits(u, self._head(params))
        l_clas = objectives.classification_loss(logits, labels)
        pos_logits, neg_logits = objectives.pair_logits(z_v_out, z_e_out, pairs)
        l_stru = objectives.reconstruction_loss(pos_logits, neg_logits)
        total = l_clas + self.alpha * l_stru
        if not np.isfinite(total):
            raise NumericalError("non-finite loss", stage="loss")
        breakdown = objectives.LossBreakdown(
            classification=float(l_clas), reconstruction=float(l_stru), total=float(total)
        )
        trace = None
        if train_mode:
            trace = ForwardTrace(
                pairs=pairs,
                label_rows=label_rows,
                labels=labels,
                attn_traces=traces,
                z_v_out=z_v_out,
                z_e_out=z_e_out,
                u=u,
                logits=logits,
                pos_logits=pos_logits,
                neg_logits=neg_logits,
            )
        return breakdown, trace

    def backward(self, trace, params):
        head = self._head(params)
        grad_u, grad_w_p, grad_b_p = objectives.classification_backward(
            trace.logits, trace.labels, trace.u, head
        )
        num_patients = self.seg_indptr.size - 1
        grad_u_all = np.zeros((num_patients, trace.z_e_out.shape[1]))
        grad_u_all[trace.label_rows] = grad_u
        grad_z_e = np.zeros_like(trace.z_e_out)
        kernels.mean_scatter_adjoint(self.seg_indptr, self.seg_indices, grad_u_all, grad_z_e)
        grad_z_v = np.zeros_like(trace.z_v_out)
        if self.alpha != 0.0:
            rec_v, rec_e = objectives.reconstruction_backward(
                trace.z_v_out,
                trace.z_e_out,
                trace.pairs,
                trace.pos_logits,
                trace.neg_logits,
                self.alpha,
            )
            grad_z_v += rec_v
            grad_z_e += rec_e
        grad_x_out = np.concatenate([grad_z_v, grad_z_e], axis=0)
        grad_x0, layer_grads = attention.stack_backward(
            self._layers(params), trace.attn_traces, grad_x_out
        )
        grad_z_v_in, grad_z_e_in = attention.split_outputs(grad_x0, self.h.num_nodes)
        grad_x_v, grad_w_v, grad_w_e = encoder.fuse_backward(
            self.h, grad_z_v_in, grad_z_e_in, self.structural
        )
        tensors = [("x_v", grad_x_v)]
        if self.structural:
            tensors += [("w_v", grad_w_v), ("w_e", grad_w_e)]
        for i, lg in enumerate(layer_grads):
            tensors += [
                (f"layer{i}.w_q", lg.w_q),
                (f"layer{i}.w_k", lg.w_k),
                (f"layer{i}.w_v", lg.w_v),
            ]
        tensors += [("w_p", grad_w_p), ("b_p", grad_b_p)]
        grads = GradientSet(tensors)
        if grads.names() != params.names():
            raise ConfigError(
                f"gradient names {grads.names()} do not match parameters {params.names()}"
            )
        grads.check_finite("backward")
        if _grad_fault_hook is not None:
            grads = _grad_fault_hook(grads) or grads
        return grads

    # -- inference -----------------------------------------------------

    def predict_proba(self, params, label_rows=None):
        """Per-patient label probabilities, evaluation mode."""
        _, _, u_all, _ = self._pipeline(params, 0.0, None)
        if label_rows is not None:
            u_all = u_all[np.asarray(label_rows, dtype=np.int64)]
        return objectives.sigmoid(objectives.patient_logits(u_all, self._head(params)))

    def reconstruction_probs(self, params, pairs):
        """Reconstructed incidence values at the given pairs, evaluation
        mode; returns (positive-pair, negative-pair) probability arrays."""
        z_v_out, z_e_out, _, _ = self._pipeline(params, 0.0, None)
        pos_logits, neg_logits = objectives.pair_logits(z_v_out, z_e_out, pairs)
        return objectives.sigmoid(pos_logits), objectives.sigmoid(neg_logits)
