"""Global self-attention over the joint code/visit token sequence.

Codes and visits are concatenated into one token matrix so every token
attends to every other one; structure never masks the attention. Each
layer is scaled dot-product attention in its barest form: three square
projections, softmax, and a value projection on the way out. No
residual connections, no normalization, no feed-forward block, no
biases. Dropout, when enabled, acts on the attention matrix (inverted
scaling, so evaluation needs no rescale).
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError


@dataclass(frozen=True)
class AttentionLayerParams:
    w_q: np.ndarray  # (d, d)
    w_k: np.ndarray  # (d, d)
    w_v: np.ndarray  # (d, d)


@dataclass(frozen=True)
class AttentionTrace:
    """Forward intermediates of one layer, kept for the backward pass."""

    x_in: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray  # row-stochastic, pre-dropout
    drop_mult: np.ndarray | None  # inverted-dropout multiplier, None in eval


def concat_tokens(z_v, z_e):
    """Token order: all codes first, then all visits."""
    return np.concatenate([z_v, z_e], axis=0)


def split_outputs(x, num_nodes):
    return x[:num_nodes], x[num_nodes:]


def softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def attention_layer(params, x_in, dropout, rng, layer_index):
    d = x_in.shape[1]
    scale = 1.0 / np.sqrt(d)
    q = x_in @ params.w_q
    k = x_in @ params.w_k
    v = x_in @ params.w_v
    logits = (q @ k.T) * scale
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite attention logits", stage=f"layer {layer_index}")
    attn = softmax_rows(logits)
    drop_mult = None
    if dropout > 0.0 and rng is not None:
        keep = 1.0 - dropout
        drop_mult = (rng.random(attn.shape) < keep) / keep
        x_out = (attn * drop_mult) @ v
    else:
        x_out = attn @ v
    trace = AttentionTrace(x_in=x_in, q=q, k=k, v=v, attn=attn, drop_mult=drop_mult)
    return x_out, trace


def forward_stack(layers, x0, dropout, rng):
    """Run the layers in order; `rng=None` means evaluation mode (no
    dropout, fully deterministic)."""
    rngs = rng.spawn(len(layers)) if rng is not None and dropout > 0.0 else [None] * len(layers)
    x = x0
    traces = []
    for index, (params, layer_rng) in enumerate(zip(layers, rngs)):
        x, trace = attention_layer(params, x, dropout, layer_rng, index)
        traces.append(trace)
    return x, traces


def layer_backward(params, trace, grad_out):
    """Adjoint of one layer; returns the input gradient and the
    parameter gradients packed in the params container type."""
    scale = 1.0 / np.sqrt(trace.x_in.shape[1])
    if trace.drop_mult is None:
        a_used = trace.attn
        grad_attn_used = grad_out @ trace.v.T
        grad_attn = grad_attn_used
    else:
        a_used = trace.attn * trace.drop_mult
        grad_attn_used = grad_out @ trace.v.T
        grad_attn = grad_attn_used * trace.drop_mult
    grad_v = a_used.T @ grad_out
    # Softmax jacobian applied row-wise.
    inner = (grad_attn * trace.attn).sum(axis=1, keepdims=True)
    grad_logits = trace.attn * (grad_attn - inner)
    grad_q = (grad_logits @ trace.k) * scale
    grad_k = (grad_logits.T @ trace.q) * scale
    grads = AttentionLayerParams(
        w_q=trace.x_in.T @ grad_q,
        w_k=trace.x_in.T @ grad_k,
        w_v=trace.x_in.T @ grad_v,
    )
    grad_x = grad_q @ params.w_q.T + grad_k @ params.w_k.T + grad_v @ params.w_v.T
    return grad_x, grads


def stack_backward(layers, traces, grad_out):
    """Backward through the whole stack; returns the gradient at the
    token matrix and one parameter-gradient container per layer."""
    layer_grads = [None] * len(layers)
    grad = grad_out
    for index in range(len(layers) - 1, -1, -1):
        grad, layer_grads[index] = layer_backward(layers[index], traces[index], grad)
    return grad, layer_grads
