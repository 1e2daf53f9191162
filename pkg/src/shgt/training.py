"""Optimization loop, gradient verification, and checkpoint format.

Everything here is deterministic given (config, dataset, seed): negative
pairs and dropout masks come from per-epoch counter-based rng streams,
gradient reductions run in fixed order, and neither the training log nor
the checkpoint embeds wall-clock state. Running the same inputs twice
must produce byte-identical artifacts.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import metrics, objectives
from .errors import DataError, NumericalError
from .model import STREAM_DROPOUT, STREAM_PAIRS, ParameterSet, stream

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class OptimizerState:
    lr: float
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_optimizer(params, lr):
    state = OptimizerState(lr=lr)
    for name, value in params.items():
        state.m[name] = np.zeros_like(value)
        state.v[name] = np.zeros_like(value)
    return state


def adam_step(params, grads, state):
    """Bias-corrected adaptive-moment update, in place."""
    state.step += 1
    t = state.step
    correction1 = 1.0 - BETA1**t
    correction2 = 1.0 - BETA2**t
    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise NumericalError(f"non-finite gradient for {name}", stage="optimizer")
        m = state.m[name]
        v = state.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * grad
        v *= BETA2
        v += (1.0 - BETA2) * grad * grad
        update = (m / correction1) / (np.sqrt(v / correction2) + EPS)
        params[name] -= state.lr * update
    return params, state


@dataclass(frozen=True)
class FdReport:
    per_tensor: dict  # name -> (max relative error, coordinates checked)
    max_relative_error: float

    def lines(self):
        out = []
        for name, (err, count) in self.per_tensor.items():
            out.append(f"{name}: max_rel_err = {err:.3e} over {count} coordinates")
        out.append(f"overall: max_rel_err = {self.max_relative_error:.3e}")
        return out


def finite_difference_check(
    params, loss_fn, grad_fn, h=1e-5, samples=20, rng=None, indices=None, atol=0.0
):
    """Central-difference audit of grad_fn against loss_fn.

    loss_fn must be deterministic (checked by evaluating twice); params
    are perturbed in place and restored, so loss_fn must read the same
    object it was handed. A discrepancy of at most `atol` counts as
    exact: the estimator's own roundoff is about eps*|loss|/(2h), so on
    near-zero gradient coordinates the relative formula would otherwise
    amplify pure noise.
    """
    first = loss_fn(params)
    second = loss_fn(params)
    if first != second:
        raise NumericalError("loss function is not deterministic", stage="gradcheck")
    grads = grad_fn(params)
    if rng is None:
        rng = np.random.default_rng(0)
    per_tensor = {}
    overall = 0.0
    for name, tensor in params.items():
        flat = tensor.reshape(-1)
        grad_flat = grads[name].reshape(-1)
        if indices is not None and name in indices:
            coords = list(indices[name])
        else:
            count = min(samples, flat.size)
            coords = sorted(int(i) for i in rng.choice(flat.size, size=count, replace=False))
        worst = 0.0
        for idx in coords:
            original = flat[idx]
            flat[idx] = original + h
            f_plus = loss_fn(params)
            flat[idx] = original - h
            f_minus = loss_fn(params)
            flat[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = grad_flat[idx]
            if abs(analytic - numeric) <= atol:
                continue
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
            worst = max(worst, rel)
        per_tensor[name] = (worst, len(coords))
        overall = max(overall, worst)
    return FdReport(per_tensor=per_tensor, max_relative_error=overall)


@dataclass(frozen=True)
class TrainResult:
    params: ParameterSet
    log_lines: tuple
    best_epoch: int
    best_val_w_f1: float
    epochs_run: int
    diverged: bool
    divergence_stage: str | None


def train(model, split):
    """Full-batch training with per-epoch negative resampling and early
    stopping on validation weighted F1."""
    config = model.config
    train_rows = np.asarray(split.train, dtype=np.int64)
    val_rows = np.asarray(split.validation, dtype=np.int64)
    if train_rows.size == 0 or val_rows.size == 0:
        raise DataError("empty train or validation split")
    params = model.init_parameters(config.seed)
    state = init_optimizer(params, config.lr)
    best_params = params.copy()
    best_val = -1.0
    best_epoch = 0
    since_best = 0
    log = []
    diverged = False
    divergence_stage = None
    epochs_run = 0
    reason = "epochs"
    for epoch in range(1, config.epochs + 1):
        try:
            pairs = objectives.sample_negatives(model.h, stream(config.seed, STREAM_PAIRS, epoch))
            breakdown, trace = model.forward(
                params,
                pairs,
                train_rows,
                train_mode=True,
                rng=stream(config.seed, STREAM_DROPOUT, epoch),
            )
            grads = model.backward(trace, params)
            params, state = adam_step(params, grads, state)
            val_report = metrics.evaluate(model, params, val_rows, ks=())
        except NumericalError as exc:
            diverged = True
            divergence_stage = exc.stage or "unknown"
            log.append(
                json.dumps(
                    {"epoch": epoch, "event": "divergence", "stage": divergence_stage},
                    sort_keys=True,
                )
            )
            break
        epochs_run = epoch
        improved = val_report.w_f1 > best_val
        if improved:
            best_val = val_report.w_f1
            best_epoch = epoch
            best_params = params.copy()
            since_best = 0
        else:
            since_best += 1
        log.append(
            json.dumps(
                {
                    "epoch": epoch,
                    "l_clas": breakdown.classification,
                    "l_stru": breakdown.reconstruction,
                    "l_total": breakdown.total,
                    "val_w_f1": val_report.w_f1,
                    "best": improved,
                },
                sort_keys=True,
            )
        )
        if since_best > config.patience:
            reason = "patience"
            break
    if diverged:
        reason = "divergence"
    log.append(
        json.dumps(
            {
                "event": "stopped",
                "reason": reason,
                "best_epoch": best_epoch,
                "best_val_w_f1": best_val,
                "epochs_run": epochs_run,
            },
            sort_keys=True,
        )
    )
    return TrainResult(
        params=best_params,
        log_lines=tuple(log),
        best_epoch=best_epoch,
        best_val_w_f1=best_val,
        epochs_run=epochs_run,
        diverged=diverged,
        divergence_stage=divergence_stage,
    )


# -- checkpoint container ----------------------------------------------

CHECKPOINT_MAGIC = "SHGT-CKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, config):
    """Text manifest (version, config echo, tensor name/shape/offset)
    followed by the raw row-major 64-bit little-endian payload. Written
    atomically; content is a pure function of (params, config)."""
    tensors = []
    offset = 0
    chunks = []
    for name, value in params.items():
        raw = np.ascontiguousarray(value, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(value.shape), "offset": offset})
        offset += len(raw)
        chunks.append(raw)
    manifest = json.dumps(
        {
            "format_version": CHECKPOINT_VERSION,
            "dtype": "<f8",
            "config": config.echo(),
            "tensors": tensors,
            "payload_bytes": offset,
        },
        sort_keys=True,
    ).encode("utf-8")
    header = f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {len(manifest)}\n".encode("ascii")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(manifest)
            fh.write(b"\n")
            for chunk in chunks:
                fh.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Returns (ParameterSet, config echo dict); rejects malformed or
    inconsistent containers."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    newline = blob.find(b"\n")
    if newline < 0:
        raise DataError(f"{path}: not a checkpoint (no header line)")
    parts = blob[:newline].decode("ascii", errors="replace").split()
    if len(parts) != 3 or parts[0] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad header)")
    if int(parts[1]) != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {parts[1]}")
    manifest_len = int(parts[2])
    start = newline + 1
    try:
        manifest = json.loads(blob[start:start + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: bad checkpoint manifest: {exc}") from None
    if manifest.get("dtype") != "<f8":
        raise DataError(f"{path}: unsupported dtype {manifest.get('dtype')!r}")
    payload = blob[start + manifest_len + 1:]
    if len(payload) != manifest["payload_bytes"]:
        raise DataError(
            f"{path}: payload is {len(payload)} bytes, manifest says {manifest['payload_bytes']}"
        )
    tensors = []
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = 8 * int(np.prod(shape, dtype=np.int64)) if shape else 8
        chunk = payload[entry["offset"]:entry["offset"] + size]
        if len(chunk) != size:
            raise DataError(f"{path}: tensor {entry['name']} overruns payload")
        value = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        tensors.append((entry["name"], value))
    return ParameterSet(tensors), manifest["config"]


def check_compatible(params, model):
    """Loaded parameters must exactly match the model's declared shapes."""
    expected = model.parameter_shapes()
    got = [(name, value.shape) for name, value in params.items()]
    want = [(name, tuple(shape)) for name, shape in expected]
    if got != want:
        raise DataError(f"checkpoint parameters {got} do not match model {want}")
