"""Benchmark the compiled kernel backend against the numpy fallback.

Times the five hot kernels on a realistic cohort-sized problem, then a
full forward+backward training step, and prints per-op speedups. Run
from a checkout with the package installed:

    python3 benchmarks/bench_kernels.py --patients 500 --d 64
"""

import argparse
import statistics
import time

import numpy as np

from shgt import kernels
from shgt.config import TrainConfig
from shgt.data import GeneratorConfig, generate_synthetic, make_examples
from shgt.hypergraph import build_hypergraph
from shgt.model import STREAM_PAIRS, ShgtModel, stream
from shgt.objectives import sample_negatives


def best_of(fn, repeats):
    """Median of `repeats` timings, seconds."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def build_problem(args):
    gen = GeneratorConfig(
        patients=args.patients,
        n_diagnosis=80,
        n_medication=30,
        n_procedure=15,
        clusters=5,
        visits_min=2,
        visits_max=4,
        codes_min=5,
        codes_max=10,
        label_min=2,
        label_max=5,
    )
    dataset = generate_synthetic(gen, args.seed)
    examples = make_examples(dataset)
    h = build_hypergraph(dataset, examples)
    cfg = TrainConfig(
        lr=0.004, d=args.d, layers=1, alpha=0.3, dropout=0.0,
        epochs=1, patience=1, seed=args.seed,
    ).validate()
    model = ShgtModel(h, examples, cfg)
    return h, model, cfg


def kernel_cases(h, d, rng):
    m, n, nnz = h.num_nodes, h.num_edges, h.nnz
    x_nodes = rng.standard_normal((m, d))
    x_edges = rng.standard_normal((n, d))
    grad_edges = rng.standard_normal((n, d))
    pairs_rows = kernels.as_index_array(rng.integers(0, m, size=4 * nnz))
    pairs_cols = kernels.as_index_array(rng.integers(0, n, size=4 * nnz))
    weights = rng.standard_normal(pairs_rows.size)
    grad_a = np.zeros_like(x_nodes)
    grad_b = np.zeros_like(x_edges)

    def run_incidence():
        kernels.incidence_matmul(h.row_indptr, h.row_indices, x_edges)

    def run_segment_mean():
        kernels.segment_mean(h.col_indptr, h.col_indices, x_nodes)

    def run_scatter():
        accum = np.zeros((m, d))
        kernels.mean_scatter_adjoint(h.col_indptr, h.col_indices, grad_edges, accum)

    def run_pair_dots():
        kernels.pair_dots(x_nodes, x_edges, pairs_rows, pairs_cols)

    def run_rank1():
        grad_a[:] = 0.0
        grad_b[:] = 0.0
        kernels.pair_rank1_update(grad_a, grad_b, x_nodes, x_edges, pairs_rows, pairs_cols, weights)

    return [
        ("incidence_matmul", run_incidence),
        ("segment_mean", run_segment_mean),
        ("mean_scatter_adjoint", run_scatter),
        ("pair_dots", run_pair_dots),
        ("pair_rank1_update", run_rank1),
    ]


def training_step_case(h, model, cfg):
    params = model.init_parameters(cfg.seed)
    rows = np.arange(len(model.examples))
    pairs = sample_negatives(h, stream(cfg.seed, STREAM_PAIRS, 1))

    def step():
        _, trace = model.forward(params, pairs, rows, train_mode=True, rng=None)
        model.backward(trace, params)

    return step


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--patients", type=int, default=500)
    parser.add_argument("--d", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled backend not built; timing fallback only")

    h, model, cfg = build_problem(args)
    print(f"problem: {h.num_nodes} codes x {h.num_edges} visits, nnz={h.nnz}, d={args.d}")

    rng = np.random.default_rng(args.seed)
    cases = kernel_cases(h, args.d, rng)
    cases.append(("forward+backward", training_step_case(h, model, cfg)))

    results = {}
    for backend in backends:
        kernels.use_backend(backend)
        for label, fn in cases:
            fn()  # warm up
            results[(backend, label)] = best_of(fn, args.repeats)

    width = max(len(label) for label, _ in cases)
    header = f"{'kernel':<{width}}  {'fallback':>12}"
    if "compiled" in backends:
        header += f"  {'compiled':>12}  {'speedup':>8}"
    print(header)
    for label, _ in cases:
        fb = results[("fallback", label)]
        line = f"{label:<{width}}  {fb * 1e3:>10.3f}ms"
        if "compiled" in backends:
            cp = results[("compiled", label)]
            line += f"  {cp * 1e3:>10.3f}ms  {fb / cp:>7.2f}x"
        print(line)


if __name__ == "__main__":
    main()
