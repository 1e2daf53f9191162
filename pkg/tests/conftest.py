import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shgt import kernels
from shgt.config import TrainConfig
from shgt.data import GeneratorConfig, generate_synthetic, make_examples, split_patients
from shgt.hypergraph import Hypergraph, build_hypergraph
from shgt.kernels import as_index_array
from shgt.model import ShgtModel

settings.register_profile(
    "suite",
    deadline=None,
    derandomize=True,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Runs the test once per available kernel backend."""
    previous = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


def hypergraph_from_columns(edge_code_lists, num_nodes):
    """Assemble the dual-form incidence structure directly from per-edge
    member lists; independent of the corpus pipeline."""
    n = len(edge_code_lists)
    counts = [len(codes) for codes in edge_code_lists]
    col_indptr = np.zeros(n + 1, dtype=np.int64)
    col_indptr[1:] = np.cumsum(counts)
    col_indices = as_index_array(np.concatenate([np.asarray(sorted(c)) for c in edge_code_lists]))
    cols = np.repeat(np.arange(n, dtype=np.int64), counts)
    order = np.argsort(col_indices, kind="stable")
    row_indices = as_index_array(cols[order])
    row_indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    row_indptr[1:] = np.cumsum(np.bincount(col_indices, minlength=num_nodes))
    return Hypergraph(
        num_nodes=num_nodes,
        num_edges=n,
        row_indptr=row_indptr,
        row_indices=row_indices,
        col_indptr=col_indptr,
        col_indices=col_indices,
        edge_to_patient=tuple((0, k + 1) for k in range(n)),
    )


def random_hypergraph(rng, num_nodes, num_edges, min_deg=2, max_deg=5):
    edges = []
    for _ in range(num_edges):
        deg = int(rng.integers(min_deg, min(max_deg, num_nodes) + 1))
        edges.append(sorted(int(i) for i in rng.choice(num_nodes, size=deg, replace=False)))
    return hypergraph_from_columns(edges, num_nodes)


def build_pipeline(gen_config, gen_seed, train_config):
    """Generate a cohort and assemble the full model stack."""
    dataset = generate_synthetic(gen_config, gen_seed)
    examples = make_examples(dataset)
    h = build_hypergraph(dataset, examples)
    model = ShgtModel(h, examples, train_config)
    split = split_patients(len(examples), train_config.seed)
    return dataset, examples, h, model, split


@pytest.fixture(scope="session")
def small_cohort():
    """A 30-patient cohort shared by tests that only need plausible data."""
    gen = GeneratorConfig(
        patients=30,
        n_diagnosis=20,
        n_medication=10,
        n_procedure=6,
        clusters=3,
        codes_min=4,
        codes_max=8,
        label_min=2,
        label_max=4,
    )
    return generate_synthetic(gen, seed=3)


@pytest.fixture()
def small_model(small_cohort):
    examples = make_examples(small_cohort)
    h = build_hypergraph(small_cohort, examples)
    config = TrainConfig(d=8, layers=2, alpha=0.3, dropout=0.0, epochs=5, patience=10, seed=0)
    return ShgtModel(h, examples, config.validate())
