"""Code-node / visit-hyperedge incidence structure.

The binary incidence matrix (codes x visits) is kept in both compressed
forms because the encoder multiplies by it in both orientations: the row
form lists, per code, the hyperedges containing it; the column form
lists, per hyperedge, its member codes. No value arrays — entries are
exactly 1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .kernels import as_index_array


@dataclass(frozen=True)
class Hypergraph:
    num_nodes: int
    num_edges: int
    row_indptr: np.ndarray  # (num_nodes+1,) int64
    row_indices: np.ndarray  # (nnz,) edge ids, ascending within each row
    col_indptr: np.ndarray  # (num_edges+1,) int64
    col_indices: np.ndarray  # (nnz,) code ids, ascending within each column
    edge_to_patient: tuple  # edge id -> (patient index, visit ordinal)

    @property
    def nnz(self):
        return int(self.row_indptr[-1])

    def to_dense(self):
        dense = np.zeros((self.num_nodes, self.num_edges), dtype=np.float64)
        for j in range(self.num_edges):
            dense[self.col_indices[self.col_indptr[j]:self.col_indptr[j + 1]], j] = 1.0
        return dense

    def export_coordinates(self, path):
        """Debug dump: one 'i j' line per nonzero, row-major."""
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(self.num_nodes):
                for j in self.row_indices[self.row_indptr[i]:self.row_indptr[i + 1]]:
                    fh.write(f"{i} {j}\n")


def build_hypergraph(dataset, examples):
    """Assemble the incidence structure over the examples' input visits.

    One hyperedge per input visit, indexed exactly as the examples'
    `input_visit_edge_ids` (patient order, then visit order); the ids are
    cross-checked here so the two structures cannot drift apart.
    """
    m = dataset.vocabulary.size
    edge_codes = []
    edge_to_patient = []
    for example in examples:
        patient = dataset.patients[example.patient_index]
        inputs = patient.visits[:-1]
        if len(inputs) != len(example.input_visit_edge_ids):
            raise DataError(
                f"patient {patient.patient_id!r}: example lists "
                f"{len(example.input_visit_edge_ids)} input visits, patient has {len(inputs)}"
            )
        for visit, edge_id in zip(inputs, example.input_visit_edge_ids):
            if edge_id != len(edge_codes):
                raise DataError(
                    f"patient {patient.patient_id!r}: edge id {edge_id} out of order "
                    f"(expected {len(edge_codes)})"
                )
            if not visit.codes:
                raise DataError(f"patient {patient.patient_id!r}: empty visit")
            edge_codes.append(sorted(visit.codes))
            edge_to_patient.append((example.patient_index, visit.ordinal))
    n = len(edge_codes)
    if n == 0:
        raise DataError("no input visits: cannot build hypergraph")

    counts = [len(codes) for codes in edge_codes]
    col_indptr = np.zeros(n + 1, dtype=np.int64)
    col_indptr[1:] = np.cumsum(counts)
    col_indices = as_index_array(np.concatenate([np.asarray(c) for c in edge_codes]))

    # Row form by stable counting sort of the (code, edge) pairs.
    rows = col_indices
    cols = np.repeat(np.arange(n, dtype=np.int64), counts)
    order = np.argsort(rows, kind="stable")
    row_indices = as_index_array(cols[order])
    row_indptr = np.zeros(m + 1, dtype=np.int64)
    row_indptr[1:] = np.cumsum(np.bincount(rows, minlength=m))

    return Hypergraph(
        num_nodes=m,
        num_edges=n,
        row_indptr=row_indptr,
        row_indices=row_indices,
        col_indptr=as_index_array(col_indptr),
        col_indices=col_indices,
        edge_to_patient=tuple(edge_to_patient),
    )


def node_degrees(h):
    """Per-code hyperedge membership counts (row sums)."""
    return np.diff(h.row_indptr)


def edge_degrees(h):
    """Per-visit code counts (column sums); always >= 1."""
    return np.diff(h.col_indptr)
