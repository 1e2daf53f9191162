"""Record model for coded visit data.

A corpus is newline-delimited UTF-8, one JSON object per patient:

    {"patient_id": "p0001", "visits": [["d:401.9", "m:insulin"], ...]}

Each visit is an array of ``<kind>:<raw>`` tokens with kind one of
``d`` (diagnosis), ``m`` (medication), ``p`` (procedure); array order of
visits is chronological. A patient needs at least two visits: the last
one is the prediction target, the earlier ones are the model inputs.

Vocabulary ids are assigned deterministically — diagnosis codes first,
each kind sorted lexicographically by raw token — so label vectors index
directly into the leading diagnosis block.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

DIAGNOSIS = "diagnosis"
MEDICATION = "medication"
PROCEDURE = "procedure"
KINDS = (DIAGNOSIS, MEDICATION, PROCEDURE)

_PREFIX_TO_KIND = {"d": DIAGNOSIS, "m": MEDICATION, "p": PROCEDURE}
_KIND_TO_PREFIX = {v: k for k, v in _PREFIX_TO_KIND.items()}
_KIND_RANK = {kind: rank for rank, kind in enumerate(KINDS)}


@dataclass(frozen=True)
class MedicalCode:
    """One vocabulary entry: integer id, kind, and the original raw token."""

    id: int
    kind: str
    raw: str

    @property
    def token(self):
        return f"{_KIND_TO_PREFIX[self.kind]}:{self.raw}"


@dataclass(frozen=True)
class Vocabulary:
    codes: tuple  # MedicalCode, ordered by id
    n_diagnosis: int
    n_medication: int
    n_procedure: int
    index: dict = field(repr=False)  # (kind, raw) -> id

    @property
    def size(self):
        return len(self.codes)

    def id_of(self, kind, raw):
        return self.index[(kind, raw)]


@dataclass(frozen=True)
class Visit:
    """One admission: a deduplicated, non-empty set of code ids.

    `ordinal` is the 1-based position within the patient's history.
    """

    codes: frozenset
    ordinal: int


@dataclass(frozen=True)
class Patient:
    patient_id: str
    visits: tuple  # Visit, ordinals strictly increasing, length >= 2

    @property
    def n_input_visits(self):
        return len(self.visits) - 1


@dataclass(frozen=True)
class EhrDataset:
    patients: tuple
    vocabulary: Vocabulary
    n_input_visits: int


@dataclass(frozen=True)
class SupervisedExample:
    """Inputs and target for one patient.

    `input_visit_edge_ids` are global hyperedge indices (assigned in
    patient order, then visit order); `label` marks which diagnosis ids
    appear in the final visit.
    """

    patient_index: int
    input_visit_edge_ids: tuple
    label: np.ndarray  # (n_diagnosis,) float64 in {0, 1}


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    validation: tuple
    test: tuple


def _parse_token(token, where):
    if not isinstance(token, str) or ":" not in token:
        raise DataError(f"{where}: malformed code token {token!r} (expected '<kind>:<raw>')")
    prefix, raw = token.split(":", 1)
    if prefix not in _PREFIX_TO_KIND:
        raise DataError(f"{where}: unknown code kind {prefix!r} in token {token!r}")
    if not raw:
        raise DataError(f"{where}: empty raw code in token {token!r}")
    return _PREFIX_TO_KIND[prefix], raw


def _parse_patient_record(obj, where):
    if not isinstance(obj, dict):
        raise DataError(f"{where}: patient record must be an object")
    pid = obj.get("patient_id")
    visits = obj.get("visits")
    if not isinstance(pid, str) or not pid:
        raise DataError(f"{where}: missing or invalid patient_id")
    if not isinstance(visits, list):
        raise DataError(f"{where}: missing or invalid visits array")
    if len(visits) < 2:
        raise DataError(f"{where}: patient {pid!r} has fewer than 2 visits")
    parsed = []
    for t, visit in enumerate(visits, start=1):
        if not isinstance(visit, list) or not visit:
            raise DataError(f"{where}: visit {t} of patient {pid!r} is empty")
        codes = {_parse_token(tok, f"{where}, visit {t}") for tok in visit}
        parsed.append(codes)
    return pid, parsed


def _assemble(records):
    """Build a validated dataset from [(patient_id, [set of (kind, raw)])]."""
    if not records:
        raise DataError("empty corpus")
    seen_kind = {}
    for pid, visits in records:
        for codes in visits:
            for kind, raw in codes:
                prior = seen_kind.setdefault(raw, kind)
                if prior != kind:
                    raise DataError(
                        f"code {raw!r} appears with conflicting kinds {prior} and {kind}"
                    )
    by_kind = {kind: set() for kind in KINDS}
    for _, visits in records:
        for codes in visits:
            for kind, raw in codes:
                by_kind[kind].add(raw)
    ordered = []
    for kind in KINDS:
        ordered.extend((kind, raw) for raw in sorted(by_kind[kind]))
    codes = tuple(MedicalCode(i, kind, raw) for i, (kind, raw) in enumerate(ordered))
    vocab = Vocabulary(
        codes=codes,
        n_diagnosis=len(by_kind[DIAGNOSIS]),
        n_medication=len(by_kind[MEDICATION]),
        n_procedure=len(by_kind[PROCEDURE]),
        index={(c.kind, c.raw): c.id for c in codes},
    )
    patients = []
    n_input = 0
    for pid, visits in records:
        vs = tuple(
            Visit(frozenset(vocab.id_of(kind, raw) for kind, raw in codes), ordinal=t)
            for t, codes in enumerate(visits, start=1)
        )
        patients.append(Patient(patient_id=pid, visits=vs))
        n_input += len(vs) - 1
    return EhrDataset(patients=tuple(patients), vocabulary=vocab, n_input_visits=n_input)


def load_corpus(path):
    """Parse a corpus file into a validated dataset.

    Raises DataError with the offending line number on any malformed
    record, duplicate patient_id, unknown code kind, or single-visit
    patient; an empty file is an error.
    """
    records = []
    seen_ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"line {lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: invalid JSON ({exc.msg})") from exc
            pid, visits = _parse_patient_record(obj, where)
            if pid in seen_ids:
                raise DataError(f"{where}: duplicate patient_id {pid!r}")
            seen_ids.add(pid)
            records.append((pid, visits))
    if not records:
        raise DataError("empty corpus")
    return _assemble(records)


def write_corpus(dataset, path):
    """Serialize a dataset in canonical corpus form.

    Codes within a visit are written sorted by (kind rank, raw token),
    which makes write -> load -> write byte-identical.
    """
    vocab = dataset.vocabulary
    with open(path, "w", encoding="utf-8") as fh:
        for patient in dataset.patients:
            visits = []
            for visit in patient.visits:
                entries = sorted(
                    (vocab.codes[i] for i in visit.codes),
                    key=lambda c: (_KIND_RANK[c.kind], c.raw),
                )
                visits.append([c.token for c in entries])
            obj = {"patient_id": patient.patient_id, "visits": visits}
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")


def build_vocabulary(dataset):
    """Recompute the code table from the dataset's visit contents.

    Deterministic ordering: diagnosis block first (lexicographic by raw
    token), then medications, then procedures.
    """
    if not dataset.patients:
        raise DataError("empty dataset")
    vocab = dataset.vocabulary
    records = [
        (
            p.patient_id,
            [{(vocab.codes[i].kind, vocab.codes[i].raw) for i in v.codes} for v in p.visits],
        )
        for p in dataset.patients
    ]
    return _assemble(records).vocabulary


def make_examples(dataset):
    """One supervised example per patient whose final visit carries diagnoses.

    Hyperedge ids are assigned contiguously over the input visits of the
    kept patients, walking patients in dataset order and visits in
    chronological order. Final visits are never emitted as hyperedges, so
    the incidence structure cannot leak the prediction target. Patients
    whose final visit has no diagnosis codes are skipped with a warning.
    """
    vocab = dataset.vocabulary
    n_diag = vocab.n_diagnosis
    examples = []
    edge_counter = 0
    skipped = 0
    for idx, patient in enumerate(dataset.patients):
        target = patient.visits[-1]
        diag_ids = sorted(i for i in target.codes if i < n_diag)
        if not diag_ids:
            skipped += 1
            continue
        label = np.zeros(n_diag, dtype=np.float64)
        label[diag_ids] = 1.0
        n_inputs = len(patient.visits) - 1
        edge_ids = tuple(range(edge_counter, edge_counter + n_inputs))
        edge_counter += n_inputs
        examples.append(
            SupervisedExample(patient_index=idx, input_visit_edge_ids=edge_ids, label=label)
        )
    if skipped:
        logger.warning(
            "skipped %d patient(s) whose final visit has no diagnosis codes", skipped
        )
    return examples


def split_patients(count, seed):
    """Deterministic 7:1:2 split of `count` example rows:
    floor(0.7N) / floor(0.1N) / rest."""
    n = int(count)
    if n < 10:
        raise DataError(f"need at least 10 patients to split, got {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(0.7 * n)
    n_val = int(0.1 * n)
    train = tuple(sorted(int(i) for i in perm[:n_train]))
    validation = tuple(sorted(int(i) for i in perm[n_train:n_train + n_val]))
    test = tuple(sorted(int(i) for i in perm[n_train + n_val:]))
    return DatasetSplit(train=train, validation=validation, test=test)


@dataclass
class GeneratorConfig:
    """Shape of a synthetic cohort.

    Patients are assigned 1-2 latent disease clusters; visit codes are
    drawn mostly from the cluster code pools (planting higher-order
    co-occurrence) plus uniform noise, and final-visit diagnoses come
    from the same clusters so history predicts the target.
    """

    patients: int = 200
    n_diagnosis: int = 120
    n_medication: int = 60
    n_procedure: int = 40
    clusters: int = 6
    visits_min: int = 2
    visits_max: int = 4
    codes_min: int = 10
    codes_max: int = 18
    noise_rate: float = 0.2
    label_min: int = 3
    label_max: int = 8

    def validate(self):
        if self.patients < 1:
            raise DataError("generator: patients must be >= 1")
        if min(self.n_diagnosis, self.n_medication, self.n_procedure) < 0:
            raise DataError("generator: code counts must be >= 0")
        if self.n_diagnosis < 1:
            raise DataError("generator: need at least one diagnosis code")
        if self.clusters < 1:
            raise DataError("generator: clusters must be >= 1")
        if self.n_diagnosis < self.clusters:
            raise DataError("generator: need at least one diagnosis code per cluster")
        if not (2 <= self.visits_min <= self.visits_max):
            raise DataError("generator: need 2 <= visits_min <= visits_max")
        if not (1 <= self.codes_min <= self.codes_max):
            raise DataError("generator: need 1 <= codes_min <= codes_max")
        vocab_size = self.n_diagnosis + self.n_medication + self.n_procedure
        if self.codes_max > vocab_size:
            raise DataError(
                f"generator: codes_max {self.codes_max} exceeds vocabulary size {vocab_size}"
            )
        if not 0.0 <= self.noise_rate < 1.0:
            raise DataError("generator: noise_rate must be in [0, 1)")
        if not (1 <= self.label_min <= self.label_max):
            raise DataError("generator: need 1 <= label_min <= label_max")


def _cluster_pools(count, clusters):
    """Split [0, count) into `clusters` contiguous, near-equal blocks."""
    bounds = np.linspace(0, count, clusters + 1).astype(int)
    return [np.arange(bounds[k], bounds[k + 1]) for k in range(clusters)]


def generate_synthetic(spec, seed):
    """Generate a synthetic cohort with planted cluster structure.

    Deterministic for a given (spec, seed). Code ids used during
    generation are positional (diagnoses first, then medications, then
    procedures) and are emitted as zero-padded raw tokens, so the
    vocabulary built on load reproduces the same id assignment.
    """
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_diag, n_med, n_proc = spec.n_diagnosis, spec.n_medication, spec.n_procedure
    vocab_size = n_diag + n_med + n_proc

    diag_pools = _cluster_pools(n_diag, spec.clusters)
    med_pools = _cluster_pools(n_med, spec.clusters)
    proc_pools = _cluster_pools(n_proc, spec.clusters)

    def pool_ids(cluster_ids):
        parts = [diag_pools[k] for k in cluster_ids]
        parts += [med_pools[k] + n_diag for k in cluster_ids]
        parts += [proc_pools[k] + n_diag + n_med for k in cluster_ids]
        return np.sort(np.concatenate(parts))

    def draw_visit(pool, size, forced=()):
        """Pick `size` distinct codes: forced ones, then pool draws, then noise."""
        chosen = list(forced)
        chosen_set = set(chosen)
        remaining = size - len(chosen)
        if remaining > 0:
            n_noise = int(rng.binomial(remaining, spec.noise_rate))
            n_pool = remaining - n_noise
            candidates = pool[~np.isin(pool, list(chosen_set), assume_unique=True)]
            n_pool = min(n_pool, len(candidates))
            if n_pool > 0:
                picks = rng.choice(candidates, size=n_pool, replace=False)
                chosen.extend(int(i) for i in picks)
                chosen_set.update(int(i) for i in picks)
            n_noise = size - len(chosen)
            if n_noise > 0:
                outside = np.setdiff1d(np.arange(vocab_size), np.fromiter(chosen_set, dtype=int))
                picks = rng.choice(outside, size=min(n_noise, len(outside)), replace=False)
                chosen.extend(int(i) for i in picks)
        return sorted(chosen)

    width = max(3, len(str(vocab_size)))

    def token_of(code_id):
        if code_id < n_diag:
            return DIAGNOSIS, f"D{code_id:0{width}d}"
        if code_id < n_diag + n_med:
            return MEDICATION, f"M{code_id - n_diag:0{width}d}"
        return PROCEDURE, f"P{code_id - n_diag - n_med:0{width}d}"

    records = []
    id_width = len(str(spec.patients))
    for u in range(spec.patients):
        n_clusters_u = int(rng.integers(1, 3)) if spec.clusters > 1 else 1
        cluster_ids = np.sort(rng.choice(spec.clusters, size=n_clusters_u, replace=False))
        pool = pool_ids(cluster_ids)
        diag_pool = np.sort(np.concatenate([diag_pools[k] for k in cluster_ids]))
        n_visits = int(rng.integers(spec.visits_min, spec.visits_max + 1))
        visits = []
        for _ in range(n_visits - 1):
            size = int(rng.integers(spec.codes_min, spec.codes_max + 1))
            visits.append(draw_visit(pool, size))
        n_label = int(rng.integers(spec.label_min, spec.label_max + 1))
        n_label = min(n_label, len(diag_pool))
        labels = rng.choice(diag_pool, size=n_label, replace=False)
        size = max(int(rng.integers(spec.codes_min, spec.codes_max + 1)), n_label)
        visits.append(draw_visit(pool, size, forced=sorted(int(i) for i in labels)))
        records.append(
            (
                f"p{u:0{id_width}d}",
                [{token_of(i) for i in visit} for visit in visits],
            )
        )
    return _assemble(records)
