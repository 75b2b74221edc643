"""Synthetic long-tailed domain data on the unit sphere.

Geometry: each domain gets a unit-norm center, rejection-sampled until all
pairwise center cosines stay below a cap, so domains occupy distinct regions.
Class prototypes are normalize(center + domain_spread * g / sqrt(d)) with g
standard gaussian, and samples are normalize(prototype + class_spread * g' /
sqrt(d)). The 1/sqrt(d) keeps the perturbation norm near the spread value, so
the spreads act as angular radii in radians (tan(angle) ~ spread) no matter
the input dimension, and the construction stays a small-angle stand-in for a
von Mises-Fisher draw. Classes of the same domain are mutually close, which
is exactly the crowding the frequency indicator is supposed to detect. Class
counts per domain follow a Zipf profile
floor(head_classes / rank^zipf_exponent), clamped to >= 1, so domain 0 is the
head and the last domain is the tail.

Per class, the last samples_per_class//4 samples (at least 2) are tagged as
the evaluation split; verification pairs are drawn from that split only, and
identification probes (eval split) are scored against a gallery of train-split
samples, so the two sides are disjoint by construction.

Domain ids exist for evaluation only. Training code gets (inputs, labels)
through train_view(); the class-to-domain table is deliberately reachable only
through evaluation_domain_table().

Dataset file format "DBDS":

    magic  b"DBDS"
    u32    version (= 1)
    u64    header length
    bytes  header JSON (config echo, counts, per-domain class counts)
    DBMX   inputs matrix block
    u32[N] class_labels
    u32[C] class_to_domain
    u8[N]  split flags (0 train, 1 eval)
"""

from __future__ import annotations

import csv
import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import (
    ConfigError,
    FormatError,
    InsufficientSamplesError,
    SeparationUnsatisfiableError,
    VersionMismatchError,
)
from .rng import Rng

DATASET_MAGIC = b"DBDS"
DATASET_VERSION = 1

_MAX_CENTER_DRAWS = 100_000


@dataclass(frozen=True)
class SynthConfig:
    num_domains: int = 3
    head_classes: int = 60
    zipf_exponent: float = 1.0
    input_dim: int = 64
    samples_per_class: int = 48
    domain_spread: float = 0.3   # sigma_d: prototype scatter around the center
    class_spread: float = 0.2    # sigma_c: sample scatter around the prototype
    max_domain_cosine: float = 0.5
    seed: int = 0

    def validated(self) -> "SynthConfig":
        if self.num_domains < 1:
            raise ConfigError("num_domains must be >= 1")
        if self.head_classes < self.num_domains:
            raise ConfigError("head_classes must be >= num_domains")
        if self.zipf_exponent < 0:
            raise ConfigError("zipf_exponent must be >= 0")
        if self.input_dim < 2:
            raise ConfigError("input_dim must be >= 2")
        if self.samples_per_class < 4:
            raise ConfigError("samples_per_class must be >= 4 (train + eval split)")
        if self.domain_spread < 0 or self.class_spread < 0:
            raise ConfigError("spreads must be >= 0")
        if not -1.0 < self.max_domain_cosine < 1.0:
            raise ConfigError("max_domain_cosine must be in (-1, 1)")
        return self


@dataclass
class SyntheticDataset:
    inputs: np.ndarray        # (N, input_dim), unit rows
    class_labels: np.ndarray  # (N,) int64
    split: np.ndarray         # (N,) uint8, 0 train / 1 eval
    config: SynthConfig
    domain_class_counts: list
    _class_to_domain: np.ndarray  # (C,) evaluation-only side channel

    @property
    def num_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_classes(self) -> int:
        return self._class_to_domain.shape[0]

    @property
    def num_domains(self) -> int:
        return len(self.domain_class_counts)

    def train_view(self):
        """(inputs, class_labels) of the training split; all a trainer sees."""
        m = self.split == 0
        return self.inputs[m], self.class_labels[m]

    def eval_view(self):
        m = self.split == 1
        return self.inputs[m], self.class_labels[m]

    def evaluation_domain_table(self) -> np.ndarray:
        """class id -> domain id; for evaluation and reporting only."""
        return self._class_to_domain.copy()


def zipf_class_counts(cfg: SynthConfig) -> list:
    return [max(1, int(cfg.head_classes / (rank ** cfg.zipf_exponent)))
            for rank in range(1, cfg.num_domains + 1)]


def _sample_centers(rng: Rng, cfg: SynthConfig) -> np.ndarray:
    centers = []
    for _ in range(_MAX_CENTER_DRAWS):
        v = rng.gaussian_block(cfg.input_dim)
        v /= np.sqrt(np.sum(v * v))
        if all(float(v @ c) < cfg.max_domain_cosine for c in centers):
            centers.append(v)
            if len(centers) == cfg.num_domains:
                return np.stack(centers)
    raise SeparationUnsatisfiableError(
        f"no {cfg.num_domains}-center layout with pairwise cos < "
        f"{cfg.max_domain_cosine} after {_MAX_CENTER_DRAWS} draws")


def generate(cfg: SynthConfig) -> SyntheticDataset:
    cfg = cfg.validated()
    rng = Rng(cfg.seed)
    counts = zipf_class_counts(cfg)
    centers = _sample_centers(rng, cfg)

    class_to_domain = np.repeat(np.arange(cfg.num_domains, dtype=np.int64), counts)
    c_total = int(class_to_domain.shape[0])

    # prototypes from the root stream, in class order; spreads are angular
    # radii, so the per-coordinate scale is spread / sqrt(d)
    root_d = float(np.sqrt(cfg.input_dim))
    noise = rng.gaussian_matrix(c_total, cfg.input_dim)
    prototypes = centers[class_to_domain] + (cfg.domain_spread / root_d) * noise
    prototypes = tensor.l2_normalize_rows(prototypes)

    spc = cfg.samples_per_class
    n_eval = max(2, spc // 4)
    inputs = np.empty((c_total * spc, cfg.input_dim))
    labels = np.repeat(np.arange(c_total, dtype=np.int64), spc)
    split = np.zeros(c_total * spc, dtype=np.uint8)
    for c in range(c_total):
        crng = rng.derive(c)  # order-independent per-class stream
        block = prototypes[c] + (cfg.class_spread / root_d) * crng.gaussian_matrix(spc, cfg.input_dim)
        inputs[c * spc:(c + 1) * spc] = tensor.l2_normalize_rows(block)
        split[(c + 1) * spc - n_eval:(c + 1) * spc] = 1

    return SyntheticDataset(inputs=inputs, class_labels=labels, split=split,
                            config=cfg, domain_class_counts=counts,
                            _class_to_domain=class_to_domain)


# ---------------------------------------------------------------------------
# verification pairs

@dataclass
class PairList:
    idx_a: np.ndarray      # (P,) sample indices
    idx_b: np.ndarray      # (P,)
    same_class: np.ndarray  # (P,) bool
    domain_id: np.ndarray  # (P,)

    def __len__(self) -> int:
        return self.idx_a.shape[0]


def make_verification_pairs(ds: SyntheticDataset, per_domain_pos: int,
                            per_domain_neg: int, seed: int) -> PairList:
    """Per-domain positive/negative pairs over the eval split, no duplicates.

    All candidate pairs within a domain are enumerated and shuffled with a
    domain-derived stream, so the selection is deterministic in (dataset, seed)
    and independent of other domains.
    """
    if per_domain_pos < 1 or per_domain_neg < 1:
        raise ConfigError("pair counts must be >= 1")
    root = Rng(seed)
    dom_of_sample = ds._class_to_domain[ds.class_labels]
    eval_mask = ds.split == 1

    idx_a, idx_b, same, dom_col = [], [], [], []
    for d in range(ds.num_domains):
        members = np.nonzero(eval_mask & (dom_of_sample == d))[0]
        labs = ds.class_labels[members]
        pos, neg = [], []
        for i in range(members.size):
            for j in range(i + 1, members.size):
                (pos if labs[i] == labs[j] else neg).append((members[i], members[j]))
        if len(pos) < per_domain_pos or len(neg) < per_domain_neg:
            raise InsufficientSamplesError(
                f"domain {d}: {len(pos)} positive / {len(neg)} negative candidates, "
                f"need {per_domain_pos}/{per_domain_neg}")
        drng = root.derive(d)
        pos_sel = [pos[k] for k in drng.permutation(len(pos))[:per_domain_pos]]
        neg_sel = [neg[k] for k in drng.permutation(len(neg))[:per_domain_neg]]
        for a, b in pos_sel:
            idx_a.append(a), idx_b.append(b), same.append(True), dom_col.append(d)
        for a, b in neg_sel:
            idx_a.append(a), idx_b.append(b), same.append(False), dom_col.append(d)

    return PairList(idx_a=np.array(idx_a, dtype=np.int64),
                    idx_b=np.array(idx_b, dtype=np.int64),
                    same_class=np.array(same, dtype=bool),
                    domain_id=np.array(dom_col, dtype=np.int64))


def write_pairs(pairs: PairList, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["idx_a", "idx_b", "same_class", "domain_id"])
        for a, b, s, d in zip(pairs.idx_a, pairs.idx_b, pairs.same_class,
                              pairs.domain_id):
            w.writerow([int(a), int(b), int(s), int(d)])


def read_pairs(path) -> PairList:
    idx_a, idx_b, same, dom = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["idx_a", "idx_b", "same_class", "domain_id"]:
            raise FormatError(f"bad pair list header: {header}")
        for row in reader:
            idx_a.append(int(row[0]))
            idx_b.append(int(row[1]))
            same.append(bool(int(row[2])))
            dom.append(int(row[3]))
    return PairList(np.array(idx_a, dtype=np.int64), np.array(idx_b, dtype=np.int64),
                    np.array(same, dtype=bool), np.array(dom, dtype=np.int64))


# ---------------------------------------------------------------------------
# dataset file format

def write_dataset(ds: SyntheticDataset, path) -> None:
    header = {
        "config": dataclasses.asdict(ds.config),
        "num_samples": ds.num_samples,
        "num_classes": ds.num_classes,
        "num_domains": ds.num_domains,
        "domain_class_counts": list(ds.domain_class_counts),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<IQ", DATASET_VERSION, len(blob)))
        fh.write(blob)
        tensor.write_matrix_to(fh, ds.inputs)
        fh.write(ds.class_labels.astype("<u4").tobytes())
        fh.write(ds._class_to_domain.astype("<u4").tobytes())
        fh.write(ds.split.astype("u1").tobytes())


def read_dataset(path) -> SyntheticDataset:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if len(magic) < 4:
            raise OSError("truncated dataset file")
        if magic != DATASET_MAGIC:
            raise FormatError(f"bad dataset magic {magic!r}")
        head = fh.read(12)
        if len(head) < 12:
            raise OSError("truncated dataset header")
        version, hlen = struct.unpack("<IQ", head)
        if version != DATASET_VERSION:
            raise VersionMismatchError(f"dataset version {version}")
        blob = fh.read(hlen)
        if len(blob) < hlen:
            raise OSError("truncated dataset header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except ValueError as e:
            raise FormatError(f"bad dataset header: {e}") from e

        inputs = tensor.read_matrix_from(fh)
        n = header["num_samples"]
        c = header["num_classes"]

        def read_block(count, dtype):
            dt = np.dtype(dtype)
            payload = fh.read(count * dt.itemsize)
            if len(payload) < count * dt.itemsize:
                raise OSError("truncated dataset payload")
            return np.frombuffer(payload, dtype=dt)

        labels = read_block(n, "<u4").astype(np.int64)
        class_to_domain = read_block(c, "<u4").astype(np.int64)
        split = read_block(n, "u1").copy()

    cfg = SynthConfig(**header["config"])
    return SyntheticDataset(inputs=inputs, class_labels=labels, split=split,
                            config=cfg,
                            domain_class_counts=list(header["domain_class_counts"]),
                            _class_to_domain=class_to_domain)
