"""Synthetic multi-domain classification data and federated partitions.

Each domain shares the same class prototypes; domain ``k`` maps a base sample
``x`` to ``Q_k x + shift_k + noise`` with ``Q_k`` orthogonal.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm


@dataclass
class LabeledDataset:
    features: np.ndarray  # (n, d_in)
    labels: np.ndarray  # (n,) int
    domain: int = 0
    ids: np.ndarray | None = None  # global sample ids, used to audit partitions

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError(f"{len(self.features)} feature rows but {len(self.labels)} labels")
        if self.ids is None:
            self.ids = np.arange(len(self.labels))
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.domain, self.ids[idx])

    @staticmethod
    def concat(parts) -> "LabeledDataset":
        parts = list(parts)
        return LabeledDataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            parts[0].domain if len({p.domain for p in parts}) == 1 else -1,
            np.concatenate([p.ids for p in parts]),
        )


@dataclass
class DomainSpec:
    rotation: np.ndarray  # (d_in, d_in) orthogonal
    shift: np.ndarray  # (d_in,)
    noise: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("rotation must be square")
        if not np.allclose(q.T @ q, np.eye(q.shape[0]), atol=1e-10, rtol=0):
            raise ValueError("rotation is not orthogonal")
        self.rotation = q
        self.shift = np.asarray(self.shift, dtype=np.float64)

    @classmethod
    def identity(cls, d_in: int) -> "DomainSpec":
        return cls(np.eye(d_in), np.zeros(d_in), 0.0)

    @classmethod
    def random(cls, d_in: int, rng: np.random.Generator, rotation: float, shift: float,
               noise: float) -> "DomainSpec":
        """Rotation ``expm(rotation * A)`` for a random unit-Frobenius skew matrix ``A``."""
        g = rng.normal(size=(d_in, d_in))
        a = g - g.T
        a /= max(np.linalg.norm(a), 1e-300)
        q = expm(rotation * np.sqrt(d_in) * a)
        # re-orthogonalise away expm rounding
        u, _, vt = np.linalg.svd(q)
        return cls(u @ vt, rng.normal(0.0, shift, size=d_in), noise)

    def apply(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = x @ self.rotation.T + self.shift
        if self.noise > 0:
            out = out + rng.normal(0.0, self.noise, size=out.shape)
        return out


@dataclass
class DomainData:
    train: LabeledDataset
    test: LabeledDataset
    spec: DomainSpec


@dataclass
class SyntheticConfig:
    """Knobs of the synthetic task; defaults give a desk-scale six-domain problem."""

    num_domains: int = 6
    num_classes: int = 10
    d_in: int = 32
    n_per_domain: int = 750
    test_fraction: float = 0.2
    prototype_scale: float = 1.0
    class_spread: float = 0.6
    domain_rotation: float = 0.3
    domain_shift: float = 0.3
    domain_noise: float = 0.2

    def make(self, rng: np.random.Generator) -> list["DomainData"]:
        knobs = {k: v for k, v in self.__dict__.items()
                 if k not in ("num_domains", "num_classes", "d_in", "n_per_domain")}
        return make_synthetic_domains(self.num_domains, self.num_classes, self.d_in,
                                      self.n_per_domain, rng, **knobs)


def _split_counts(n: int, classes: int) -> np.ndarray:
    counts = np.full(classes, n // classes)
    counts[: n % classes] += 1
    return counts


def make_synthetic_domains(num_domains: int, num_classes: int, d_in: int, n_per_domain: int,
                           rng: np.random.Generator, *, test_fraction: float = 0.2,
                           prototype_scale: float = 1.0, class_spread: float = 0.6,
                           domain_rotation: float = 0.3, domain_shift: float = 0.3,
                           domain_noise: float = 0.2,
                           specs: list[DomainSpec] | None = None) -> list[DomainData]:
    """Generate ``num_domains`` domains with a stratified train/test split each.

    Class prototypes are shared across domains. Sample ids are unique across
    all domains and splits. Pass ``specs`` to fix the domain transforms.
    """
    if min(num_domains, num_classes, d_in, n_per_domain) < 1:
        raise ValueError("domain, class, dimension and sample counts must be >= 1")
    if num_classes > n_per_domain:
        raise ValueError(f"{num_classes} classes need at least as many samples per domain, got {n_per_domain}")
    prototypes = rng.normal(0.0, prototype_scale, size=(num_classes, d_in))
    if specs is None:
        specs = [DomainSpec.random(d_in, rng, domain_rotation, domain_shift, domain_noise)
                 for _ in range(num_domains)]
    elif len(specs) != num_domains:
        raise ValueError(f"{len(specs)} domain specs for {num_domains} domains")

    out = []
    next_id = 0
    per_class = _split_counts(n_per_domain, num_classes)
    for k, spec in enumerate(specs):
        labels = np.repeat(np.arange(num_classes), per_class)
        base = prototypes[labels] + rng.normal(0.0, class_spread, size=(n_per_domain, d_in))
        x = spec.apply(base, rng)
        ids = np.arange(next_id, next_id + n_per_domain)
        next_id += n_per_domain
        train_idx, test_idx = [], []
        for c in range(num_classes):
            members = rng.permutation(np.flatnonzero(labels == c))
            n_test = int(round(test_fraction * members.size))
            test_idx.append(members[:n_test])
            train_idx.append(members[n_test:])
        train_idx = np.sort(np.concatenate(train_idx))
        test_idx = np.sort(np.concatenate(test_idx))
        full = LabeledDataset(x, labels, k, ids)
        out.append(DomainData(full.subset(train_idx), full.subset(test_idx), spec))
    return out


def dirichlet_partition(dataset: LabeledDataset, alpha: float, parts: int,
                        rng: np.random.Generator) -> list[LabeledDataset]:
    """Split by class: each class's samples go to parts with proportions ~ Dir(alpha).

    Empty parts are filled by moving one sample from the currently largest part.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if parts < 1:
        raise ValueError("parts must be >= 1")
    if parts > len(dataset):
        raise ValueError(f"cannot split {len(dataset)} samples into {parts} nonempty parts")
    if parts == 1:
        return [dataset.subset(np.arange(len(dataset)))]
    buckets: list[list[int]] = [[] for _ in range(parts)]
    for c in np.unique(dataset.labels):
        members = rng.permutation(np.flatnonzero(dataset.labels == c))
        p = rng.dirichlet(np.full(parts, alpha))
        counts = rng.multinomial(members.size, p)
        start = 0
        for q, n in enumerate(counts):
            buckets[q].extend(members[start:start + n].tolist())
            start += n
    while True:
        sizes = [len(b) for b in buckets]
        empty = [q for q, n in enumerate(sizes) if n == 0]
        if not empty:
            break
        donor = int(np.argmax(sizes))
        buckets[empty[0]].append(buckets[donor].pop())
    return [dataset.subset(np.sort(np.asarray(b, dtype=np.int64))) for b in buckets]


class PartitionMode(str, enum.Enum):
    FEATURE_SKEW = "feature"
    FEATURE_LABEL_SKEW = "feature_label"


@dataclass
class ClientProfile:
    id: int
    capacity: int
    train: LabeledDataset
    domain: int

    @property
    def n_samples(self) -> int:
        return len(self.train)


@dataclass
class FederationScenario:
    clients: list[ClientProfile]
    test_sets: list[LabeledDataset]
    mode: PartitionMode
    alpha: float | None = None
    domains: list[DomainData] = field(default_factory=list, repr=False)

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    @property
    def capacities(self) -> tuple[int, ...]:
        return tuple(c.capacity for c in self.clients)

    def train_pool(self) -> LabeledDataset:
        return LabeledDataset.concat(c.train for c in self.clients)


def build_federation_scenario(mode, capacities, domains: list[DomainData],
                              rng: np.random.Generator, alpha: float = 0.5,
                              parts: int = 5) -> FederationScenario:
    """Feature-skew: one client per domain. Feature&label-skew: ``parts`` Dirichlet
    clients per domain, sharing that domain's capacity slot.

    For feature&label skew ``capacities`` has one entry per client
    (``num_domains * parts``) ordered domain by domain.
    """
    mode = PartitionMode(mode)
    caps = [int(c) for c in capacities]
    nd = len(domains)
    clients: list[ClientProfile] = []
    if mode is PartitionMode.FEATURE_SKEW:
        if len(caps) != nd:
            raise ValueError(f"feature skew needs one capacity per domain ({nd}), got {len(caps)}")
        for k, dom in enumerate(domains):
            clients.append(ClientProfile(k, caps[k], dom.train, k))
        alpha = None
    else:
        if len(caps) != nd * parts:
            raise ValueError(f"feature&label skew needs {nd}x{parts}={nd * parts} capacities, got {len(caps)}")
        for k, dom in enumerate(domains):
            for q, shard in enumerate(dirichlet_partition(dom.train, alpha, parts, rng)):
                cid = k * parts + q
                clients.append(ClientProfile(cid, caps[cid], shard, k))
    return FederationScenario(clients, [d.test for d in domains], mode, alpha, domains)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def label_distribution(ds: LabeledDataset, num_classes: int) -> np.ndarray:
    counts = np.bincount(ds.labels, minlength=num_classes).astype(np.float64)
    return counts / max(counts.sum(), 1.0)


def write_dataset_csv(domains: list[DomainData], path) -> None:
    """Rows ``domain, split, label, id, f0, f1, ...`` (floats with 17 significant digits)."""
    d_in = domains[0].train.features.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["domain", "split", "label", "id"] + [f"f{i}" for i in range(d_in)])
        for k, dom in enumerate(domains):
            for split, ds in (("train", dom.train), ("test", dom.test)):
                for x, y, sid in zip(ds.features, ds.labels, ds.ids):
                    w.writerow([k, split, int(y), int(sid)] + [format(v, ".17g") for v in x])


def read_dataset_csv(path) -> list[DomainData]:
    """Inverse of :func:`write_dataset_csv`; the ``id`` column is optional.

    Imported domains carry an identity :class:`DomainSpec` since the generating
    transform is unknown.
    """
    rows: dict[int, dict[str, list]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        feat_cols = [i for i, h in enumerate(header) if h.startswith("f")]
        id_col = header.index("id") if "id" in header else None
        for n, rec in enumerate(reader):
            k, split = int(rec[0]), rec[1]
            if split not in ("train", "test"):
                raise ValueError(f"row {n + 2}: split must be train or test, got {split!r}")
            slot = rows.setdefault(k, {"train": [], "test": []})
            sid = int(rec[id_col]) if id_col is not None else n
            slot[split].append((int(rec[2]), sid, [float(rec[i]) for i in feat_cols]))
    out = []
    d_in = None
    for k in sorted(rows):
        sets = {}
        for split in ("train", "test"):
            recs = rows[k][split]
            if not recs:
                raise ValueError(f"domain {k} has no {split} rows")
            feats = np.array([r[2] for r in recs])
            d_in = feats.shape[1]
            sets[split] = LabeledDataset(feats, [r[0] for r in recs], k, [r[1] for r in recs])
        out.append(DomainData(sets["train"], sets["test"], DomainSpec.identity(d_in)))
    return out
