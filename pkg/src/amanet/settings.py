"""Seeded samplers for the benchmark valuation settings.

Six families, tagged A-F. A and B are contextual: every bidder and item
carries a public 10-dimensional feature vector and valuations follow a
conditional law given those features. C-F are classic Bayesian settings
where representations are learned ID embeddings and only the valuations
are random.

    A  x, y ~ U[-1,1]^10; v_ij ~ U[0, sigmoid(x_i . y_j)]
    B  two items, features as in A; v' ~ U[0,1] couples the items:
       v_i1 = v' * sigmoid(x_i . y_1), v_i2 = (1 - v') * sigmoid(x_i . y_2)
    C  v_ij ~ U[0,1]
    D  three bidders, one item, v ~ Exp(mean 3)
    E  one bidder, two items, v_11 ~ U[4,7], v_12 ~ U[4,16]
    F  one bidder, two items, tail densities 5/(1+x)^6 and 6/(1+x)^7

Heavy-tailed and exponential draws go through explicit inverse CDFs so a
single uniform stream drives everything. Sampling is reproducible: the same
seed yields bitwise-identical batches. The generator is counter-based
(Philox), and chunked evaluation derives independent child streams from the
master seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CONTEXT_DIM = 10  # feature width of the contextual settings
_MAGIC = b"AMAVB\x00"
_DUMP_VERSION = 1

SETTING_TAGS = ("A", "B", "C", "D", "E", "F")


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator from a seed (or pass a Generator through)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def child_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    """Independent substreams for parallel or chunked sampling."""
    return np.random.SeedSequence(seed).spawn(count)


@dataclass(frozen=True)
class SettingSpec:
    """A setting tag plus auction dimensions, validated against the family."""

    tag: str
    n: int
    m: int

    def __post_init__(self):
        if self.tag not in SETTING_TAGS:
            raise ValueError(f"unknown setting tag {self.tag!r}")
        if self.n < 1 or self.m < 1:
            raise ValueError(f"need at least one bidder and one item, got {self.n}x{self.m}")
        constraints = {"B": self.m == 2, "D": (self.n == 3 and self.m == 1),
                       "E": (self.n == 1 and self.m == 2),
                       "F": (self.n == 1 and self.m == 2)}
        if not constraints.get(self.tag, True):
            raise ValueError(f"setting {self.tag} does not admit n={self.n}, m={self.m}")

    @property
    def contextual(self) -> bool:
        return self.tag in ("A", "B")

    @property
    def d_x(self) -> int:
        return CONTEXT_DIM if self.contextual else 0

    @property
    def d_y(self) -> int:
        return CONTEXT_DIM if self.contextual else 0

    def bid_domain(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-item (low, high) bid bounds used by misreport probes.

        Unbounded supports are capped at the 1 - 1e-6 quantile.
        """
        lo = np.zeros(self.m)
        if self.tag in ("A", "B", "C"):
            hi = np.ones(self.m)
        elif self.tag == "D":
            hi = np.full(self.m, -3.0 * np.log(1e-6))
        elif self.tag == "E":
            lo = np.array([4.0, 4.0])
            hi = np.array([7.0, 16.0])
        else:  # F
            hi = np.array([1e6 ** (1 / 5) - 1.0, 1e6 ** (1 / 6) - 1.0])
        return lo, hi


@dataclass(frozen=True)
class ValuationBatch:
    """Sampled auctions: features (contextual settings only) and valuations."""

    X: np.ndarray | None  # (batch, n, d_x)
    Y: np.ndarray | None  # (batch, m, d_y)
    V: np.ndarray  # (batch, n, m)

    @property
    def batch(self) -> int:
        return self.V.shape[0]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def sample(spec: SettingSpec, batch: int, rng) -> ValuationBatch:
    """Draw ``batch`` auctions; deterministic given an integer seed."""
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    rng = make_rng(rng)
    n, m = spec.n, spec.m
    if spec.tag in ("A", "B"):
        X = rng.uniform(-1.0, 1.0, size=(batch, n, CONTEXT_DIM))
        Y = rng.uniform(-1.0, 1.0, size=(batch, m, CONTEXT_DIM))
        ceilings = _sigmoid(np.einsum("bnd,bmd->bnm", X, Y))
        if spec.tag == "A":
            V = rng.uniform(size=(batch, n, m)) * ceilings
        else:
            split = rng.uniform(size=(batch, n))
            V = np.stack([split * ceilings[:, :, 0],
                          (1.0 - split) * ceilings[:, :, 1]], axis=2)
        return ValuationBatch(X, Y, V)
    if spec.tag == "C":
        return ValuationBatch(None, None, rng.uniform(size=(batch, n, m)))
    if spec.tag == "D":
        u = rng.uniform(size=(batch, n, m))
        return ValuationBatch(None, None, -3.0 * np.log1p(-u))
    if spec.tag == "E":
        v1 = rng.uniform(4.0, 7.0, size=(batch, 1))
        v2 = rng.uniform(4.0, 16.0, size=(batch, 1))
        return ValuationBatch(None, None, np.stack([v1, v2], axis=2))
    # F: inverse CDFs of 1 - (1+x)^-5 and 1 - (1+x)^-6
    u = rng.uniform(size=(batch, 2))
    v1 = u[:, :1] ** (-1.0 / 5.0) - 1.0
    v2 = u[:, 1:] ** (-1.0 / 6.0) - 1.0
    return ValuationBatch(None, None, np.stack([v1, v2], axis=2))


def id_representations(n: int, m: int, embedding_store) -> tuple[np.ndarray, np.ndarray]:
    """Representation rows for bidder IDs 0..n-1 and item IDs 0..m-1.

    ``embedding_store`` is anything exposing ``bidder_rows``/``item_rows``
    (the menu network's learned embedding table). Unknown IDs are rejected
    there.
    """
    return embedding_store.bidder_rows(n), embedding_store.item_rows(m)


# -- flat binary batch dumps ----------------------------------------------------


def dump_batch(batch: ValuationBatch, path: str) -> None:
    """Write header (magic, version, n, m, d_x, d_y, batch) then X||Y||V doubles."""
    B, n, m = batch.V.shape
    d_x = 0 if batch.X is None else batch.X.shape[2]
    d_y = 0 if batch.Y is None else batch.Y.shape[2]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIIIQ", _DUMP_VERSION, n, m, d_x, d_y, B))
        if batch.X is not None:
            fh.write(batch.X.astype("<f8").tobytes())
        if batch.Y is not None:
            fh.write(batch.Y.astype("<f8").tobytes())
        fh.write(batch.V.astype("<f8").tobytes())


def load_batch(path: str) -> ValuationBatch:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"not a valuation dump: bad magic {magic!r}")
        header = fh.read(struct.calcsize("<IIIIIQ"))
        if len(header) != struct.calcsize("<IIIIIQ"):
            raise ValueError("truncated valuation dump header")
        version, n, m, d_x, d_y, B = struct.unpack("<IIIIIQ", header)
        if version != _DUMP_VERSION:
            raise ValueError(f"unsupported dump version {version}")
        def read(count):
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError("truncated valuation dump")
            return np.frombuffer(raw, dtype="<f8")
        X = read(B * n * d_x).reshape(B, n, d_x) if d_x else None
        Y = read(B * m * d_y).reshape(B, m, d_y) if d_y else None
        V = read(B * n * m).reshape(B, n, m)
    return ValuationBatch(X, Y, V)
