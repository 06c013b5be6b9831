"""Truthful baselines: VCG, per-item Myerson, and the directly-parameterized
lottery mechanism whose menu/weights/boosts are themselves the trainable
variables.

VCG is the affine maximizer with unit weights, zero boosts, and the full
deterministic menu; for additive bids it collapses to an independent
second-price auction per item, and both constructions are implemented so
they can be cross-checked.

Per-item Myerson transforms each bid by the bidder's virtual value
``phi(v) = v - (1 - F(v)) / f(v)``, sells to the highest positive virtual
value, and charges the smallest bid that still wins (the inverse virtual
value of the runner-up, floored at the reserve). Virtual values use closed
forms for the uniform/exponential/power-tail families and bisection
otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ama import (AmaParameters, AuctionOutcome, BatchOutcome, TensorParams,
                  deterministic_menu, run_auction)
from .autodiff import Tensor, sigmoid
from .menunet import menu_from_logits
from .nn import Module, truncated_normal
from .settings import SettingSpec, make_rng

# Reference optimal revenues for the one-bidder/two-item settings, from the
# closed-form mechanisms in the literature; used for ratio reporting only,
# never recomputed here.
OPTIMAL_REVENUE = {("E", 1, 2): 9.7810, ("F", 1, 2): 0.1706}

_BISECT_TOL = 1e-10


class MyersonDistribution:
    """A regular value distribution with its virtual-value machinery.

    ``virtual`` and ``virtual_inv`` accept scalars or arrays. When no closed
    forms are supplied, the virtual value comes from the cdf/pdf formula and
    its inverse from bisection over ``support`` (the virtual value must be
    monotone there, which regularity guarantees).
    """

    def __init__(self, cdf: Callable, pdf: Callable, support: tuple[float, float],
                 virtual: Callable | None = None, virtual_inv: Callable | None = None,
                 icdf: Callable | None = None, name: str = "custom"):
        self.cdf = cdf
        self.pdf = pdf
        self.support = support
        self._virtual = virtual
        self._virtual_inv = virtual_inv
        self._icdf = icdf
        self.name = name

    def virtual(self, v):
        if self._virtual is not None:
            return self._virtual(np.asarray(v, dtype=np.float64))
        v = np.asarray(v, dtype=np.float64)
        return v - (1.0 - self.cdf(v)) / self.pdf(v)

    def virtual_inv(self, y):
        if self._virtual_inv is not None:
            return self._virtual_inv(np.asarray(y, dtype=np.float64))
        return self._bisect(self.virtual, np.asarray(y, dtype=np.float64))

    @property
    def reserve(self) -> float:
        """Root of the virtual value (the optimal posted reserve)."""
        return float(self.virtual_inv(0.0))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self._icdf is None:
            return self._bisect(self.cdf, rng.uniform(size=size))
        return self._icdf(rng.uniform(size=size))

    def _bisect(self, fn: Callable, target: np.ndarray) -> np.ndarray:
        lo_edge, hi_edge = self.support
        if not np.isfinite(hi_edge):
            hi_edge = max(lo_edge + 1.0, 1.0)
            while (fn(hi_edge) < np.max(target)) and hi_edge < 1e12:
                hi_edge *= 2.0
        lo = np.full_like(target, lo_edge, dtype=np.float64)
        hi = np.full_like(target, hi_edge, dtype=np.float64)
        if np.any(fn(lo) > target) or np.any(fn(hi) < target):
            raise ValueError(
                f"{self.name}: target outside the invertible range on {self.support}")
        while np.max(hi - lo) > _BISECT_TOL:
            mid = 0.5 * (lo + hi)
            below = fn(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)


def uniform_distribution(a: float, b: float) -> MyersonDistribution:
    """U[a, b]: phi(v) = 2v - b, inverse (y + b) / 2."""
    width = b - a
    return MyersonDistribution(
        cdf=lambda v: np.clip((v - a) / width, 0.0, 1.0),
        pdf=lambda v: np.where((v >= a) & (v <= b), 1.0 / width, 0.0),
        support=(a, b),
        virtual=lambda v: 2.0 * v - b,
        virtual_inv=lambda y: 0.5 * (y + b),
        icdf=lambda u: a + u * width,
        name=f"uniform[{a},{b}]")


def exponential_distribution(scale: float) -> MyersonDistribution:
    """Exp with mean ``scale``: phi(v) = v - scale."""
    return MyersonDistribution(
        cdf=lambda v: 1.0 - np.exp(-v / scale),
        pdf=lambda v: np.exp(-v / scale) / scale,
        support=(0.0, np.inf),
        virtual=lambda v: v - scale,
        virtual_inv=lambda y: y + scale,
        icdf=lambda u: -scale * np.log1p(-u),
        name=f"exponential(mean {scale})")


def power_tail_distribution(k: float) -> MyersonDistribution:
    """cdf 1 - (1+x)^-k on [0, inf): phi(x) = x - (1+x)/k."""
    if k <= 1:
        raise ValueError("power tail needs k > 1 for a finite mean")
    return MyersonDistribution(
        cdf=lambda v: 1.0 - (1.0 + v) ** (-k),
        pdf=lambda v: k * (1.0 + v) ** (-k - 1.0),
        support=(0.0, np.inf),
        virtual=lambda v: v - (1.0 + v) / k,
        virtual_inv=lambda y: (k * y + 1.0) / (k - 1.0),
        icdf=lambda u: (1.0 - u) ** (-1.0 / k) - 1.0,
        name=f"power-tail(k={k})")


def setting_distributions(spec: SettingSpec) -> list[list[MyersonDistribution]]:
    """The (bidder, item) distribution grid of a classic setting."""
    if spec.contextual:
        raise ValueError(
            f"setting {spec.tag} is contextual; build per-instance grids from (X, Y)")
    per_item = {
        "C": [uniform_distribution(0.0, 1.0)] * spec.m,
        "D": [exponential_distribution(3.0)],
        "E": [uniform_distribution(4.0, 7.0), uniform_distribution(4.0, 16.0)],
        "F": [power_tail_distribution(5.0), power_tail_distribution(6.0)],
    }[spec.tag]
    return [list(per_item) for _ in range(spec.n)]


def contextual_distributions(X: np.ndarray, Y: np.ndarray) -> list[list[MyersonDistribution]]:
    """Conditional per-pair priors U[0, sigmoid(x_i . y_j)] for settings A/B."""
    z = np.asarray(X) @ np.asarray(Y).T
    ceilings = 1.0 / (1.0 + np.exp(-z))
    return [[uniform_distribution(0.0, h) for h in row] for row in ceilings]


# -- VCG ---------------------------------------------------------------------------


def vcg(bids, method: str = "auto") -> AuctionOutcome:
    """VCG outcome for additive bids.

    ``method`` picks the construction: ``"menu"`` delegates to the affine
    maximizer with the full deterministic menu (exponential in m, fine for
    small auctions), ``"per-item"`` runs the independent second-price
    shortcut, ``"auto"`` switches on menu size. Both constructions agree.
    """
    bids = np.asarray(bids, dtype=np.float64)
    n, m = bids.shape
    if method == "auto":
        method = "menu" if (n + 1) ** m <= 256 else "per-item"
    if method == "menu":
        params = AmaParameters(deterministic_menu(n, m), np.ones(n),
                               np.zeros((n + 1) ** m))
        return run_auction(bids, params)
    if method != "per-item":
        raise ValueError(f"unknown VCG method {method!r}")
    outcome = vcg_batch(bids[None])
    return AuctionOutcome(None, outcome.allocations[0], outcome.payments[0],
                          outcome.utilities[0], None)


def vcg_batch(bids: np.ndarray) -> BatchOutcome:
    """Per-item second-price auction, vectorized over a batch."""
    bids = np.asarray(bids, dtype=np.float64)
    B, n, m = bids.shape
    winners = bids.argmax(axis=1)  # (B, m), lowest index on ties
    allocations = np.zeros_like(bids)
    cols = np.arange(m)
    rows = np.arange(B)[:, None]
    allocations[rows, winners, cols] = 1.0
    if n == 1:
        prices = np.zeros((B, m))
    else:
        sorted_bids = np.sort(bids, axis=1)
        prices = sorted_bids[:, -2, :]  # second-highest per item
    payments = np.zeros((B, n))
    np.add.at(payments, (rows, winners), prices)
    utilities = (allocations * bids).sum(axis=2) - payments
    return BatchOutcome(np.full(B, -1), allocations, payments, utilities,
                        np.full((B, n), -1))


# -- per-item Myerson ---------------------------------------------------------------


def item_myerson(bids, dists: list[list[MyersonDistribution]]) -> AuctionOutcome:
    """Independent Myerson auction per item.

    Item j goes to the bidder with the highest virtual value if that value is
    strictly positive; she pays the smallest bid that would still have won,
    i.e. her inverse virtual value of ``max(0, runner-up virtual value)``.
    """
    bids = np.asarray(bids, dtype=np.float64)
    n, m = bids.shape
    if len(dists) != n or any(len(row) != m for row in dists):
        raise ValueError(f"distribution grid must be {n}x{m}")
    allocation = np.zeros((n, m))
    payments = np.zeros(n)
    for j in range(m):
        phi = np.array([dists[i][j].virtual(bids[i, j]) for i in range(n)])
        winner = int(np.argmax(phi))
        if phi[winner] <= 0.0:
            continue
        others = np.delete(phi, winner)
        threshold = max(0.0, others.max()) if others.size else 0.0
        allocation[winner, j] = 1.0
        payments[winner] += float(dists[winner][j].virtual_inv(threshold))
    utilities = (allocation * bids).sum(axis=1) - payments
    return AuctionOutcome(None, allocation, payments, utilities, None)


def item_myerson_batch(bids: np.ndarray,
                       dists: list[list[MyersonDistribution]]) -> BatchOutcome:
    bids = np.asarray(bids, dtype=np.float64)
    B, n, m = bids.shape
    phi = np.empty_like(bids)
    for i in range(n):
        for j in range(m):
            phi[:, i, j] = dists[i][j].virtual(bids[:, i, j])
    winners = phi.argmax(axis=1)  # (B, m)
    best = phi.max(axis=1)
    sold = best > 0.0
    if n == 1:
        runner_up = np.zeros((B, m))
    else:
        runner_up = np.sort(phi, axis=1)[:, -2, :]
    threshold = np.maximum(0.0, runner_up)
    prices = np.empty((B, m))
    for i in range(n):
        for j in range(m):
            mask = winners[:, j] == i
            if mask.any():
                prices[mask, j] = dists[i][j].virtual_inv(threshold[mask, j])
    prices = np.where(sold, prices, 0.0)
    allocations = np.zeros_like(bids)
    cols = np.arange(m)
    rows = np.arange(B)[:, None]
    allocations[rows, winners, cols] = np.where(sold, 1.0, 0.0)
    payments = np.zeros((B, n))
    np.add.at(payments, (rows, winners), prices)
    utilities = (allocations * bids).sum(axis=2) - payments
    return BatchOutcome(np.full(B, -1), allocations, payments, utilities,
                        np.full((B, n), -1))


def myerson_optimal_revenue(dist: MyersonDistribution, n: int, samples: int,
                            seed=0) -> float:
    """Monte Carlo revenue of the optimal single-item auction for n iid bidders."""
    rng = make_rng(seed)
    values = dist.sample(rng, (samples, n))
    phi = dist.virtual(values)
    best = phi.max(axis=1)
    sold = best > 0.0
    if n == 1:
        runner_up = np.zeros(samples)
    else:
        runner_up = np.sort(phi, axis=1)[:, -2]
    prices = dist.virtual_inv(np.maximum(0.0, runner_up))
    return float(np.where(sold, prices, 0.0).mean())


# -- directly parameterized lottery mechanism -----------------------------------------


class LotteryAmaModel(Module):
    """Menu logits, weight logits, and boosts as raw trainable parameters.

    The induced menu goes through the same column softmax / dummy-drop as the
    network head, so feasibility holds for any logit values. Fixed parameters
    cannot condition on representations, hence classic settings only.
    """

    def __init__(self, n: int, m: int, menu_size: int, seed=0,
                 menu_temperature: float = 1.0):
        rng = make_rng(seed)
        self.n, self.m = n, m
        self.menu_temperature = menu_temperature
        self.menu_logits = Tensor(truncated_normal(rng, (n + 1, m, menu_size), std=1.0),
                                  requires_grad=True)
        self.weight_logits = Tensor(np.zeros(n), requires_grad=True)
        self.boosts = Tensor(np.zeros(menu_size), requires_grad=True)

    def params_tensors(self) -> TensorParams:
        logits = self.menu_logits.reshape(1, *self.menu_logits.shape)
        menu = menu_from_logits(logits, self.menu_temperature, self.n)[0]
        return TensorParams(menu, sigmoid(self.weight_logits), self.boosts)

    def params(self) -> AmaParameters:
        return self.params_tensors().detach()


@dataclass(frozen=True)
class LotteryTrainConfig:
    menu_size: int = 40
    iterations: int = 2000
    samples_per_iter: int = 2048
    batch: int = 2048
    learning_rate: float = 1e-3
    tau_a: float = 100.0
    soft_ir_cap: bool = True
    menu_temperature: float = 1.0
    seed: int = 0
    clip_norm: float | None = 10.0


def train_lottery_ama(spec: SettingSpec, config: LotteryTrainConfig,
                      progress: Callable[[int, float], None] | None = None) -> LotteryAmaModel:
    """Fit the lottery mechanism by revenue gradient ascent (soft winner rule)."""
    from . import training  # deferred: training also serves the network model
    from .ama import soft_revenue
    from .settings import sample

    if spec.contextual:
        raise ValueError(
            f"setting {spec.tag} is contextual; fixed lottery parameters cannot "
            "condition on representations")
    model = LotteryAmaModel(spec.n, spec.m, config.menu_size, seed=config.seed,
                            menu_temperature=config.menu_temperature)
    params = model.named_parameters()
    adam = training.Adam(params, learning_rate=config.learning_rate)
    rng = make_rng(np.random.SeedSequence([config.seed, 0xA17]))
    for it in range(config.iterations):
        batch = sample(spec, config.samples_per_iter, rng)
        loss_value = 0.0
        for start in range(0, config.samples_per_iter, config.batch):
            V = batch.V[start:start + config.batch]
            loss = -soft_revenue(V, model.params_tensors(), config.tau_a,
                                 ir_cap=config.soft_ir_cap)
            model.zero_grad()
            loss.backward()
            if config.clip_norm is not None:
                training.clip_gradients(params, config.clip_norm)
            adam.step()
            loss_value = loss.item()
        if progress is not None:
            progress(it, loss_value)
    return model
