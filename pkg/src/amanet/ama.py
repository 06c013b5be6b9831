"""Affine maximizer auctions over an explicit allocation menu.

The mechanism is fully described by an ``AmaParameters`` triple: a menu of
``s`` allocation matrices, one positive weight per bidder, and one real boost
per menu entry. Winner determination picks the menu entry maximizing
``sum_i w_i * b_i(A) + boost(A)`` with ``b_i(A) = sum_j bids[i, j] * A[i, j]``;
bidder ``k`` pays the externality measured against the re-maximization with
her bid removed. Payments are non-negative by construction because the menu
used for the excluded maximization contains the overall winner.

Hard winner determination (exact argmax, lowest index on ties) is used for
all evaluation. Training uses the softmax relaxation in ``soft_payments`` /
``soft_revenue`` where a temperature ``tau_a`` controls how closely the
relaxation tracks the argmax.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .autodiff import Tensor, concat, matmul, relu, reshape, softmax, transpose

_FEASIBILITY_SLACK = 1e-9
_PAYMENT_SLACK = 1e-9


class MechanismError(RuntimeError):
    """A numeric invariant of the mechanism was violated (implementation bug)."""


@dataclass(frozen=True)
class AllocationMenu:
    """``s`` allocation matrices, each n x m with entries in [0, 1] and
    per-item column mass at most 1."""

    entries: np.ndarray  # (s, n, m)

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 3:
            raise ValueError(f"menu entries must be (s, n, m), got {entries.shape}")
        if entries.shape[0] == 0:
            raise ValueError("allocation menu is empty")
        if entries.min() < -_FEASIBILITY_SLACK or entries.max() > 1.0 + _FEASIBILITY_SLACK:
            raise ValueError("menu entries must lie in [0, 1]")
        col = entries.sum(axis=1)
        if col.max() > 1.0 + _FEASIBILITY_SLACK:
            raise ValueError(
                f"per-item allocation mass exceeds 1 (max {col.max():.12f})")
        object.__setattr__(self, "entries", entries)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def n_bidders(self) -> int:
        return self.entries.shape[1]

    @property
    def n_items(self) -> int:
        return self.entries.shape[2]


@dataclass(frozen=True)
class AmaParameters:
    """The entire mechanism: menu, positive bidder weights, per-entry boosts."""

    menu: AllocationMenu
    weights: np.ndarray  # (n,)
    boosts: np.ndarray  # (s,)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        boosts = np.asarray(self.boosts, dtype=np.float64)
        if weights.shape != (self.menu.n_bidders,):
            raise ValueError(
                f"weights shape {weights.shape} does not match {self.menu.n_bidders} bidders")
        if (weights <= 0).any():
            raise ValueError("bidder weights must be strictly positive")
        if boosts.shape != (self.menu.size,):
            raise ValueError(
                f"boosts shape {boosts.shape} does not match menu size {self.menu.size}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "boosts", boosts)


@dataclass(frozen=True)
class AuctionOutcome:
    """Result of one auction: chosen entry, payments, truthful utilities and
    the per-bidder excluded winners used by the payment rule.

    Menu indices are ``None`` for mechanisms that do not select from an
    explicit menu (the per-item baselines).
    """

    winner_index: int | None
    allocation: np.ndarray  # (n, m)
    payments: np.ndarray  # (n,)
    utilities: np.ndarray  # (n,)
    excluded_winners: np.ndarray | None  # (n,) menu indices


class BatchOutcome(NamedTuple):
    winners: np.ndarray  # (B,)
    allocations: np.ndarray  # (B, n, m)
    payments: np.ndarray  # (B, n)
    utilities: np.ndarray  # (B, n)
    excluded_winners: np.ndarray  # (B, n)


def _check_bids(bids: np.ndarray, n: int, m: int) -> np.ndarray:
    bids = np.asarray(bids, dtype=np.float64)
    if bids.shape != (n, m):
        raise ValueError(f"bids shape {bids.shape} does not match menu ({n}, {m})")
    return bids


def affine_welfare(bids, allocation, weights, boost: float) -> float:
    """``sum_i w_i * b_i(A) + boost`` for one allocation matrix."""
    bids = np.asarray(bids, dtype=np.float64)
    allocation = np.asarray(allocation, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if bids.shape != allocation.shape or weights.shape != (bids.shape[0],):
        raise ValueError(
            f"shape mismatch: bids {bids.shape}, allocation {allocation.shape}, "
            f"weights {weights.shape}")
    per_bidder = (bids * allocation).sum(axis=1)
    return float((weights * per_bidder).sum() + boost)


def _welfare_table(bids: np.ndarray, params: AmaParameters,
                   exclude: int | None = None) -> np.ndarray:
    """Affine welfare of every menu entry, optionally without one bidder."""
    per_bidder = (params.menu.entries * bids[None, :, :]).sum(axis=2)  # (s, n)
    weighted = per_bidder * params.weights[None, :]
    if exclude is None:
        return weighted.sum(axis=1) + params.boosts
    keep = [i for i in range(params.menu.n_bidders) if i != exclude]
    return weighted[:, keep].sum(axis=1) + params.boosts


def winner_determination(bids, params: AmaParameters,
                         exclude: int | None = None) -> int:
    """Menu index of the affine-welfare argmax; ties go to the lowest index."""
    bids = _check_bids(bids, params.menu.n_bidders, params.menu.n_items)
    if exclude is not None and not 0 <= exclude < params.menu.n_bidders:
        raise ValueError(f"exclude index {exclude} out of range")
    return int(np.argmax(_welfare_table(bids, params, exclude)))


def run_auction(bids, params: AmaParameters) -> AuctionOutcome:
    """Full mechanism on one bid profile: n+1 winner determinations.

    Utilities are computed treating the submitted bids as true valuations,
    which is the truthful-bidding evaluation the revenue and IR numbers use.
    """
    n, m = params.menu.n_bidders, params.menu.n_items
    bids = _check_bids(bids, n, m)
    full = _welfare_table(bids, params)
    winner = int(np.argmax(full))
    allocation = params.menu.entries[winner]
    payments = np.empty(n)
    excluded = np.empty(n, dtype=np.int64)
    for k in range(n):
        table = _welfare_table(bids, params, exclude=k)
        best = int(np.argmax(table))
        excluded[k] = best
        payments[k] = (table[best] - table[winner]) / params.weights[k]
    if payments.min() < -_PAYMENT_SLACK:
        raise MechanismError(
            f"negative payment {payments.min():.3e}; excluded maximization is broken")
    np.clip(payments, 0.0, None, out=payments)
    utilities = (allocation * bids).sum(axis=1) - payments
    return AuctionOutcome(winner, allocation, payments, utilities, excluded)


def run_auction_batch(bids: np.ndarray, menu: np.ndarray, weights: np.ndarray,
                      boosts: np.ndarray) -> BatchOutcome:
    """Vectorized hard mechanism.

    ``bids`` is (B, n, m). ``menu``/``weights``/``boosts`` are either shared
    across the batch ((s, n, m), (n,), (s,)) or per-instance with a leading
    batch axis.
    """
    bids = np.asarray(bids, dtype=np.float64)
    if bids.ndim != 3:
        raise ValueError(f"bids must be (batch, n, m), got {bids.shape}")
    B, n, m = bids.shape
    menu = np.asarray(menu, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    boosts = np.asarray(boosts, dtype=np.float64)
    if menu.ndim == 3:
        contrib = np.einsum("bnm,snm->bsn", bids, menu, optimize=True)
    elif menu.ndim == 4:
        contrib = np.einsum("bnm,bsnm->bsn", bids, menu, optimize=True)
    else:
        raise ValueError(f"menu must be (s, n, m) or (batch, s, n, m), got {menu.shape}")
    w = weights if weights.ndim == 2 else weights[None, :]
    contrib = contrib * w[:, None, :]  # (B, s, n) weighted per-bidder welfare
    lam = boosts if boosts.ndim == 2 else boosts[None, :]
    total = contrib.sum(axis=2) + lam  # (B, s)
    winners = total.argmax(axis=1)
    rows = np.arange(B)
    payments = np.empty((B, n))
    excluded = np.empty((B, n), dtype=np.int64)
    for k in range(n):
        ex = total - contrib[:, :, k]
        best = ex.argmax(axis=1)
        excluded[:, k] = best
        w_k = w[:, k] if w.shape[0] == B else w[0, k]
        payments[:, k] = (ex[rows, best] - ex[rows, winners]) / w_k
    if payments.min() < -_PAYMENT_SLACK:
        raise MechanismError(
            f"negative payment {payments.min():.3e}; excluded maximization is broken")
    np.clip(payments, 0.0, None, out=payments)
    allocations = menu[winners] if menu.ndim == 3 else menu[rows, winners]
    utilities = (allocations * bids).sum(axis=2) - payments
    return BatchOutcome(winners, allocations, payments, utilities, excluded)


def deterministic_menu(n: int, m: int) -> AllocationMenu:
    """All (n+1)^m assignments of each item to one bidder or to nobody.

    With unit weights and zero boosts this menu reproduces VCG. Entries are
    ordered lexicographically over per-item assignments with bidder 0 first
    and "nobody" last, so argmax tie-breaking prefers lower bidder indices.
    """
    entries = np.zeros(((n + 1) ** m, n, m))
    for idx, assignment in enumerate(itertools.product(range(n + 1), repeat=m)):
        for j, who in enumerate(assignment):
            if who < n:
                entries[idx, who, j] = 1.0
    return AllocationMenu(entries)


# -- softmax relaxation (training path) ---------------------------------------------


class TensorParams(NamedTuple):
    """Mechanism parameters as graph tensors, for the differentiable path.

    ``menu`` is (s, n, m) or (batch, s, n, m); ``weights`` (n,) or (batch, n);
    ``boosts`` (s,) or (batch, s).
    """

    menu: Tensor
    weights: Tensor
    boosts: Tensor

    def detach(self) -> AmaParameters:
        if self.menu.ndim != 3:
            raise ValueError("detach expects unbatched parameters")
        return AmaParameters(AllocationMenu(self.menu.data.copy()),
                             self.weights.data.copy(), self.boosts.data.copy())


def _lift_params(params) -> TensorParams:
    if isinstance(params, TensorParams):
        return params
    if isinstance(params, AmaParameters):
        return TensorParams(Tensor(params.menu.entries), Tensor(params.weights),
                            Tensor(params.boosts))
    raise TypeError(f"expected AmaParameters or TensorParams, got {type(params)!r}")


class SoftAllocation(NamedTuple):
    allocation: Tensor  # (n, m)
    entry_weights: Tensor  # (s,)
    welfares: Tensor  # (s,)


def soft_allocation(bids, params, tau_a: float,
                    exclude: int | None = None) -> SoftAllocation:
    """Softmax-weighted combination of menu entries for one bid profile.

    As ``tau_a`` grows the entry weights concentrate on the hard argmax; as it
    shrinks toward zero they tend to the uniform combination.
    """
    if not tau_a > 0:
        raise ValueError(f"tau_a must be positive, got {tau_a}")
    p = _lift_params(params)
    s, n, m = p.menu.shape
    bids = _check_bids(bids, n, m)
    per_bidder = (p.menu * Tensor(bids[None, :, :])).sum(axis=2)  # (s, n)
    weighted = per_bidder * p.weights
    if exclude is None:
        welfares = weighted.sum(axis=1) + p.boosts
    else:
        mask = np.ones(n)
        mask[exclude] = 0.0
        welfares = (weighted * Tensor(mask)).sum(axis=1) + p.boosts
    q = softmax(welfares, temperature=tau_a, axis=0)
    allocation = (p.menu * q.reshape(s, 1, 1)).sum(axis=0)
    return SoftAllocation(allocation, q, welfares)


def soft_payments(bids_batch: np.ndarray, params, tau_a: float,
                  ir_cap: bool = False) -> Tensor:
    """Differentiable per-bidder payments, (batch, n).

    The payment rule is evaluated with the softmax-relaxed winner and
    excluded winners substituted for the hard argmaxes; by linearity the
    relaxed welfare terms are the softmax-weighted averages of the per-entry
    welfare values. Gradients flow to menu entries, weights, and boosts.

    ``ir_cap`` clamps each relaxed payment at the relaxed form of the exact
    bound p_k <= b_k(A*) - b_k(A*_without_k), which every hard outcome
    satisfies (divide the argmax inequality by w_k). The relaxation itself
    does not: as a bidder weight approaches zero the relaxed payment tends
    to a positive covariance term instead of vanishing like the true
    payment, and gradient ascent can ride that artifact into a zero-revenue
    mechanism. The capped bound goes to zero exactly where the artifact
    lives, and is slack wherever the hard argmax is unique.
    """
    if not tau_a > 0:
        raise ValueError(f"tau_a must be positive, got {tau_a}")
    p = _lift_params(params)
    bids = np.asarray(bids_batch, dtype=np.float64)
    if bids.ndim != 3:
        raise ValueError(f"bids must be (batch, n, m), got {bids.shape}")
    B, n, m = bids.shape
    batched_menu = p.menu.ndim == 4
    if batched_menu and p.menu.shape[0] != B:
        raise ValueError(
            f"menu batch {p.menu.shape[0]} does not match bids batch {B}")

    if batched_menu:
        s = p.menu.shape[1]
        # (B, n, s, m) @ (B, n, m, 1) -> per-bidder welfare of every entry
        menu_bn = transpose(p.menu, (0, 2, 1, 3))
        contrib = matmul(menu_bn, Tensor(bids[:, :, :, None]))
        contrib = transpose(reshape(contrib, (B, n, s)), (0, 2, 1))  # (B, s, n)
    else:
        s = p.menu.shape[0]
        # (n, B, m) @ (n, m, s) -> (n, B, s)
        menu_nms = transpose(p.menu, (1, 2, 0))
        contrib = matmul(Tensor(bids.transpose(1, 0, 2)), menu_nms)
        contrib = transpose(contrib, (1, 2, 0))  # (B, s, n)

    w = p.weights if p.weights.ndim == 2 else p.weights.reshape(1, n)
    contrib = contrib * w.reshape(w.shape[0], 1, n)
    lam = p.boosts if p.boosts.ndim == 2 else p.boosts.reshape(1, s)
    total = contrib.sum(axis=2) + lam  # (B, s)
    q_full = softmax(total, temperature=tau_a, axis=1)

    per_bidder = []
    for k in range(n):
        ex = total - contrib[:, :, k]  # (B, s) welfare without bidder k
        q_ex = softmax(ex, temperature=tau_a, axis=1)
        realized = (q_ex * ex).sum(axis=1)  # soft max of the excluded welfare
        counterfactual = (q_full * ex).sum(axis=1)
        w_k = w[:, k] if w.shape[0] == B else w[0, k]
        payment = (realized - counterfactual) / w_k
        if ir_cap:
            w_col = w_k.reshape(-1, 1) if w_k.ndim == 1 else w_k
            own_value = contrib[:, :, k] / w_col  # b_k per menu entry
            bound = (q_full * own_value).sum(axis=1) - (q_ex * own_value).sum(axis=1)
            payment = payment - relu(payment - bound)  # min(payment, bound)
        per_bidder.append(payment.reshape(B, 1))
    return concat(per_bidder, axis=1)


def soft_revenue(bids_batch: np.ndarray, params, tau_a: float,
                 ir_cap: bool = False) -> Tensor:
    """Mean over the batch of the summed relaxed payments (a scalar tensor)."""
    return soft_payments(bids_batch, params, tau_a, ir_cap).sum(axis=1).mean()
