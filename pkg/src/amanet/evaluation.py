"""Monte Carlo revenue estimates, truthfulness audits, and reports.

Every mechanism here exposes ``outcome_batch(V, X, Y) -> BatchOutcome``;
menu-selecting mechanisms additionally expose their menu/weights/boosts so
the audits can re-run probe bids against fixed parameters and the winning
allocations can be ranked.

The incentive audit replays, for every sampled instance and bidder, a probe
set of misreports: scaled truth (0x, 0.5x, 2x, clamped to the bid domain),
per-item zeroing, the domain corners, and uniform random bids. A mechanism
is flagged when any probe beats truthful utility by more than tolerance.
``BidDependentReserve`` is a deliberately broken mechanism (its reserve boost
reads the bids) used to prove the audit is not vacuous.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .ama import (AmaParameters, AuctionOutcome, BatchOutcome,
                  deterministic_menu, run_auction_batch)
from .baselines import (OPTIMAL_REVENUE, item_myerson_batch,
                        setting_distributions, vcg_batch)
from .menunet import MenuNet
from .settings import SettingSpec, make_rng, sample
from .training import Checkpoint, model_from_checkpoint

DSIC_TOLERANCE = 1e-9
IR_TOLERANCE = 1e-9


@dataclass
class EvalReport:
    """One evaluation row; the CSV schema mirrors these fields."""

    setting: str
    n: int
    m: int
    method: str
    samples: int
    seed: int
    mean_revenue: float
    stderr: float
    regret: float | None = None
    ir_violations: int | None = None
    randomized_ratio: float | None = None
    optimal_ratio: float | None = None
    runtime_sec: float = 0.0


CSV_SCHEMA = "# amanet-eval-v1"


def write_reports_csv(reports: Sequence[EvalReport], path: str) -> None:
    names = [f.name for f in fields(EvalReport)]
    with open(path, "w", newline="") as fh:
        fh.write(CSV_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(names)
        for report in reports:
            writer.writerow(["" if getattr(report, k) is None else getattr(report, k)
                             for k in names])


# -- mechanisms --------------------------------------------------------------------


class Mechanism:
    """Base: a named allocation/payment rule evaluated on bid batches."""

    name = "mechanism"
    menu_based = False  # True when parameters are bid-independent menu triples

    def outcome_batch(self, V: np.ndarray, X: np.ndarray | None = None,
                      Y: np.ndarray | None = None) -> BatchOutcome:
        raise NotImplementedError

    def outcome(self, bids, X=None, Y=None) -> AuctionOutcome:
        out = self.outcome_batch(np.asarray(bids, dtype=np.float64)[None],
                                 None if X is None else np.asarray(X)[None],
                                 None if Y is None else np.asarray(Y)[None])
        winner = int(out.winners[0]) if out.winners[0] >= 0 else None
        excluded = out.excluded_winners[0] if winner is not None else None
        return AuctionOutcome(winner, out.allocations[0], out.payments[0],
                              out.utilities[0], excluded)

    def params_for_instances(self, count: int, n: int, m: int,
                             X: np.ndarray | None, Y: np.ndarray | None):
        """(menu, weights, boosts) arrays, batched or shared; menu-based only."""
        raise NotImplementedError(f"{self.name} does not expose fixed menu parameters")


class AmaMechanism(Mechanism):
    """A fixed affine maximizer (hand-built menus, trained lottery models)."""

    menu_based = True

    def __init__(self, params: AmaParameters, name: str = "ama"):
        self.params = params
        self.name = name

    def outcome_batch(self, V, X=None, Y=None):
        return run_auction_batch(V, self.params.menu.entries, self.params.weights,
                                 self.params.boosts)

    def params_for_instances(self, count, n, m, X=None, Y=None):
        menu = self.params.menu
        if (n, m) != (menu.n_bidders, menu.n_items):
            raise ValueError(f"mechanism is {menu.n_bidders}x{menu.n_items}, "
                             f"instances are {n}x{m}")
        return menu.entries, self.params.weights, self.params.boosts


class MenuNetMechanism(Mechanism):
    """Mechanism induced by a trained (or freshly initialized) menu network.

    Parameters depend only on the public representations: classic auctions
    share one parameter triple derived from the ID embeddings; contextual
    auctions get a triple per instance, computed in chunks.
    """

    menu_based = True

    def __init__(self, model: MenuNet, name: str = "menunet", chunk: int = 512):
        self.model = model
        self.name = name
        self.chunk = chunk
        self._classic_cache: dict[tuple[int, int], AmaParameters] = {}

    def _classic_params(self, n: int, m: int) -> AmaParameters:
        if (n, m) not in self._classic_cache:
            self._classic_cache[(n, m)] = self.model.forward_classic(n, m)
        return self._classic_cache[(n, m)]

    def params_for_instances(self, count, n, m, X=None, Y=None):
        if self.model.config.classic:
            params = self._classic_params(n, m)
            return params.menu.entries, params.weights, params.boosts
        if X is None or Y is None:
            raise ValueError("contextual model needs X and Y")
        menus, weights, boosts = [], [], []
        for start in range(0, count, self.chunk):
            part = self.model.forward_tensors(X[start:start + self.chunk],
                                              Y[start:start + self.chunk])
            menus.append(part.menu.data.copy())
            weights.append(part.weights.data.copy())
            boosts.append(part.boosts.data.copy())
        return (np.concatenate(menus), np.concatenate(weights),
                np.concatenate(boosts))

    def outcome_batch(self, V, X=None, Y=None):
        B, n, m = V.shape
        menu, w, boosts = self.params_for_instances(B, n, m, X, Y)
        return run_auction_batch(V, menu, w, boosts)


class VcgMechanism(Mechanism):
    """Per-item second-price (the additive-valuation VCG)."""

    name = "vcg"

    def outcome_batch(self, V, X=None, Y=None):
        return vcg_batch(V)


class ItemMyersonMechanism(Mechanism):
    """Independent Myerson auction per item with the setting's priors."""

    name = "item-myerson"

    def __init__(self, spec: SettingSpec):
        self.spec = spec
        self._dists = None if spec.contextual else setting_distributions(spec)

    def outcome_batch(self, V, X=None, Y=None):
        if not self.spec.contextual:
            return item_myerson_batch(V, self._dists)
        if X is None or Y is None:
            raise ValueError("contextual priors need X and Y")
        # Conditional prior per pair is U[0, sigmoid(x_i . y_j)]:
        # virtual value 2v - h, inverse (y + h) / 2.
        z = np.einsum("bnd,bmd->bnm", X, Y)
        h = 1.0 / (1.0 + np.exp(-z))
        B, n, m = V.shape
        phi = 2.0 * V - h
        winners = phi.argmax(axis=1)
        best = phi.max(axis=1)
        sold = best > 0.0
        runner = np.sort(phi, axis=1)[:, -2, :] if n > 1 else np.zeros((B, m))
        rows = np.arange(B)[:, None]
        cols = np.arange(m)
        h_win = h[rows, winners, cols]
        prices = np.where(sold, 0.5 * (np.maximum(0.0, runner) + h_win), 0.0)
        allocations = np.zeros_like(V)
        allocations[rows, winners, cols] = np.where(sold, 1.0, 0.0)
        payments = np.zeros((B, n))
        np.add.at(payments, (rows, winners), prices)
        utilities = (allocations * V).sum(axis=2) - payments
        return BatchOutcome(np.full(B, -1), allocations, payments, utilities,
                            np.full((B, n), -1))


class BidDependentReserve(Mechanism):
    """Negative control: an affine maximizer whose empty-allocation boost is
    a fraction of the highest per-bidder bid total, i.e. the menu reads the
    bids. This breaks truthfulness (shading your bid lowers the reserve you
    pay), and the audit must flag it."""

    name = "corrupted-reserve"

    def __init__(self, n: int, m: int, fraction: float = 0.8):
        self.menu = deterministic_menu(n, m)
        self.fraction = fraction
        self.n, self.m = n, m

    def outcome_batch(self, V, X=None, Y=None):
        B = V.shape[0]
        boosts = np.zeros((B, self.menu.size))
        boosts[:, -1] = self.fraction * V.sum(axis=2).max(axis=1)
        return run_auction_batch(V, self.menu.entries, np.ones(self.n), boosts)


def mechanism_from_checkpoint(ckpt: Checkpoint | str) -> MenuNetMechanism:
    from . import training
    if isinstance(ckpt, str):
        ckpt = training.load(ckpt)
    return MenuNetMechanism(model_from_checkpoint(ckpt))


# -- revenue -----------------------------------------------------------------------


def estimate_revenue(mechanism: Mechanism, spec: SettingSpec, samples: int,
                     seed=0, chunk: int = 8192) -> tuple[float, float]:
    """Truthful-bidding revenue over fresh samples: (mean, standard error)."""
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    rng = make_rng(seed)
    totals = np.empty(samples)
    done = 0
    while done < samples:
        count = min(chunk, samples - done)
        vb = sample(spec, count, rng)
        out = mechanism.outcome_batch(vb.V, vb.X, vb.Y)
        totals[done:done + count] = out.payments.sum(axis=1)
        done += count
    stderr = 0.0 if samples == 1 else float(totals.std(ddof=1) / np.sqrt(samples))
    return float(totals.mean()), stderr


# -- truthfulness audits --------------------------------------------------------------


@dataclass(frozen=True)
class AuditResult:
    max_gain: float  # best utility improvement any misreport achieved
    min_truthful_utility: float
    min_payment: float  # over truthful and probe runs
    instances: int
    probes_per_bidder: int
    worst_instance: int = -1
    worst_bidder: int = -1

    @property
    def dsic_ok(self) -> bool:
        return self.max_gain <= DSIC_TOLERANCE

    @property
    def ir_ok(self) -> bool:
        return self.min_truthful_utility >= -IR_TOLERANCE


def _probe_rows(truth_rows: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                probes: int, rng: np.random.Generator) -> np.ndarray:
    """Misreport rows (instances, n, probes, m) for every instance and bidder."""
    inst, n, m = truth_rows.shape
    fixed = [np.clip(0.0 * truth_rows, lo, hi),
             np.clip(0.5 * truth_rows, lo, hi),
             np.clip(2.0 * truth_rows, lo, hi)]
    for j in range(m):
        zeroed = truth_rows.copy()
        zeroed[:, :, j] = lo[j]
        fixed.append(zeroed)
    fixed.append(np.broadcast_to(lo, truth_rows.shape).copy())
    fixed.append(np.broadcast_to(hi, truth_rows.shape).copy())
    fixed_block = np.stack(fixed, axis=2)  # (inst, n, n_fixed, m)
    if probes <= fixed_block.shape[2]:
        return fixed_block[:, :, :probes]
    extra = probes - fixed_block.shape[2]
    random_block = rng.uniform(size=(inst, n, extra, m)) * (hi - lo) + lo
    return np.concatenate([fixed_block, random_block], axis=2)


def audit(mechanism: Mechanism, spec: SettingSpec, instances: int = 1000,
          misreports_per_bidder: int = 100, seed=0) -> AuditResult:
    """Replay misreport probes and measure the best deviation gain.

    Menu-based mechanisms are audited against their fixed per-instance
    parameters (probes only change the bids); other mechanisms are re-run on
    every probe profile.
    """
    rng = make_rng(seed)
    vb = sample(spec, instances, rng)
    n, m = spec.n, spec.m
    truthful = mechanism.outcome_batch(vb.V, vb.X, vb.Y)
    u_truth = truthful.utilities
    min_payment = float(truthful.payments.min())
    lo, hi = spec.bid_domain()
    probe_rows = _probe_rows(vb.V, lo, hi, misreports_per_bidder, rng)
    P = probe_rows.shape[2]

    max_gain = -np.inf
    worst = (-1, -1)

    if mechanism.menu_based:
        menu, weights, boosts = mechanism.params_for_instances(
            instances, n, m, vb.X, vb.Y)
        per_instance_params = np.asarray(menu).ndim == 4
        for t in range(instances):
            profiles = np.repeat(vb.V[t][None], n * P, axis=0)
            arange = np.arange(n * P)
            bidder_of_row = arange // P
            profiles[arange, bidder_of_row] = probe_rows[t].reshape(n * P, m)
            menu_t = menu[t] if per_instance_params else menu
            w_t = weights[t] if per_instance_params else weights
            b_t = boosts[t] if per_instance_params else boosts
            out = run_auction_batch(profiles, menu_t, w_t, b_t)
            min_payment = min(min_payment, float(out.payments.min()))
            true_vals = vb.V[t][bidder_of_row]  # (rows, m)
            u_mis = (out.allocations[arange, bidder_of_row] * true_vals).sum(axis=1) \
                - out.payments[arange, bidder_of_row]
            gains = u_mis - u_truth[t][bidder_of_row]
            best_row = int(gains.argmax())
            if gains[best_row] > max_gain:
                max_gain = float(gains[best_row])
                worst = (t, int(bidder_of_row[best_row]))
    else:
        chunk = max(1, 65536 // max(1, n * P))
        for start in range(0, instances, chunk):
            stop = min(start + chunk, instances)
            block = stop - start
            rows = block * n * P
            profiles = np.repeat(vb.V[start:stop], n * P, axis=0)
            arange = np.arange(rows)
            bidder_of_row = (arange % (n * P)) // P
            instance_of_row = arange // (n * P)
            profiles[arange, bidder_of_row] = \
                probe_rows[start:stop].reshape(rows, m)
            X = None if vb.X is None else np.repeat(vb.X[start:stop], n * P, axis=0)
            Y = None if vb.Y is None else np.repeat(vb.Y[start:stop], n * P, axis=0)
            out = mechanism.outcome_batch(profiles, X, Y)
            min_payment = min(min_payment, float(out.payments.min()))
            true_vals = vb.V[start:stop][instance_of_row, bidder_of_row]
            u_mis = (out.allocations[arange, bidder_of_row] * true_vals).sum(axis=1) \
                - out.payments[arange, bidder_of_row]
            gains = u_mis - u_truth[start:stop][instance_of_row, bidder_of_row]
            best_row = int(gains.argmax())
            if gains[best_row] > max_gain:
                max_gain = float(gains[best_row])
                worst = (start + int(instance_of_row[best_row]),
                         int(bidder_of_row[best_row]))

    return AuditResult(max_gain=float(max_gain),
                       min_truthful_utility=float(u_truth.min()),
                       min_payment=min_payment,
                       instances=instances, probes_per_bidder=P,
                       worst_instance=worst[0], worst_bidder=worst[1])


def audit_dsic(mechanism: Mechanism, spec: SettingSpec, instances: int = 1000,
               misreports_per_bidder: int = 100, seed=0) -> float:
    """Max utility gain any bidder extracts from any probe misreport."""
    return audit(mechanism, spec, instances, misreports_per_bidder, seed).max_gain


def audit_ir(mechanism: Mechanism, spec: SettingSpec, instances: int = 1000,
             seed=0) -> float:
    """Min truthful utility over bidders and instances."""
    rng = make_rng(seed)
    vb = sample(spec, instances, rng)
    out = mechanism.outcome_batch(vb.V, vb.X, vb.Y)
    return float(out.utilities.min())


# -- allocation analysis ---------------------------------------------------------------


def _winning_indices(out: BatchOutcome) -> np.ndarray:
    """Menu indices of every winning allocation: the chosen entry plus the
    per-bidder excluded winners."""
    return np.concatenate([out.winners[:, None], out.excluded_winners], axis=1)


def randomized_ratio(mechanism: Mechanism, spec: SettingSpec, samples: int,
                     seed=0, low: float = 0.01, high: float = 0.99,
                     chunk: int = 8192) -> float:
    """Fraction of winning allocations with any entry inside [low, high]."""
    if not mechanism.menu_based:
        raise ValueError("randomized-allocation analysis needs a menu-based mechanism")
    rng = make_rng(seed)
    randomized = 0
    total = 0
    done = 0
    while done < samples:
        count = min(chunk, samples - done)
        vb = sample(spec, count, rng)
        n, m = spec.n, spec.m
        menu, w, boosts = mechanism.params_for_instances(count, n, m, vb.X, vb.Y)
        out = run_auction_batch(vb.V, menu, w, boosts)
        winning = _winning_indices(out)  # (count, n+1)
        if np.asarray(menu).ndim == 3:
            flags = ((menu >= low) & (menu <= high)).any(axis=(1, 2))  # (s,)
            randomized += int(flags[winning].sum())
        else:
            flags = ((menu >= low) & (menu <= high)).any(axis=(2, 3))  # (count, s)
            randomized += int(np.take_along_axis(flags, winning, axis=1).sum())
        total += winning.size
        done += count
    return randomized / total


def top_winning_allocations(mechanism: Mechanism, spec: SettingSpec, samples: int,
                            k: int = 10, seed=0, chunk: int = 8192):
    """Menu entries ranked by how often they win (as the chosen allocation or
    as an excluded winner), with their boosts. Fixed-menu mechanisms only."""
    if not mechanism.menu_based:
        raise ValueError("winning-allocation analysis needs a menu-based mechanism")
    rng = make_rng(seed)
    counts = None
    menu0 = boosts0 = None
    done = 0
    while done < samples:
        count = min(chunk, samples - done)
        vb = sample(spec, count, rng)
        menu, w, boosts = mechanism.params_for_instances(count, spec.n, spec.m,
                                                         vb.X, vb.Y)
        if np.asarray(menu).ndim != 3:
            raise ValueError("winning-allocation ranking needs a shared menu "
                             "(classic settings)")
        if counts is None:
            counts = np.zeros(menu.shape[0], dtype=np.int64)
            menu0, boosts0 = menu, boosts
        out = run_auction_batch(vb.V, menu, w, boosts)
        # Win rate is per sample: an entry counts once per auction no matter
        # how many of the n+1 winner slots it occupies.
        flags = np.zeros((count, len(counts)), dtype=bool)
        flags[np.arange(count)[:, None], _winning_indices(out)] = True
        counts += flags.sum(axis=0)
        done += count
    if k > len(counts):
        raise ValueError(f"k={k} exceeds menu size {len(counts)}")
    order = np.argsort(-counts)[:k]
    return [{"menu_index": int(i), "allocation": menu0[i], "boost": float(boosts0[i]),
             "win_rate": counts[i] / samples} for i in order]


# -- composite reports ------------------------------------------------------------------


def evaluate_mechanism(mechanism: Mechanism, spec: SettingSpec, samples: int,
                       seed=0, audit_instances: int = 0,
                       misreports_per_bidder: int = 100) -> EvalReport:
    start = time.perf_counter()
    mean, stderr = estimate_revenue(mechanism, spec, samples, seed)
    regret = ir_violations = ratio = None
    if audit_instances:
        result = audit(mechanism, spec, audit_instances, misreports_per_bidder,
                       seed=np.random.SeedSequence([_to_int_seed(seed), 0xD51C]))
        regret = result.max_gain
        ir_violations = 0 if result.ir_ok else 1
    if mechanism.menu_based:
        ratio = randomized_ratio(mechanism, spec, min(samples, 20000), seed)
    optimal = OPTIMAL_REVENUE.get((spec.tag, spec.n, spec.m))
    return EvalReport(
        setting=spec.tag, n=spec.n, m=spec.m, method=mechanism.name,
        samples=samples, seed=_to_int_seed(seed), mean_revenue=mean, stderr=stderr,
        regret=regret, ir_violations=ir_violations, randomized_ratio=ratio,
        optimal_ratio=None if optimal is None else mean / optimal,
        runtime_sec=time.perf_counter() - start)


def _to_int_seed(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return 0


def compare(spec: SettingSpec, samples: int, seed=0,
            model_mechanism: Mechanism | None = None) -> list[EvalReport]:
    """Baselines (and optionally a trained model) on one setting."""
    mechanisms: list[Mechanism] = [VcgMechanism(), ItemMyersonMechanism(spec)]
    if model_mechanism is not None:
        mechanisms.append(model_mechanism)
    return [evaluate_mechanism(mech, spec, samples, seed) for mech in mechanisms]


def out_of_setting_eval(ckpt: Checkpoint | str, sizes: Sequence[tuple[int, int]],
                        samples: int, seed=0) -> list[EvalReport]:
    """Evaluate one trained model across auction sizes without reshaping it."""
    from . import training
    if isinstance(ckpt, str):
        ckpt = training.load(ckpt)
    mech = MenuNetMechanism(model_from_checkpoint(ckpt))
    reports = []
    for n, m in sizes:
        spec = SettingSpec(ckpt.setting.tag, n, m)
        reports.append(evaluate_mechanism(mech, spec, samples, seed))
    return reports
