"""Permutation-equivariant network mapping public bidder/item representations
to mechanism parameters (allocation menu, bidder weights, boosts).

The forward pass never sees bids, so any mechanism it induces inherits the
truthfulness of the affine maximizer family. The layers are all equivariant
in the bidder and item axes (position-wise maps, row/column attention, mean
and sum pooling), so permuting bidders/items permutes the induced mechanism
accordingly, and no parameter shape depends on the auction size.

Pipeline per instance:
  1. append a dummy bidder (all-ones representation) that absorbs the
     unallocated share of every item;
  2. build the pairwise tensor E[i, j] = [x_i ; y_j] and lift it with two
     1x1 convolutions;
  3. run stacked interaction modules: per-bidder transformer across items,
     per-item transformer across bidders, a global mean feature, then two
     1x1 convolutions (the final module widens to 2s+1 channels);
  4. split the output into menu logits (s), weight logits (1) and boost
     logits (s); softmax menu columns over bidders and drop the dummy row,
     sigmoid the per-bidder mean for weights, and feed the summed boost
     logits through a two-layer MLP.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .ama import AmaParameters, TensorParams
from .autodiff import (Tensor, broadcast_to, concat, invariant_sum, reshape,
                       sigmoid, softmax, transpose)
from .settings import make_rng


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; sizes follow the small-auction defaults."""

    d_x: int
    d_y: int
    menu_size: int
    menu_temperature: float
    d: int = 64  # latent width of each bidder-item pair
    d_hidden: int = 64  # transformer width
    heads: int = 4
    interaction_modules: int = 3
    embedding_dim: int = 16  # ID embedding width for classic auctions
    bidder_ids: int = 0  # >0 enables learned ID embeddings
    item_ids: int = 0
    conv_hidden: int = 64  # first 1x1 convolution output channels
    init_std: float = 0.02  # truncated-normal scale for linear weights
    boost_init_scale: float = 1.0  # extra shrink on the boost MLP output layer

    def __post_init__(self):
        if self.menu_size < 1:
            raise ValueError("menu_size must be >= 1")
        if not self.menu_temperature > 0:
            raise ValueError("menu_temperature must be positive")
        if self.d_hidden % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d_hidden ({self.d_hidden})")
        if self.d != self.d_hidden:
            raise ValueError("residual interaction modules need d == d_hidden")
        if (self.bidder_ids > 0) != (self.item_ids > 0):
            raise ValueError("classic auctions need both bidder and item ID counts")
        if self.bidder_ids > 0 and (self.d_x != self.embedding_dim or
                                    self.d_y != self.embedding_dim):
            raise ValueError("with ID embeddings, d_x and d_y must equal embedding_dim")

    @property
    def classic(self) -> bool:
        return self.bidder_ids > 0


def config_for_setting(spec, menu_size: int, menu_temperature: float,
                       **overrides) -> ModelConfig:
    """ModelConfig matching a sampling setting (context dims or ID tables)."""
    if spec.contextual:
        base = ModelConfig(d_x=spec.d_x, d_y=spec.d_y, menu_size=menu_size,
                           menu_temperature=menu_temperature)
    else:
        base = ModelConfig(d_x=16, d_y=16, menu_size=menu_size,
                           menu_temperature=menu_temperature,
                           bidder_ids=spec.n, item_ids=spec.m)
    return replace(base, **overrides) if overrides else base


class InteractionModule(nn.Module):
    """Row/column transformers plus a global mean, fused by 1x1 convolutions."""

    def __init__(self, config: ModelConfig, d_out: int, rng: np.random.Generator):
        d, d_h = config.d, config.d_hidden
        std = config.init_std
        self.row = nn.TransformerBlock(d, d_h, config.heads, rng, std)
        self.col = nn.TransformerBlock(d, d_h, config.heads, rng, std)
        self.convs = nn.ConvPair(2 * d_h + d, config.conv_hidden, d_out, rng, std)

    def __call__(self, L: Tensor) -> Tensor:
        B, P, M, d = L.shape
        rows = self.row(reshape(L, (B * P, M, d)))
        rows = reshape(rows, (B, P, M, rows.shape[-1]))
        cols = reshape(transpose(L, (0, 2, 1, 3)), (B * M, P, d))
        cols = self.col(cols)
        cols = transpose(reshape(cols, (B, M, P, cols.shape[-1])), (0, 2, 1, 3))
        pooled = L.mean(axis=(1, 2), keepdims=True)
        pooled = broadcast_to(pooled, (B, P, M, d))
        return self.convs(concat([rows, cols, pooled], axis=-1))


class MenuNet(nn.Module):
    """The parameter network; one instance serves any auction size."""

    def __init__(self, config: ModelConfig, seed=0):
        rng = make_rng(seed)
        self.config = config
        if config.classic:
            self.bidder_embeddings = Tensor(
                nn.truncated_normal(rng, (config.bidder_ids, config.embedding_dim), std=1.0),
                requires_grad=True)
            self.item_embeddings = Tensor(
                nn.truncated_normal(rng, (config.item_ids, config.embedding_dim), std=1.0),
                requires_grad=True)
        self.input_convs = nn.ConvPair(config.d_x + config.d_y, config.conv_hidden,
                                       config.d, rng, config.init_std)
        s = config.menu_size
        widths = [config.d] * (config.interaction_modules - 1) + [2 * s + 1]
        self.modules = [InteractionModule(config, w, rng) for w in widths]
        self.boost_mlp = nn.MLP(s, s, s, rng, config.init_std)
        # Boosts compete with bid welfare in the argmax; a large initial
        # spread lets one entry dominate every auction, which zeroes both
        # payments and gradients. Shrinking the output layer keeps the
        # initial boosts comparable to the welfare scale.
        self.boost_mlp.second.weight.data *= config.boost_init_scale

    # -- ID embedding store (classic auctions) --------------------------------

    def bidder_rows(self, n: int) -> np.ndarray:
        return self._embedding_slice(self.bidder_embeddings, n, "bidder").data

    def item_rows(self, m: int) -> np.ndarray:
        return self._embedding_slice(self.item_embeddings, m, "item").data

    def _embedding_slice(self, table: Tensor, count: int, kind: str) -> Tensor:
        if not self.config.classic:
            raise ValueError("model has no ID embeddings (contextual configuration)")
        if count > table.shape[0]:
            raise KeyError(
                f"unknown {kind} ID: model has embeddings for {table.shape[0]} "
                f"{kind}s, requested {count}")
        return table[:count]

    # -- encoder ----------------------------------------------------------------

    def encode(self, X, Y) -> Tensor:
        """Joint representation J of shape (batch, n+1, m, 2s+1)."""
        X = X if isinstance(X, Tensor) else Tensor(np.asarray(X, dtype=np.float64))
        Y = Y if isinstance(Y, Tensor) else Tensor(np.asarray(Y, dtype=np.float64))
        if X.ndim == 2:
            X = X.reshape(1, *X.shape)
        if Y.ndim == 2:
            Y = Y.reshape(1, *Y.shape)
        B, n, d_x = X.shape
        _, m, d_y = Y.shape
        if n == 0 or m == 0:
            raise ValueError("need at least one bidder and one item")
        if d_x != self.config.d_x or d_y != self.config.d_y:
            raise ValueError(
                f"representation widths ({d_x}, {d_y}) do not match config "
                f"({self.config.d_x}, {self.config.d_y})")
        dummy = Tensor(np.ones((B, 1, d_x)))
        X_full = concat([X, dummy], axis=1)  # (B, n+1, d_x)
        E = concat([
            broadcast_to(X_full.reshape(B, n + 1, 1, d_x), (B, n + 1, m, d_x)),
            broadcast_to(Y.reshape(B, 1, m, d_y), (B, n + 1, m, d_y)),
        ], axis=-1)
        L = self.input_convs(E)
        for module in self.modules:
            L = module(L)
        return L

    # -- heads -------------------------------------------------------------------

    def boosts_from_logits(self, J_lambda: Tensor) -> Tensor:
        """Boost vector from (batch, n+1, m, s) logits; sum pooling over all
        positions makes it invariant to bidder/item permutations (bitwise:
        the addends are put in canonical order first)."""
        B, n_plus, m, s = J_lambda.shape
        flat = reshape(J_lambda, (B, n_plus * m, s))
        return self.boost_mlp(invariant_sum(flat, axis=1))

    # -- forward -----------------------------------------------------------------

    def forward_tensors(self, X, Y) -> TensorParams:
        """Graph-connected parameters for a batch of representations.

        Accepts (n, d_x)/(m, d_y) for a single instance (returns unbatched
        parameters) or (B, n, d_x)/(B, m, d_y) for a batch.
        """
        x_ndim = X.ndim if isinstance(X, Tensor) else np.asarray(X).ndim
        single = x_ndim == 2
        J = self.encode(X, Y)
        B, n_plus, m, _ = J.shape
        n = n_plus - 1
        s = self.config.menu_size
        menu = menu_from_logits(J[:, :, :, :s], self.config.menu_temperature, n)
        weights = weights_from_logits(J[:, :, :, s], n)
        boosts = self.boosts_from_logits(J[:, :, :, s + 1:])
        if single:
            return TensorParams(menu[0], weights[0], boosts[0])
        return TensorParams(menu, weights, boosts)

    def forward_classic_tensors(self, n: int, m: int) -> TensorParams:
        """Parameters from the learned ID embeddings (shared by all samples)."""
        X = self._embedding_slice(self.bidder_embeddings, n, "bidder")
        Y = self._embedding_slice(self.item_embeddings, m, "item")
        params = self.forward_tensors(X.reshape(1, n, X.shape[-1]),
                                      Y.reshape(1, m, Y.shape[-1]))
        return TensorParams(params.menu[0], params.weights[0], params.boosts[0])

    def forward(self, X, Y) -> AmaParameters:
        """Hard mechanism parameters for one instance (no graph attached)."""
        return self.forward_tensors(X, Y).detach()

    def forward_classic(self, n: int, m: int) -> AmaParameters:
        return self.forward_classic_tensors(n, m).detach()


def menu_from_logits(J_menu: Tensor, tau: float, n: int) -> Tensor:
    """Normalize menu logits (batch, n+1, m, s) into menu entries (batch, s, n, m).

    Each item column is a softmax over the n+1 bidders (temperature ``tau``);
    the dummy bidder's share is dropped, so real-bidder mass per item is at
    most one by construction.
    """
    soft = softmax(J_menu, temperature=tau, axis=1)
    return transpose(soft[:, :n], (0, 3, 1, 2))


def weights_from_logits(J_w: Tensor, n: int) -> Tensor:
    """Bidder weights in (0, 1): sigmoid of the per-bidder mean logit.

    ``J_w`` is (batch, n+1, m); the dummy row is ignored.
    """
    return sigmoid(J_w[:, :n].mean(axis=2))


def encode(X, Y, model: MenuNet) -> Tensor:
    return model.encode(X, Y)


def forward(X, Y, model: MenuNet) -> AmaParameters:
    return model.forward(X, Y)
