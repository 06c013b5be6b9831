"""Affine maximizer auctions with learned allocation menus.

Subpackages:
  autodiff    float64 tensors with reverse-mode differentiation
  nn          linear/attention/transformer building blocks
  ama         the mechanism: hard winner determination, payments, soft relaxation
  menunet     the permutation-equivariant parameter network
  settings    seeded valuation samplers (settings A-F)
  baselines   VCG, per-item Myerson, directly-parameterized lottery mechanism
  training    Adam loop, learning-rate schedule, checkpoints
  evaluation  revenue estimates, DSIC/IR audits, allocation analysis, reports
"""

from . import ama, autodiff, baselines, evaluation, menunet, nn, settings, training
from .ama import (AllocationMenu, AmaParameters, AuctionOutcome, affine_welfare,
                  deterministic_menu, run_auction, run_auction_batch,
                  soft_allocation, soft_revenue, winner_determination)
from .autodiff import (Graph, Tensor, finite_difference_check, forward_op,
                       softmax_stable)
from .evaluation import (AmaMechanism, BidDependentReserve, EvalReport,
                         ItemMyersonMechanism, MenuNetMechanism, VcgMechanism,
                         audit, audit_dsic, audit_ir, compare, estimate_revenue,
                         out_of_setting_eval, randomized_ratio,
                         top_winning_allocations)
from .menunet import MenuNet, ModelConfig, config_for_setting
from .settings import SettingSpec, ValuationBatch, sample
from .training import Checkpoint, TrainConfig, fit, lr_schedule

__version__ = "0.1.0"
