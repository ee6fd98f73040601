"""Supermodularity-ratio analysis of VCG electricity market auctions."""
from .bids import (Block, BlockMenu, DomainError, PiecewiseLinear, PiecewiseQuadratic, Quadratic,
                   eval_bid)
from .model import (Bidder, BidProfile, Bus, Line, LinearCost, MarketInstance, Network,
                    validate)
from .setfunc import (BidderSet, ObjectiveOracle, RatioConfig, RatioReport, is_supermodular,
                      k_feas, ratio_constraint_generation, ratio_exhaustive,
                      ratio_market_estimate)
from .dispatch import DispatchConfig, DispatchResult, NumericalFailure, make_oracle, solve
from .kernels import BACKEND

__version__ = "0.1.0"
