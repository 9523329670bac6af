"""Hot loops, each with a numba and a numpy implementation."""

from .auction import auction_numba, auction_numpy, run_auction_kernel
from .exploration import explore, explore_numba, explore_numpy

__all__ = [
    "auction_numba",
    "auction_numpy",
    "run_auction_kernel",
    "explore",
    "explore_numba",
    "explore_numpy",
]
