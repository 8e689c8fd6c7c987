"""Simultaneous translation with a learned READ/WRITE agent, in numpy."""

from .actions import READ, WRITE
from .nmt_env import BOS, EOS, UNK, NMTConfig, NMTEnv

__all__ = ["READ", "WRITE", "BOS", "EOS", "UNK", "NMTConfig", "NMTEnv"]
__version__ = "0.1.0"
