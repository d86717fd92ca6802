"""Minimal reverse-mode autodiff, Adam, and a finite-difference checker."""
from . import ops
from .gradcheck import DeterminismError, grad_check
from .module import Dense, LayerNorm, Module
from .optim import Adam, AdamState, adam_step
from .rng import stream
from .tensor import RULES, DimensionError, DomainError, Node, Parameter, Tape, const

__all__ = [
    "ops", "grad_check", "DeterminismError", "Dense", "LayerNorm", "Module", "Adam",
    "AdamState", "adam_step", "stream", "RULES", "DimensionError", "DomainError", "Node",
    "Parameter", "Tape", "const",
]
