"""Pathology-genomics survival modelling: group embedders, transformer
streams, fusion pretraining and discrete-time survival finetuning, on a small
reverse-mode autodiff core."""
__version__ = "0.1.0"
