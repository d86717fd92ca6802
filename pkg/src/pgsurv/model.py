"""Two-stream model: image and genomics branches with separate weights, plus
a risk head sized for the finetuning mode."""
from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import Module, ops, stream
from .embedders import EMBED_DIM, GenomicsGroupEmbedder, ImageGroupEmbedder, partition_patches
from .encoder import ModalityStream
from .objectives import RiskHead

MODES = ("multimodal", "image", "genomics")


@dataclass
class ModelConfig:
    heads: int = 4
    abr_hidden: int = 128
    dropout: float = 0.25
    layer_norm: bool = True
    residual: bool = True

    def to_dict(self):
        return asdict(self)


class ImageBranch(Module):
    def __init__(self, cfg, rng):
        self.groups = ImageGroupEmbedder(rng, hidden=cfg.abr_hidden)
        self.encoder = ModalityStream(rng, heads=cfg.heads, pool_hidden=cfg.abr_hidden,
                                      layer_norm=cfg.layer_norm, residual=cfg.residual)

    def __call__(self, features, partition):
        return self.encoder(self.groups(features, partition))


class GenomicsBranch(Module):
    def __init__(self, specs, cfg, rng):
        self.groups = GenomicsGroupEmbedder(specs, rng)
        self.encoder = ModalityStream(rng, heads=cfg.heads, pool_hidden=cfg.abr_hidden,
                                      layer_norm=cfg.layer_norm, residual=cfg.residual)

    def __call__(self, genomics, dropout=0.0, training=False, rng=None):
        return self.encoder(self.groups(genomics, dropout, training, rng))


def head_width(mode):
    if mode not in MODES:
        raise ValueError(f"unknown modality mode {mode!r}; expected one of {MODES}")
    return 2 * EMBED_DIM if mode == "multimodal" else EMBED_DIM


def branch_prefixes(mode):
    """Parameter-name prefixes trained in a finetuning mode."""
    return {"multimodal": ("image.", "genomics.", "head."),
            "image": ("image.", "head."),
            "genomics": ("genomics.", "head.")}[mode]


class PathGenomicModel(Module):
    def __init__(self, group_specs, cfg=None, seed=0):
        self.cfg = cfg or ModelConfig()
        self.seed = seed
        self.group_specs = list(group_specs)
        self.image = ImageBranch(self.cfg, stream(seed, "init", "image"))
        self.genomics = GenomicsBranch(self.group_specs, self.cfg, stream(seed, "init", "genomics"))
        self.head = None
        self.mode = None

    def set_head(self, mode, seed=None):
        self.mode = mode
        self.head = RiskHead(head_width(mode), stream(self.seed if seed is None else seed, "init", "head", mode))
        return self.head

    def named_parameters(self, prefix=""):
        for name in ("image", "genomics", "head"):
            value = getattr(self, name)
            if value is not None:
                yield from value.named_parameters(f"{prefix}{name}.")

    def trainable(self, mode):
        keep = branch_prefixes(mode)
        return [p for name, p in self.named_parameters() if name.startswith(keep)]

    # forward helpers ------------------------------------------------------

    def embed_image(self, patient, rng):
        groups = partition_patches(patient.features.shape[0], len(self.group_specs), rng)
        return self.image(patient.features, groups)

    def embed_genomics(self, patient, training=False, rng=None):
        return self.genomics(patient.genomics, self.cfg.dropout, training, rng)

    def embed(self, patient, mode, partition_rng, training=False, dropout_rng=None):
        if mode == "image":
            return self.embed_image(patient, partition_rng)
        if mode == "genomics":
            return self.embed_genomics(patient, training, dropout_rng)
        return ops.concat([self.embed_image(patient, partition_rng),
                           self.embed_genomics(patient, training, dropout_rng)], axis=0)


def eval_partition_rng(seed, patient_id):
    """Fixed per-patient stream so evaluation partitions never change."""
    return stream(seed, "eval-partition", patient_id)


def embeddings(model, cohort, ids, seed):
    """Eval-mode (image, genomics) patient embeddings, each (len(ids), 256)."""
    img, gen = [], []
    for pid in ids:
        p = cohort[pid]
        img.append(model.embed_image(p, eval_partition_rng(seed, pid)).value)
        gen.append(model.embed_genomics(p).value)
    return np.stack(img), np.stack(gen)


def predict_hazards(model, cohort, ids, seed):
    out = []
    for pid in ids:
        fused = model.embed(cohort[pid], model.mode, eval_partition_rng(seed, pid))
        out.append(model.head(fused).value.reshape(-1))
    return np.stack(out)
