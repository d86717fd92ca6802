"""Group-wise embeddings for both modalities.

Image side: patch features are split at random into N groups, each group is
pooled by gated attention (tanh/sigmoid gating, softmax over the group) and
then projected 1024 -> 256. Genomics side: each functional gene group has its
own two-layer self-normalising net.
"""
from dataclasses import dataclass

import numpy as np

from .diffcore import Dense, Module, Parameter, ops
from .diffcore.module import uniform_init

EMBED_DIM = 256
PATCH_DIM = 1024

DEFAULT_GROUP_NAMES = (
    "transcription_factors",
    "tumor_suppression",
    "cytokines_growth_factors",
    "cell_differentiation_markers",
    "homeodomain_proteins",
    "translocated_cancer_genes",
    "protein_kinases",
    "other",
)


class InsufficientPatchesError(ValueError):
    pass


@dataclass(frozen=True)
class GenomicsGroupSpec:
    name: str
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"group {self.name!r} needs dim >= 1, got {self.dim}")


def validate_group_specs(specs):
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate genomics group names in {names}")
    return list(specs)


def partition_patches(n_patches, n_groups, rng):
    """Balanced random split of ``range(n_patches)`` into ``n_groups`` sets.

    Group sizes differ by at most one, so no group is ever empty.
    """
    if n_patches < n_groups:
        raise InsufficientPatchesError(
            f"cannot split K={n_patches} patches into N={n_groups} non-empty groups")
    perm = rng.permutation(n_patches)
    return [np.sort(chunk) for chunk in np.array_split(perm, n_groups)]


def group_mask(groups, n_patches):
    mask = np.zeros((len(groups), n_patches), dtype=bool)
    for n, idx in enumerate(groups):
        mask[n, idx] = True
    return mask


class GatedAttention(Module):
    """Gated attention scorer: ``w^T (tanh(V1 h) * sigm(V2 h))`` per row.

    ``V1``/``V2`` are stored transposed (d_in x hidden) so rows can be scored
    with one matmul.
    """

    def __init__(self, d_in, hidden, rng):
        self.V1 = Parameter(uniform_init(rng, d_in, (d_in, hidden)))
        self.V2 = Parameter(uniform_init(rng, d_in, (d_in, hidden)))
        self.w = Parameter(uniform_init(rng, hidden, (hidden, 1)))

    def scores(self, H):
        gate = ops.mul(ops.tanh(ops.matmul(H, self.V1)), ops.sigmoid(ops.matmul(H, self.V2)))
        return ops.matmul(gate, self.w)  # (rows, 1)

    def weights(self, H, mask=None):
        """Pooling weights. Without ``mask``: a (1, rows) simplex. With an
        (N, rows) boolean mask: one simplex per mask row."""
        s = ops.reshape(self.scores(H), (1, -1))
        if mask is None:
            return ops.softmax(s, axis=-1)
        logits = ops.add(np.zeros(mask.shape), s)
        return ops.softmax(logits, axis=-1, mask=mask)

    def pool(self, H, mask=None):
        return ops.matmul(self.weights(H, mask), H)


class ImageGroupEmbedder(Module):
    def __init__(self, rng, hidden=128, d_in=PATCH_DIM, d_out=EMBED_DIM):
        self.abr = GatedAttention(d_in, hidden, rng)
        self.proj = Dense(d_in, d_out, rng)

    def __call__(self, features, groups):
        """(K, 1024) patch features + N index sets -> (N, 256)."""
        mask = group_mask(groups, features.shape[0])
        pooled = self.abr.pool(features, mask)
        return self.proj(pooled)


class SNN(Module):
    """Two dense layers with SeLU, alpha dropout in between."""

    def __init__(self, d_in, rng, d_hidden=EMBED_DIM, d_out=EMBED_DIM):
        self.fc1 = Dense(d_in, d_hidden, rng)
        self.fc2 = Dense(d_hidden, d_out, rng)

    def __call__(self, x, dropout=0.0, training=False, rng=None):
        h = ops.selu(self.fc1(x))
        h = ops.alpha_dropout(h, dropout, training, rng)
        return ops.selu(self.fc2(h))


class GenomicsGroupEmbedder(Module):
    def __init__(self, specs, rng):
        self.specs = validate_group_specs(specs)
        self.nets = {s.name: SNN(s.dim, rng) for s in self.specs}

    def __call__(self, genomics, dropout=0.0, training=False, rng=None):
        """Mapping group name -> raw vector, to (N, 256) in spec order."""
        rows = []
        for spec in self.specs:
            raw = np.asarray(genomics[spec.name], dtype=np.float64)
            if raw.shape != (spec.dim,):
                raise ValueError(
                    f"genomics group {spec.name!r}: expected {spec.dim} values, got {raw.shape}")
            rows.append(self.nets[spec.name](raw.reshape(1, -1), dropout, training, rng))
        return ops.concat(rows, axis=0)


# single-group helpers, mostly for inspection and tests

def abr_weights(group, attn):
    """Attention weights (k_n,) over the rows of one patch group."""
    return ops.reshape(attn.weights(group), (-1,))


def abr_pool(group, attn):
    return ops.reshape(attn.pool(group), (-1,))


def embed_image_group(group, embedder):
    return ops.reshape(embedder.proj(embedder.abr.pool(group)), (-1,))


def embed_genomics_group(raw, name, embedder, dropout=0.0, training=False, rng=None):
    spec = next((s for s in embedder.specs if s.name == name), None)
    if spec is None:
        raise KeyError(f"unknown genomics group {name!r}")
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (spec.dim,):
        raise ValueError(f"genomics group {name!r}: expected {spec.dim} values, got {raw.shape}")
    out = embedder.nets[name](raw.reshape(1, -1), dropout, training, rng)
    return ops.reshape(out, (-1,))
