"""Run configuration: a YAML/JSON key-value file plus command-line overrides."""
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .data.synth import ConfigError, SynthConfig
from .model import MODES, ModelConfig
from .objectives import FUSION_LOSSES


@dataclass
class RunConfig:
    seed: int = 0
    n_groups: int = 8
    heads: int = 4
    abr_hidden: int = 128
    dropout: float = 0.25
    layer_norm: bool = True
    residual: bool = True
    epochs: int = 25
    pretrain_epochs: int = None   # falls back to ``epochs``
    finetune_epochs: int = None   # falls back to ``epochs``
    batch_size: int = 1
    pretrain_lr: float = 1e-4
    finetune_lr: float = 5e-5
    modality: str = "multimodal"
    fraction: float = 1.0
    fusion_loss: str = "mse"
    pretrain: bool = True
    scheme: str = "internal"
    repeats: int = 3
    folds: list = None            # subset of CV folds to run; all when None
    shuffle_labels: bool = False  # negative control: permute finetune labels
    shuffle_seed: int = None      # seed of that permutation; the run seed when None
    data: dict = None             # {dir} or {manifest, features_dir, genomics_dir, group_spec}
    synth: dict = None            # SynthConfig fields, used when ``data`` is absent
    finetune_data: dict = None    # external scheme: the finetuning cohort
    finetune_synth: dict = None
    ablate_fractions: list = field(default_factory=lambda: [1.0, 0.5, 0.25])
    ablate_losses: list = field(default_factory=lambda: ["mse", "cosine"])
    ablate_pretrain: list = field(default_factory=lambda: [True, False])

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.modality not in MODES:
            raise ConfigError(f"modality must be one of {MODES}, got {self.modality!r}")
        if self.fusion_loss not in FUSION_LOSSES:
            raise ConfigError(f"fusion loss must be one of {sorted(FUSION_LOSSES)}, got {self.fusion_loss!r}")
        if self.scheme not in ("internal", "external"):
            raise ConfigError(f"scheme must be internal or external, got {self.scheme!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"fraction must lie in (0, 1], got {self.fraction}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.batch_size < 1 or self.repeats < 1 or self.epochs < 0:
            raise ConfigError("batch_size and repeats must be >= 1, epochs >= 0")
        if 256 % self.heads:
            raise ConfigError(f"{self.heads} heads do not divide the model width 256")
        for f in self.ablate_fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"ablation fraction {f} outside (0, 1]")
        for name in self.ablate_losses:
            if name not in FUSION_LOSSES:
                raise ConfigError(f"unknown ablation loss {name!r}")

    @property
    def n_pretrain_epochs(self):
        return self.epochs if self.pretrain_epochs is None else self.pretrain_epochs

    @property
    def n_finetune_epochs(self):
        return self.epochs if self.finetune_epochs is None else self.finetune_epochs

    def model_config(self):
        return ModelConfig(heads=self.heads, abr_hidden=self.abr_hidden, dropout=self.dropout,
                           layer_norm=self.layer_norm, residual=self.residual)

    def synth_config(self, which="synth"):
        raw = dict(getattr(self, which) or {})
        if which == "finetune_synth":
            # keep ids distinct from the pretraining cohort unless told otherwise
            raw.setdefault("id_prefix", "F")
        return SynthConfig(**raw)

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return RunConfig(**d)


def load_config(path=None, **overrides):
    raw = {}
    if path is not None:
        text = Path(path).read_text()
        raw = yaml.safe_load(text) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a key-value mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
