"""Synthetic paired cohorts with a tunable genotype-phenotype coupling.

Each patient has a latent state ``z_vec = (z, u_1, ..., u_{m-1})``; ``z`` is
the latent risk. Both modalities are noisy linear images of the same
``z_vec``, mixed as ``rho * signal + (1 - rho) * noise``. Event bins are drawn
from discrete hazards that grow with ``z``.
"""
from dataclasses import dataclass, field

import numpy as np

from ..diffcore import stream
from ..embedders import DEFAULT_GROUP_NAMES, PATCH_DIM, GenomicsGroupSpec
from ..survival import SurvivalRecord
from .cohort import Cohort, Patient


class ConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_patients: int = 200
    k_min: int = 16
    k_max: int = 32
    group_dims: tuple = (12, 10, 8, 16, 6, 10, 8, 10)
    group_names: tuple = DEFAULT_GROUP_NAMES
    coupling: float = 0.9
    noise: float = 1.0
    censoring: float = 0.2
    base_hazards: tuple = (0.2, 0.3, 0.4, 0.5)
    risk_slope: float = 2.0
    latent_dim: int = 8
    month_grid: tuple = (0.0, 12.0, 24.0, 36.0, 60.0)
    seed: int = 0
    mixing_seed: int = None  # seed for the A matrices; defaults to ``seed``
    id_prefix: str = "P"

    def __post_init__(self):
        self.group_dims = tuple(int(d) for d in self.group_dims)
        self.group_names = tuple(self.group_names)
        self.base_hazards = tuple(float(h) for h in self.base_hazards)
        self.month_grid = tuple(float(m) for m in self.month_grid)
        self.validate()

    @property
    def n_groups(self):
        return len(self.group_dims)

    def group_specs(self):
        return [GenomicsGroupSpec(n, d) for n, d in zip(self.group_names, self.group_dims)]

    def validate(self):
        if self.n_patients < 1:
            raise ConfigError(f"n_patients must be >= 1, got {self.n_patients}")
        if len(self.group_names) < self.n_groups:
            raise ConfigError(f"{self.n_groups} group dims but only {len(self.group_names)} names")
        if any(d < 1 for d in self.group_dims):
            raise ConfigError(f"group dims must be >= 1, got {self.group_dims}")
        if not (self.n_groups <= self.k_min <= self.k_max):
            raise ConfigError(f"need N={self.n_groups} <= k_min={self.k_min} <= k_max={self.k_max}")
        if not 0.0 <= self.coupling <= 1.0:
            raise ConfigError(f"coupling must lie in [0, 1], got {self.coupling}")
        if not 0.0 <= self.censoring < 1.0:
            raise ConfigError(f"censoring rate must lie in [0, 1), got {self.censoring}")
        if len(self.base_hazards) != 4 or not all(0.0 < h < 1.0 for h in self.base_hazards):
            raise ConfigError(f"need 4 base hazards in (0, 1), got {self.base_hazards}")
        if self.risk_slope < 0:
            raise ConfigError(f"risk slope must be >= 0, got {self.risk_slope}")
        if self.noise < 0:
            raise ConfigError(f"noise scale must be >= 0, got {self.noise}")
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if len(self.month_grid) != 5 or any(b <= a for a, b in zip(self.month_grid, self.month_grid[1:])):
            raise ConfigError(f"month grid must be 5 ascending values, got {self.month_grid}")


def patient_hazards(z, base_hazards, slope):
    """Per-bin hazards with odds ``h_r / (1 - h_r) * exp(slope z)``, i.e.
    ``sigmoid(logit(h_r) + slope z)``: base hazards at z = 0, always in (0, 1)."""
    h = np.asarray(base_hazards, dtype=float)
    return 1.0 / (1.0 + np.exp(-(np.log(h / (1.0 - h)) + slope * z)))


def generate_synthetic_cohort(cfg):
    cfg.validate()
    mix = stream(cfg.seed if cfg.mixing_seed is None else cfg.mixing_seed, "synth", "mixing")
    m = cfg.latent_dim
    A_img = mix.normal(0.0, 1.0 / np.sqrt(m), size=(PATCH_DIM, m))
    A_gen = [mix.normal(0.0, 1.0 / np.sqrt(m), size=(d, m)) for d in cfg.group_dims]

    rng = stream(cfg.seed, "synth", "patients")
    rho = cfg.coupling
    grid = np.asarray(cfg.month_grid)
    specs = cfg.group_specs()
    patients = []
    width = len(str(cfg.n_patients - 1))
    for i in range(cfg.n_patients):
        z_vec = rng.normal(size=m)
        z = z_vec[0]
        k = int(rng.integers(cfg.k_min, cfg.k_max + 1))
        noise = rng.normal(0.0, cfg.noise, size=(k, PATCH_DIM))
        feats = rho * (A_img @ z_vec)[None, :] + (1.0 - rho) * noise
        # files hold float32; round here so write/load round-trips exactly
        feats = feats.astype(np.float32).astype(np.float64)
        genomics = {}
        for spec, A in zip(specs, A_gen):
            genomics[spec.name] = rho * (A @ z_vec) + (1.0 - rho) * rng.normal(0.0, cfg.noise, size=spec.dim)

        hz = patient_hazards(z, cfg.base_hazards, cfg.risk_slope)
        draws = rng.random(4)
        hits = np.flatnonzero(draws < hz)
        true_bin = int(hits[0]) if len(hits) else 3  # last interval is open-ended
        lo, hi = grid[true_bin], grid[true_bin + 1]
        t_event = 0.5 * (lo + hi) + (hi - lo) * rng.uniform(-0.45, 0.45)
        if rng.random() < cfg.censoring:
            event, os_months = 0, t_event * (1.0 - rng.random())
        else:
            event, os_months = 1, t_event
        pid = f"{cfg.id_prefix}{i:0{width}d}"
        patients.append(Patient(
            pid, feats, genomics, SurvivalRecord(pid, float(os_months), event),
            truth={"z": float(z), "latent": z_vec, "bin": true_bin, "event_time": float(t_event)},
        ))
    return Cohort(patients, specs)
