from dataclasses import dataclass, field

import numpy as np

from ..embedders import PATCH_DIM, GenomicsGroupSpec, validate_group_specs
from ..survival import SurvivalRecord


class IntegrityError(ValueError):
    pass


@dataclass
class Patient:
    patient_id: str
    features: np.ndarray          # (K, 1024) float64
    genomics: dict                # group name -> (d_g,) float64
    survival: SurvivalRecord
    truth: dict = field(default=None, compare=False, repr=False)  # synthetic ground truth only

    @property
    def event(self):
        return self.survival.event

    @property
    def os_months(self):
        return self.survival.os_months


@dataclass
class Cohort:
    patients: list
    group_specs: list
    dropped: list = field(default_factory=list, compare=False)  # (id, reason) pairs from loading
    modalities: tuple = ("image", "genomics")

    def __post_init__(self):
        self.group_specs = validate_group_specs(
            [s if isinstance(s, GenomicsGroupSpec) else GenomicsGroupSpec(*s) for s in self.group_specs])
        ids = [p.patient_id for p in self.patients]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise IntegrityError(f"duplicate patient ids: {dup}")
        self.modalities = tuple(m for m in ("image", "genomics") if m in self.modalities)
        has_image = "image" in self.modalities
        has_genomics = "genomics" in self.modalities
        n = len(self.group_specs)
        for p in self.patients:
            if has_image:
                self._check_features(p, n)
            if has_genomics:
                for s in self.group_specs:
                    v = p.genomics.get(s.name)
                    if v is None or np.shape(v) != (s.dim,):
                        raise IntegrityError(f"{p.patient_id}: genomics group {s.name!r} missing or not length {s.dim}")
        self._index = {p.patient_id: p for p in self.patients}

    @staticmethod
    def _check_features(p, n):
        f = p.features
        if f is None or f.ndim != 2 or f.shape[1] != PATCH_DIM:
            shape = None if f is None else f.shape
            raise IntegrityError(f"{p.patient_id}: patch features must be K x {PATCH_DIM}, got {shape}")
        if f.shape[0] < n:
            raise IntegrityError(f"{p.patient_id}: K={f.shape[0]} patches < N={n} groups")
        if not np.all(np.isfinite(f)):
            raise IntegrityError(f"{p.patient_id}: non-finite patch features")

    def __len__(self):
        return len(self.patients)

    def __getitem__(self, patient_id):
        return self._index[patient_id]

    @property
    def ids(self):
        return [p.patient_id for p in self.patients]

    def records(self, ids=None):
        ids = self.ids if ids is None else ids
        return [self._index[i].survival for i in ids]

    def subset(self, ids):
        return Cohort([self._index[i] for i in ids], list(self.group_specs), modalities=self.modalities)
