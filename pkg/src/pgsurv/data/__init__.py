from .cohort import Cohort, IntegrityError, Patient
from .io import CohortParseError, load_cohort, load_cohort_dir, read_pfm, write_cohort, write_pfm
from .splits import Fold, SplitPlan, make_splits, subsample_finetune
from .synth import ConfigError, SynthConfig, generate_synthetic_cohort

__all__ = [
    "Cohort", "IntegrityError", "Patient", "CohortParseError", "load_cohort", "load_cohort_dir",
    "read_pfm", "write_cohort", "write_pfm", "Fold", "SplitPlan", "make_splits",
    "subsample_finetune", "ConfigError", "SynthConfig", "generate_synthetic_cohort",
]
