"""Longitudinal frequency estimation under local differential privacy.

LOLOHA (longitudinal local hashing) together with the RAPPOR/L-SUE, L-OSUE,
L-GRR and dBitFlipPM baselines, their server-side estimators, closed-form
variance tooling and a seeded experiment harness.
"""

from .core import (
    CountVector,
    GrrParams,
    SeededHash,
    UeParams,
    estimate_pure,
    grr_params,
    grr_perturb,
    hash_eval,
    hash_sample,
    ue_encode,
    ue_params,
    ue_perturb,
)
from .longitudinal import (
    DBitClient,
    LgrrClient,
    LolohaClient,
    PrivacyBudget,
    PrivacyLedger,
    UeLongClient,
    bucketize,
    dbit_init,
    derive_eps_irr,
    lgrr_derive_irr,
    loloha_init,
    losue_derive_irr,
    lsue_derive_irr,
)
from .server import (
    EstimateMatrix,
    LongitudinalParams,
    ReportBatch,
    estimate_longitudinal,
    loloha_estimate,
)

__version__ = "0.1.0"
