"""Joint latent class trees for longitudinal and time-to-event data."""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    LongDataset,
    LtrcDataset,
    VariableRoles,
    first_encountered,
    ingest_csv,
    to_ltrc,
)
from .cox import BaselineHazard, CoxFit, fit_cox, loglik_at, predict_survival  # noqa: F401
