"""Monte Carlo verification of no-arbitrage in Brownian-sheet driven bond models."""

__version__ = "0.1.0"

from .grid_noise import (  # noqa: E402
    FieldKind,
    FieldPath,
    GridSpec,
    SheetPath,
    Warp,
    block_rng,
    build_field,
    sample_sheet,
    sample_sheet_on_warped_grid,
)
from .mpr import (  # noqa: E402
    ConditionReport,
    EtaSpec,
    KernelGrid,
    MprSurface,
    check_c2_bound,
    check_drift_identity,
    check_l2_identity,
    evaluate_conditions,
    girsanov_kernel,
    lambda_from_eta,
)
from .measure import PathWeight, Probe, ShiftedField, log_rn_density, shift_field, weighted_sheet_test  # noqa: E402
from .bonds import BondSurface, MarketParams, discounted_surface, risk_neutral_check, simulate_bonds  # noqa: E402
from .verify import Estimate, RefinementStudy, refinement_order, weighted_moments  # noqa: E402
