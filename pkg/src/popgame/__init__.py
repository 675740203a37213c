"""Population games under evolutionary and payoff dynamics: simulation and stability certificates."""

from .core import (
    PopulationStructure,
    SupplyRate,
    is_nsd_on_tangent,
    sym_eig,
    tangent_basis,
    tangent_projection,
)
from .edm import (
    IpcProtocol,
    SwitchRate,
    nash_gap,
    power_rate,
    smith_rate,
    verify_delta_dissipativity,
)
from .games import (
    AffineDelay,
    BprDelay,
    Box,
    Cone,
    ConvHull,
    GenericGame,
    LinearGame,
    MixedAutonomyGame,
    RoadSplitGame,
    SumEnvelope,
    generic_game,
)
from .pdm import SmoothingPdm, verify_pdm_dissipativity
from .certify import (
    Budget,
    Certificate,
    certify_weighted_contraction,
    check_cone,
    check_convhull,
    check_sum,
    sproc_soundness_check,
)
from .sim import (
    NumericalError,
    Trajectory,
    detect_rest_point,
    integrate_closed_loop,
    integrate_memoryless,
    lyapunov_monitor,
)

__version__ = "0.1.0"

__all__ = [
    "AffineDelay", "BprDelay", "Box", "Budget", "Certificate", "Cone", "ConvHull", "GenericGame",
    "IpcProtocol", "LinearGame", "MixedAutonomyGame", "NumericalError", "PopulationStructure",
    "RoadSplitGame", "SmoothingPdm", "SumEnvelope", "SupplyRate", "SwitchRate", "Trajectory",
    "certify_weighted_contraction", "check_cone", "check_convhull", "check_sum", "detect_rest_point",
    "generic_game", "integrate_closed_loop", "integrate_memoryless", "is_nsd_on_tangent",
    "lyapunov_monitor", "nash_gap", "power_rate", "smith_rate", "sproc_soundness_check", "sym_eig",
    "tangent_basis", "tangent_projection", "verify_delta_dissipativity", "verify_pdm_dissipativity",
]
