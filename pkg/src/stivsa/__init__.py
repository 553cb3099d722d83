"""Sensitivity-based Thevenin index screening of N-1 branch outages."""
from .case_model import (BusKind, CaseFormatError, NetworkCase, build_admittance, bundled_case,
                         check_connectivity, load_case, parse_case, scale_load, serialize_case)
from .contingency import EstimatedState, estimate_post_contingency, injection_change_vector, k_factor
from .engine import ScreeningConfig, StiRecord, StiReport, average_relative_error, benchmark, screen
from .power_flow import OperatingPoint, PfOptions, PowerFlowDiverged, branch_flow, solve_power_flow
from .thevenin_index import StressDirection, solve_sensitivities, sti

__version__ = "0.1.0"
