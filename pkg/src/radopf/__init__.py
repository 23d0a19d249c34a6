"""AC optimal power flow on radial networks by sequential convex restriction."""

__version__ = "0.1.0"

from .algorithm import (AlgorithmConfig, MeasurementSet, Objective, OPFResult, initial_point,
                        simulate_measurements, solve_opf)
from .baseline import grid_oracle, raster_region, socp_relaxation
from .errors import RadOPFError
from .matpower import import_matpower
from .model import BusRecord, EdgeRecord, NetworkCase, load_case, parse_case, validate
from .restriction import base_points, certify, hyperplanes
from .transform import OperatingPoint, check_original_feasibility, injections

__all__ = [
    "AlgorithmConfig", "MeasurementSet", "Objective", "OPFResult", "initial_point",
    "simulate_measurements", "solve_opf", "grid_oracle", "raster_region", "socp_relaxation",
    "RadOPFError", "import_matpower", "BusRecord", "EdgeRecord", "NetworkCase", "load_case",
    "parse_case", "validate", "base_points", "certify", "hyperplanes", "OperatingPoint",
    "check_original_feasibility", "injections",
]
