"""Spectral efficiency of multi-antenna-user massive MIMO with imperfect CSI."""
from ._accel import BACKEND, HAVE_NUMBA
from .channel import draw_channel, exp_correlation
from .estimation import estimate_channels, link_statistics
from .scenario import Scenario, ScenarioParams, SystemConfig, build_scenario, scale_powers
from .se import SEReport, monte_carlo_se, net_sum_se

__all__ = [
    "BACKEND", "HAVE_NUMBA", "Scenario", "ScenarioParams", "SystemConfig", "SEReport",
    "build_scenario", "draw_channel", "estimate_channels", "exp_correlation",
    "link_statistics", "monte_carlo_se", "net_sum_se", "scale_powers",
]
