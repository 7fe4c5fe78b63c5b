from .config import ConfigError, RunConfig, format_config, parse_config, parse_config_text, write_config
from .montecarlo import MetricSeries, MonteCarloResult, run_monte_carlo, run_single
from .scenarios import ScenarioDefinition, generate_scenario, max_implied_acceleration
from .simulate import simulate_measurements
from .io import write_outputs, write_series_csv

__all__ = [
    "ConfigError",
    "MetricSeries",
    "MonteCarloResult",
    "RunConfig",
    "ScenarioDefinition",
    "format_config",
    "generate_scenario",
    "max_implied_acceleration",
    "parse_config",
    "parse_config_text",
    "run_monte_carlo",
    "run_single",
    "simulate_measurements",
    "write_config",
    "write_outputs",
    "write_series_csv",
]
