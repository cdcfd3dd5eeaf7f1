from .config import ConfigError, ScenarioConfig, bundled, load_config, parse_config
from .runner import compare_policies, run_scenario, simulate, train_agent, train_command

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "bundled",
    "load_config",
    "parse_config",
    "compare_policies",
    "run_scenario",
    "simulate",
    "train_agent",
    "train_command",
]
