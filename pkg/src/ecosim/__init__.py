"""Agent-based ecosystem simulator with reflex, happiness and PPO-trained policy networks."""
from .config import ScenarioConfig
from .scenarios import builtin, load_config
from .world import World, build_world, run, step

__all__ = ["ScenarioConfig", "World", "build_world", "builtin", "load_config", "run", "step"]
__version__ = "0.1.0"
