"""Random conductance models with heavy-tailed walls and traps: walks, limits and experiments."""

__version__ = "0.1.0"
