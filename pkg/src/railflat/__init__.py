"""Train rescheduling toolkit: grid railway simulator, pairwise conflict
resolution, switch-level observations and Q-learning controllers."""

__version__ = "0.1.0"
