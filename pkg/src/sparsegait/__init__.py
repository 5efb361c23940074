"""Agile locomotion on sparse footholds: terrains, simulation, rewards,
exploration, curriculum, PPO training and evaluation."""

__version__ = "0.1.0"
