"""Desk-scale laboratory for measuring and mitigating plasticity loss in deep RL."""

__version__ = "0.1.0"
