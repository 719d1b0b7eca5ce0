"""Household energy management simulation: plant models, rule-based and MPC/GA controllers."""

__version__ = "0.1.0"
