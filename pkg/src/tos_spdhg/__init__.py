"""Stochastic primal-dual three-operator splitting."""
