"""Numerical services: GRM core, estimators, simulation, metrics and the study runner."""
