"""Synthetic data, metrics, experiment orchestration and the command-line tool."""
