"""Experiment runner: validated configs, run directories, CSV/SVG artifacts."""
