"""Command-line orchestration: configs, disorder sweeps, scaling fits, emission."""
