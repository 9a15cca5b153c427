"""Operational surface: dataset generation, training, evaluation, ablations, bench, CLI."""
