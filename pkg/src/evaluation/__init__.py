"""Evaluation diagnostics and static plots."""
