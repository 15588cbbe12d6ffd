"""Simplified DICE optimization with equation marginals, SCC and SMAC."""
