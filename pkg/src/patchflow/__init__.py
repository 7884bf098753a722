"""Congested tumor-growth simulator built on Wasserstein projections."""
