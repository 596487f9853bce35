"""Hierarchical subspace HMM for acoustic unit discovery."""
