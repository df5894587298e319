"""Spiking compositional neural operators for 1D PDE families."""
