"""Stochastic Darcy-flow surrogate with GLU-Net and uncertainty propagation."""
