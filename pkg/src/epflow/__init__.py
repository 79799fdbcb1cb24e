"""Numerical laboratory for expanding affine Euler-Poisson flows."""
