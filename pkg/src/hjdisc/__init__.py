"""Discounted Hamilton-Jacobi equations on the circle."""
