"""Numerical toolkit for local strictly convex solutions of degenerate
k-Hessian equations S_k[u] = K(y): approximate-solution construction,
degenerate-elliptic linearized solves, Nash-Moser iteration, and quantitative
convexity certification."""

__version__ = "0.1.0"
