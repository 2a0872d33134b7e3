"""
EIT Monotonicity Package
Finite-element tools for reconstructing the outer shape of complex anisotropic
inclusions from partial-boundary Neumann-to-Dirichlet data
"""

__version__ = "1.0"
