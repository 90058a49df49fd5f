"""mvlab: asymptotic mean value formulas for fully nonlinear elliptic operators.

Evaluates the named operators in closed form and as extrema of ball averages
over coefficient-matrix families, measures the o(eps^2) residuals, reproduces
the known failure example for discontinuous operators, and solves Dirichlet
problems by fixed-point iteration of the mean value update.
"""

__version__ = "0.1.0"
