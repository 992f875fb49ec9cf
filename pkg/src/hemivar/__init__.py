"""Fixed-point solver for elliptic variational-hemivariational inequalities.

Modules: ``nonsmooth`` (compliance law, projections, prox), ``solver``
(outer fixed point, inner proximal gradient), ``fem`` and ``contact``
(P1 frictional contact model), ``convergence`` (continuity, Mosco and
hypothesis audits), ``control`` (grid-search optimal control) and ``cli``.
"""
__version__ = "0.1.0"
