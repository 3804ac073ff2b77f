"""varcalc: constrained variational calculus on piecewise-differentiable curves.

Core Layer (numerics, no interface dependency):
    config, errors, expr, numerics, system, curve, transport,
    abnormality, extremal, multipliers, problem, corpus, engine, utils

Interface Layer (consumes Core):
    cli
"""
