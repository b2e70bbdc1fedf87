"""Moving-boundary PDE simulation and backstepping state estimation toolkit.

Modules:
    numerics  -- Bessel functions, tridiagonal solves, quadrature, stepping
    stefan    -- one-phase Stefan plant on an immobilized grid
    observers -- full-state / joint / baseline Stefan observers
    seaice    -- thermodynamic snow + sea-ice model and thickness observer
    battery   -- core-shell single particle model and SoC estimators
    runner    -- scenario configs, presets, CSV/JSON persistence, CLI
"""

__version__ = "0.1.0"
