"""Frequency-bin Bell tests on joint spectral intensities.

Modules: ``core`` (scenario, labels, data types), ``simulate`` (ideal and
binned joint distributions, synthetic JSIs), ``wrapfit`` (fringe fit,
calibration, wrapping), ``bell`` (CGLMP, optimal states), ``lhv`` (local
polytope LP and Frank-Wolfe), ``stats`` (p-values, bootstrap) and the
``io`` / ``config`` / ``workflows`` / ``cli`` plumbing.
"""

__version__ = "0.1.0"
