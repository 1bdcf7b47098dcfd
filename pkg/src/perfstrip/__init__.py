"""Floquet-Bloch spectra of a strip perforated by a periodic string of small holes.

Modules, bottom up: ``geometry`` (holes, cells, strips), ``meshgen``
(periodic triangulations), ``fem`` (P1 assembly and eigensolvers),
``limit_model`` (closed-form limit curves and their crossings),
``cell_constants`` (boundary-layer correctors), ``asymptotics`` (first-order
formulas), ``band_sweep`` (dispersion sweeps, bands, gaps, comparisons) and
``cli``.
"""
__version__ = "0.1.0"
