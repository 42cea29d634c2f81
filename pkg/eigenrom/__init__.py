"""
eigenrom - data-driven reduced-basis toolkit for parametric eigenvalue problems.

Offline: P1 finite-element eigensolves at sampled parameters, POD of the
snapshots, one Gaussian-process regressor per eigenvalue and per reduced
coefficient. Online: regressors evaluated at unseen parameters, eigenvectors
reconstructed from the POD basis, 95% bands attached.
"""

__version__ = "1.0.0"

SCHEMA_VERSION = "eigenrom/1"
