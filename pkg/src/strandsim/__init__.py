"""Strand-based hair simulation toolkit.

Differentiable strand physics losses, a two-stage neural simulator
(strand autoencoder plus dynamics network), an XPBD reference solver,
procedural grooms and motions, metrics and benchmarks. The heavy
modules import numpy only; the HTTP service and CLI live in
strandsim.service and strandsim.cli.
"""

__version__ = "0.1.0"
