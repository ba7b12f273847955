"""Fairness-constrained client selection for synchronous federated learning.

Virtual queues track each client's participation deficit, per-client ridge
regression learns exchange times from observed rounds, and an exact solver
picks each round's cohort. Baseline strategies and an experiment harness
live alongside.
"""

__version__ = "0.1.0"
