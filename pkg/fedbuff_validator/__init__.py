"""
FedBuff Validator - a deterministic simulator and analysis toolkit for
buffered asynchronous federated learning.

The toolkit runs the FedBuff client and server algorithms on synthetic
heterogeneous objectives and checks the runs against the non-convex
convergence bound:

- Objectives: quadratic mixture and non-convex logistic families with exact
  smoothness, variance and diversity constants
- Simulator: event-driven and uniform-arrival schedulers with staleness audit
- Baselines: synchronous FedAvg and pure asynchronous FL reference runs
- Analysis: bound evaluation, stepsize schedule, multi-seed aggregation and
  rate fitting
"""

__version__ = "0.1.0"
