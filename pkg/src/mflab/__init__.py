"""Numerical laboratory for mean-field interacting particle systems.

Modules
-------
model         physical model: potentials, parameters, geometry, Gibbs steady state
particle      N-particle SDE ensembles (Euler-Maruyama / BAOAB), observables
partitions    set-partition combinatorics, moment/cumulant/correlation transforms,
              unbiased k-statistics
lgraph        symbolic engine for round/straight-edge interaction diagrams
meanfield     deterministic solvers: nonlinear mean-field PDE, linearized and dual
              flows, measure-derivative flows, relaxation-rate measurement
fluctuations  experiments tying Monte Carlo ensembles to PDE predictions
glauber       resampling derivatives on the initial i.i.d. ensemble
cli           experiment runner
"""

__version__ = "0.1.0"
