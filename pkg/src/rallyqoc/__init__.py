"""rallyqoc: random-layer pulse-sequence methods for quantum optimal control.

Modules
-------
qcore         dense linear algebra and quantum primitives
hamiltonians  Ising / Rydberg / molecular control systems
pulses        pulse sequences, propagators, bandwidth interpolation
fom           figures of merit
gradients     analytic gradients and the finite-difference oracle
optimizers    adaptive Nelder-Mead, bounded quasi-Newton, dCRAB driver
analysis      moment gaps, controllability, robustness, scaling
runner / cli  experiment harness and command-line interface
"""

__version__ = "0.1.0"
