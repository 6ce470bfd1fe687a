"""Quantum-walk state engineering driven by an RBF surrogate optimizer.

Modules:

- :mod:`qwrbf.walk` coin, shift, projection and fidelity of the walk simulator
- :mod:`qwrbf.oracle` noisy fidelity measurements and hidden waveplate drift
- :mod:`qwrbf.rbf`, :mod:`qwrbf.optimizer` surrogate model and optimizer
- :mod:`qwrbf.baselines` random search and Powell's method
- :mod:`qwrbf.harness`, :mod:`qwrbf.cli` experiments and command line
"""

__version__ = "0.1.0"
