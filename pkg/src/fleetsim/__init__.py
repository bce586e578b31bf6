"""fleetsim: a taxi-fleet dispatch simulator and policy library.

The package pairs a deterministic discrete-time fleet simulator with two
proactive dispatch policies: a centralized receding-horizon controller
built on a linear program over predicted supply/demand dynamics, and a
distributed per-vehicle deep-Q policy trained with double Q-learning.
"""

__version__ = "0.1.0"
