"""Training engine for recurrent spiking networks with e-prop plasticity.

Time-driven reference mode, event-driven mode, and the biologically extended
eprop-plus variant, plus benchmark tasks, a verification surface, and a
scaling harness.
"""

__version__ = "0.1.0"
