"""Model-data-independent control of acyclic multi-class queuing networks."""

__version__ = "0.1.0"
