"""QoS-aware multi-connectivity serving-cluster selection and simulation."""

__version__ = "0.1.0"
