"""Protocol testbed - conformance testing of protocol implementations in a deterministic simulated network."""

__version__ = "0.1.0"
