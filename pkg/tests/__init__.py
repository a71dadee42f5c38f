"""Test suite for the protocol testbed."""
