"""Application layer - configuration, plugin catalog and experiment orchestration."""
