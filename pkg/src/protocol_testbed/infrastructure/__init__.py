"""Infrastructure layer - trace and result file formats."""
