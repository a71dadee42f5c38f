"""Domain layer - simulation, specifications, testers and the fuzzer."""
