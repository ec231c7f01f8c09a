"""IRSA with NOMA: simulation, density evolution and policy optimization."""
