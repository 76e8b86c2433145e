"""fairaudit: privacy-preserving, verifiable fairness auditing for simulated federations."""

__version__ = "0.1.0"
