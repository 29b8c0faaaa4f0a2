"""Self-augmented reflectance estimation: Ward BRDF rendering, a small numpy
network engine, and the self-augmented training loop."""

__version__ = "0.1.0"
