"""S-INF: scene implicit neural fields for indoor scene synthesis."""
__version__ = "0.1.0"
