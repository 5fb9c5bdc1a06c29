"""hmk: certified harmonic-measure computations on dyadic polygons."""

__version__ = "0.1.0"
