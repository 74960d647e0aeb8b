"""Selective state-space token and channel mixers with weighted-averaging block wiring, in numpy.

Subpackages are imported lazily by callers; this module only carries metadata.
"""

__version__ = "0.1.0"
