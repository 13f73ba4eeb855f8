"""Morphing-attack-detection benchmarking platform.

Subpackages cover the synthetic face corpus, morph generation and
print-scan simulation, reference D-MAD/S-MAD detectors, ISO-style
detection metrics, attempt-enumeration protocols, and the submission
test engine with its HTTP gateway.
"""

__version__ = "0.1.0"
