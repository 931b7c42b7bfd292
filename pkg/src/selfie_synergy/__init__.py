"""
Selfie Synergy - synergy-constrained CNN training for subtle image classification
"""

__version__ = "0.1.0"
