"""
flora
=====

Zero-shot skeleton action recognition: semantic attunement, a dual VAE with
geometric-consistency alignment, and a noise-free flow-matching classifier
scored by velocity error.
"""

__version__ = "0.1.0"
