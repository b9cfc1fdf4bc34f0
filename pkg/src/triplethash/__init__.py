"""Triplet hashing for image retrieval.

Learns compact binary hash codes from images with a small attention-equipped
convolutional network trained on triplet labels, then indexes and ranks
images by Hamming distance between codes.
"""

__version__ = "0.1.0"
