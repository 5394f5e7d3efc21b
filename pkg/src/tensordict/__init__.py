"""Tensor decompositions from data moments: orthogonal 4th-order tensors by
noisy projected SGD, convolutional dictionaries by circulant-constrained ALS
on third cumulants, and sequence embeddings built on the latter.

Submodules: ``tensor``, ``saddle``, ``circulant``, ``cumulant``, ``convals``,
``baseline``, ``embed``, ``benchmark``, ``cli``.
"""

__version__ = "0.1.0"
