"""Texture synthesis from one exemplar by successive subspace embedding and generation.

Patches cropped from one exemplar are pushed through a chain of
channel-wise Saab transforms down to a compact core subspace, a
cluster-wise PCA/ICA/inverse-CDF model is fitted there, and new patches
are drawn by sampling the core model and running the inverse transforms.
Image quilting stitches generated patches into larger textures.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    FitError,
    ModelFormatError,
    ModelQualityError,
    NitesError,
)
