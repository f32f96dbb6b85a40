"""hfw: a desk-scale photorealistic style transfer pipeline.

The package builds a small VGG-style autoencoder whose pooling stages carry
high-frequency information around the bottleneck (residual or wavelet skips),
trains the decoder blockwise against frozen encoder activations, and stylizes
by whitening/coloring bottleneck and intermediate features coarse to fine.

Tensors throughout are dense numpy arrays laid out (batch, channel, height,
width), float64 by default with float32 selectable per model.

Set HFW_THREADS to cap BLAS threading; it must take effect before numpy
first loads, which is why the translation lives here at the package root.
"""

import os as _os

if "HFW_THREADS" in _os.environ:
    for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["HFW_THREADS"])

__version__ = "0.1.0"

from .autodiff import Tape, Var, backward
from .ops import ConvParams

__all__ = ["Tape", "Var", "backward", "ConvParams", "__version__"]
