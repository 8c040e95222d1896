"""Color-wise attention network (CWAN) for low-light image enhancement.

Lightness is enhanced by a memory-block network, color (CIE a*b*) by a
forward-block network guided by color-frequency attention maps.  The
numerical engine is plain numpy with compiled im2col/col2im kernels.
"""

__version__ = "0.1.0"

from .colorspace import lab_to_rgb, rgb_to_lab
from .kernels import BACKEND

__all__ = ["BACKEND", "lab_to_rgb", "rgb_to_lab", "__version__"]
