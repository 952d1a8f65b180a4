"""ddrsplat: dual dynamic range Gaussian splatting.

Trains a 3D Gaussian point-cloud scene from multi-exposure LDR images and
renders HDR novel views plus LDR views at arbitrary exposure times.
"""

from .scene import Camera, DdrGaussian, DdrScene, GradientSet, build_covariance
from .tonemap import ChannelMlp, ToneMapper
from .rasterizer import (
    DynamicRange,
    ProjectedGaussian,
    RenderedImage,
    gaussian_density,
    project_gaussian,
    rasterize_dual,
    rasterize_dual_backward,
)

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "ChannelMlp",
    "DdrGaussian",
    "DdrScene",
    "DynamicRange",
    "GradientSet",
    "ProjectedGaussian",
    "RenderedImage",
    "ToneMapper",
    "build_covariance",
    "gaussian_density",
    "project_gaussian",
    "rasterize_dual",
    "rasterize_dual_backward",
    "__version__",
]
