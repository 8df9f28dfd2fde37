"""Global-correspondence garment warping and try-on at desk scale."""

__version__ = "0.1.0"

from .warping import FlowField, bilinear_warp, scatter_pseudo_gt, upsample_flow

__all__ = [
    "FlowField",
    "bilinear_warp",
    "scatter_pseudo_gt",
    "upsample_flow",
    "__version__",
]
