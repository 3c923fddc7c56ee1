"""Geometry-aware multi-view X-ray detection core.

Fan-beam scanner geometry, multi-view feature pooling into a 3D volume,
anchor clustering, 2D/3D annotation lifting and VOC-style evaluation.
"""

from mxray.boxes import Box2, Box3, convert_threshold_2d_to_3d, iou
from mxray.geometry import ScannerGeometry, ViewGeometry, VoxelGrid

__all__ = [
    "Box2",
    "Box3",
    "ScannerGeometry",
    "ViewGeometry",
    "VoxelGrid",
    "convert_threshold_2d_to_3d",
    "iou",
]

__version__ = "0.1.0"
