"""Numeric defaults shared by the library and the CLI.

The scanner geometry behind these numbers is illustrative only (see
``geometry.default_geometry``); real machines must supply their own JSON.
"""

from mxray.geometry import ScannerGeometry, VoxelGrid, default_geometry

# feature-map stride of a ResNet-50 cut after its 4th stage
BIN_PX = 16
GRID_DIMS = (96, 96, 96)
# belt window covered by the default grid: 384 image rows at 2 mm/px
BELT_WINDOW_MM = 768.0

ROI_OUT_DIMS = (7, 7, 7)
IOU_2D = 0.5
IOU_3D = 0.374
NMS_IOU = 0.7

KMEANS_K = 10
KMEANS_RESTARTS = 10
KMEANS_MAX_ITERS = 300
SEED = 0

EPSILON_W = 1e-12
RENORMALIZE_PARTIAL = False


def default_grid(geom: ScannerGeometry = None, dims=GRID_DIMS) -> VoxelGrid:
    """Grid spanning the whole tunnel cross-section and the default belt window."""
    geom = geom or default_geometry()
    (x0, y0), (x1, y1) = geom.tunnel_min, geom.tunnel_max
    return VoxelGrid.spanning((x0, y0, 0.0), (x1, y1, BELT_WINDOW_MM), dims)
