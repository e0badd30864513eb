"""View-aligned composition: embed 3D models into 2D backgrounds.

The public surface follows the scikit-learn estimator idiom: train the
texture stage and the view aligner with ``fit``, compose images with
``transform``.  Lower-level building blocks (mesh handling, depth
rendering, latent codes, metrics) are importable from their submodules.
"""

from .codes import (
    EncodedView,
    StyleCode,
    ViewCode,
    angular_distance,
    broadcast_code,
    decode_view,
    encode_view,
    wrap_angle,
)
from .mesh3d import (
    CameraModel,
    TriangleMesh,
    load_obj,
    normalize_mesh,
    procedural_car_mesh,
    rotation_from_view,
    save_obj,
)
from .projector import (
    DepthMap,
    render_depth_hard,
    render_depth_soft,
    silhouette_mask,
    view_gradient,
)

__all__ = [
    "CameraModel",
    "DepthMap",
    "EncodedView",
    "StyleCode",
    "TriangleMesh",
    "ViewCode",
    "angular_distance",
    "broadcast_code",
    "decode_view",
    "encode_view",
    "load_obj",
    "normalize_mesh",
    "procedural_car_mesh",
    "render_depth_hard",
    "render_depth_soft",
    "rotation_from_view",
    "save_obj",
    "silhouette_mask",
    "view_gradient",
    "wrap_angle",
]

__version__ = "0.1.0"
