"""Spherical geometry, routes, masks, and metrics for panoramic video work.

The hot pairwise-distance kernels have a compiled backend with a NumPy
fallback; see :mod:`panosphere._kernels`.
"""

__version__ = "0.1.0"

from .geometry import (
    ErpGrid,
    EulerAngles,
    Rotation3,
    SphericalPoint,
    erp_to_sphere,
    haversine_distance,
    haversine_distances,
    rotate_point,
    rotation_matrix,
    sphere_to_unit_vector,
    temporal_distance,
)
from .mask import (
    SphereMask,
    TokenGrid,
    build_mask,
    mask_density_curve,
    mask_to_bias,
    read_mask,
    token_center,
    write_mask,
)
from .plucker import (
    CameraPose,
    PinholeIntrinsics,
    PluckerField,
    build_plucker_field,
    downsample_field,
    pixel_ray_erp,
    pixel_ray_pinhole,
    ray_moment,
    read_field,
    write_field,
)
from .routes import (
    Box,
    ExplorationRoute,
    NavMesh,
    Polyline,
    RouteSamplingError,
    WalkableScene,
    collision_check,
    delaunay_triangulate,
    laplacian_smooth,
    normalize_route,
    read_route,
    read_scene,
    sample_route,
    shortest_path,
    write_route,
    write_scene,
)
from .block import (
    BlockConfig,
    BlockWeights,
    attention,
    encode_condition,
    forward_block,
    grad_check,
    init_weights,
    read_weights,
    write_weights,
)
from .metrics import (
    poses_from_route,
    psnr,
    rotation_error,
    ssim,
    translation_error,
)
