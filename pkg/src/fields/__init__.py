"""
Uniform-grid fields and their operators.
"""
from src.fields.grid import CenteredField, Field, GridSpec, StaggeredField, zeros_like
from src.fields.operators import (
    AdvectionPlan,
    advect,
    blur,
    blur_kernel,
    centers_to_faces,
    curl2d,
    divergence,
    downsample,
    faces_to_centers,
    gradient,
    interpolate_linear,
    laplace,
    resample,
    upsample,
    vectors_to_faces,
)
from src.fields.sampling import LinearSampler

__all__ = [
    "AdvectionPlan",
    "CenteredField",
    "Field",
    "GridSpec",
    "LinearSampler",
    "StaggeredField",
    "advect",
    "blur",
    "blur_kernel",
    "centers_to_faces",
    "curl2d",
    "divergence",
    "downsample",
    "faces_to_centers",
    "gradient",
    "interpolate_linear",
    "laplace",
    "resample",
    "upsample",
    "vectors_to_faces",
    "zeros_like",
]
