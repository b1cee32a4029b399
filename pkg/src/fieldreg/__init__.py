"""Registration of volumetric images via directional structural representations.

Images are lifted to vector-valued representations: regularized
edge-based fields built by convolving a squared-gradient edge map with
a radial attraction kernel, or normalized gradient fields. Those
representations replace raw intensities inside an otherwise unchanged
multi-resolution registration pipeline, making alignment robust to
intensity relationships the raw metrics cannot handle.
"""

from .engine import RegistrationResult, StageConfig, objective, optimize_level, register
from .errors import (
    ConfigError,
    DataFormatError,
    FieldregError,
    GridError,
    NumericalError,
    ParameterError,
    UndefinedMetricError,
)
from .evaluation import (
    BasinReport,
    LandmarkSet,
    SimilarityProfile,
    TreResult,
    add_gaussian_noise,
    basin_analysis,
    dice,
    translation_profile,
    tre,
)
from .grid import (
    GridGeometry,
    LabelVolume,
    ScalarVolume,
    VectorField,
    downsample,
    downsample_labels,
    gradient,
    resample,
    resample_field,
    sample_linear,
)
from .io import (
    read_config,
    read_landmarks_dirlab,
    read_metaimage,
    read_metaimage_header,
    read_transform,
    write_metaimage,
    write_profile_csv,
    write_report,
    write_transform,
    write_tre_csv,
)
from .metrics import (
    JointHistogram,
    MetricValue,
    mean_dot_product,
    ncc,
    ngf_metric,
    nmi,
    ssd,
    vector_field_similarity,
)
from .phantoms import (
    blob_volume,
    grid_landmarks,
    head_slice,
    invert_contrast,
    random_smooth_warp,
)
from .representations import (
    GAMMA_PRESETS,
    EdgeMap,
    NoiseEstimate,
    RepresentationConfig,
    VectorFieldKernel,
    build_vfc_kernel,
    edge_map_squared_gradient,
    estimate_noise,
    field_roughness,
    make_representation,
    ngf,
    normalize_field,
    vfc_field,
)
from .transforms import (
    AffineTransform,
    BSplineTransform,
    CompositeTransform,
    TranslationTransform,
    bspline_weights,
    compose,
)

__version__ = "0.1.0"

__all__ = [
    "AffineTransform",
    "BSplineTransform",
    "BasinReport",
    "CompositeTransform",
    "ConfigError",
    "DataFormatError",
    "EdgeMap",
    "FieldregError",
    "GAMMA_PRESETS",
    "GridError",
    "GridGeometry",
    "JointHistogram",
    "LabelVolume",
    "LandmarkSet",
    "MetricValue",
    "NoiseEstimate",
    "NumericalError",
    "ParameterError",
    "RegistrationResult",
    "RepresentationConfig",
    "ScalarVolume",
    "SimilarityProfile",
    "StageConfig",
    "TranslationTransform",
    "TreResult",
    "UndefinedMetricError",
    "VectorField",
    "VectorFieldKernel",
    "add_gaussian_noise",
    "basin_analysis",
    "blob_volume",
    "bspline_weights",
    "build_vfc_kernel",
    "compose",
    "dice",
    "downsample",
    "downsample_labels",
    "edge_map_squared_gradient",
    "estimate_noise",
    "field_roughness",
    "gradient",
    "grid_landmarks",
    "head_slice",
    "invert_contrast",
    "make_representation",
    "mean_dot_product",
    "ncc",
    "ngf",
    "ngf_metric",
    "nmi",
    "objective",
    "optimize_level",
    "random_smooth_warp",
    "read_config",
    "read_landmarks_dirlab",
    "read_metaimage",
    "read_metaimage_header",
    "read_transform",
    "register",
    "resample",
    "resample_field",
    "sample_linear",
    "ssd",
    "translation_profile",
    "tre",
    "vector_field_similarity",
    "vfc_field",
    "write_metaimage",
    "write_profile_csv",
    "write_report",
    "write_transform",
    "write_tre_csv",
]
