"""spherecal: camera self-calibration on a spherical image surface.

Two calibration routes share one constrained least-squares engine: a
conventional baseline that estimates Brown distortion coefficients
jointly with the network, and a non-parametric route that learns the
distortion field with k-nearest-neighbour regression on adjustment
residuals. A built-in synthetic camera oracle provides ground truth for
end-to-end validation.
"""

from .adjustment import (
    AdjustmentConfig,
    AdjustmentResult,
    DatumSpec,
    NetworkParameters,
    solve,
)
from .assessment import (
    AlignmentTransform,
    AssessmentReport,
    assess_network,
    format_ladder_delimited,
    format_ladder_table,
    radial_trend,
    residual_histogram,
    rigid_align,
    rmse_xyz,
)
from .distortion import (
    BROWN_TERMS,
    BrownParams,
    KnnCorrectionMap,
    brown_correction,
    knn_cross_validate,
    knn_fit,
    knn_predict,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateGeometryError,
    InitializationError,
    SolveError,
    SpherecalError,
)
from .geometry import (
    CameraPose,
    ImageObservation,
    InteriorOrientation,
    ObjectPoint,
    ObservationSet,
    collinearity_residual,
    corrected_coords,
    incidence_angle,
    refraction_angle,
    sphere_z,
    to_camera_frame,
)
from .initialization import (
    InitializationResult,
    P3PCandidateSet,
    covering_principal_distance,
    disambiguate,
    initialize_network,
    p3p_solve,
    spherical_bearings,
)
from .oracle import (
    PROJECTION_KINDS,
    ProjectionModel,
    RigSpec,
    SceneSpec,
    TruthRecord,
    back_project,
    exact_sphere_correction,
    generate_scene,
    observe,
    project,
    project_rays,
)
from .pipeline import (
    CalibrationMode,
    CalibrationResult,
    LADDER_MASKS,
    OuterLoopConfig,
    calibrate,
    calibrate_conventional,
    calibrate_knn,
    ladder_label,
    run_ladder,
)

__all__ = [
    "AdjustmentConfig",
    "AdjustmentResult",
    "AlignmentTransform",
    "AssessmentReport",
    "BROWN_TERMS",
    "BrownParams",
    "CalibrationMode",
    "CalibrationResult",
    "CameraPose",
    "ConfigError",
    "DataFormatError",
    "DatumSpec",
    "DegenerateGeometryError",
    "ImageObservation",
    "InitializationError",
    "InitializationResult",
    "InteriorOrientation",
    "KnnCorrectionMap",
    "LADDER_MASKS",
    "NetworkParameters",
    "ObjectPoint",
    "ObservationSet",
    "OuterLoopConfig",
    "P3PCandidateSet",
    "PROJECTION_KINDS",
    "ProjectionModel",
    "RigSpec",
    "SceneSpec",
    "SolveError",
    "SpherecalError",
    "TruthRecord",
    "assess_network",
    "back_project",
    "brown_correction",
    "calibrate",
    "calibrate_conventional",
    "calibrate_knn",
    "collinearity_residual",
    "corrected_coords",
    "covering_principal_distance",
    "disambiguate",
    "exact_sphere_correction",
    "format_ladder_delimited",
    "format_ladder_table",
    "generate_scene",
    "incidence_angle",
    "initialize_network",
    "knn_cross_validate",
    "knn_fit",
    "knn_predict",
    "ladder_label",
    "observe",
    "p3p_solve",
    "project",
    "project_rays",
    "radial_trend",
    "refraction_angle",
    "residual_histogram",
    "rigid_align",
    "rmse_xyz",
    "solve",
    "spherical_bearings",
    "sphere_z",
    "to_camera_frame",
]

__version__ = "0.1.0"
