"""Fisheye gaze toolkit: camera geometry, synthesis, kernels, metrics."""

from .cameras import (
    EquidistantCamera,
    KannalaBrandtCamera,
    NonUnitDirectionError,
    camera_from_json,
    camera_to_json,
    derive_equidistant,
)
from .reproject import (
    CubemapSet,
    FisheyeImage,
    PerspectiveView,
    face_for_direction,
    remap_fisheye,
    render_fisheye,
    sample_bilinear,
)
from .pipeline import (
    HeadPose,
    LocalGaze,
    PersonAnnotation,
    SampleRecord,
    gaze_local_to_camera,
    generate_record,
    head_rotation_matrix,
    project_annotation,
    read_manifest,
    remap_annotations,
    sample_scene,
    validate_record,
    write_manifest,
)
from .kernels import (
    FusionWeights,
    RotConvKernel,
    balanced_bce,
    cross_attention,
    flatten_with_pe,
    fuse_scale,
    global_avg_pool,
    multi_scale_fuse,
    rot_conv_forward,
    smooth_l1,
    total_loss,
)
from .metrics import (
    EvalConfig,
    EvalReport,
    Prediction,
    adjusted_gaze_error,
    angular_error,
    bin_metrics,
    evaluate,
    match_detections,
)

__version__ = "0.1.0"
