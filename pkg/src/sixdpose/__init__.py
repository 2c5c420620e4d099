"""Model-based 6D object pose estimation from RGB via latent codebook retrieval."""

from .augment import AugmentationConfig, composite_background, f_aug, square_occlusion
from .codebook import (
    Codebook,
    PoseEstimate,
    build_codebook,
    estimate_pose,
    estimate_translation,
    load_codebook,
    lookup,
    save_codebook,
)
from .encoder import Architecture, EncoderParams, decode, encode, gradient_check, init_params, loss
from .geom import (
    PoseSE3,
    Rotation3,
    ViewpointGrid,
    compose,
    geodesic_angle_deg,
    invert,
    random_rotation,
    sample_view_rotations,
    transform_point,
)
from .mesh import TriMesh, load_mesh, mesh_diameter
from .metrics import (
    Detection,
    EvalReport,
    GTAnnotation,
    aggregate_report,
    average_precision,
    bundle_offset,
    cou_recall_table,
    e_add,
    e_adi,
    e_cou,
    mean_average_precision,
    pose_errors,
    recall_table,
    recover_object_pose,
)
from .render import CameraIntrinsics, RenderOutput, crop_square, project, render
from .train import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
