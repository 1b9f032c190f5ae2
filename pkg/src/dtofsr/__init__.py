"""dtofsr: low-resolution dToF sensor simulation, transient histogram
processing, classical RGB-guided depth super-resolution and video depth
metrics."""

from .histogram import (
    SPEED_OF_LIGHT,
    CompressedGrid,
    CompressedHistogram,
    Histogram,
    Pulse,
    PulseShape,
    TimeAxis,
    compress,
    compress_grid,
    cumulative,
    default_axis,
    depth_patch_to_histogram,
    peak_detect,
    threshold_floor,
    wasserstein_distance,
)
from .metrics import (
    FlowField,
    FrameMetrics,
    MetricReport,
    abs_error,
    charbonnier_gradient_loss,
    delta_metric,
    forward_warp_zbuffer,
    tepe,
)
from .sensor import (
    DToFFrame,
    RadianceMode,
    SensorConfig,
    SensorMode,
    ShotNoise,
    grayscale_radiance,
    peak_mode_frame,
    radiance_map,
    simulate_frame,
)
from .superres import (
    BilateralParams,
    candidate_select_upsample,
    confidence_from_histogram,
    confidence_fuse,
    guided_bilateral_upsample,
    temporal_fuse,
    upsample_baseline,
)
from .dataset import (
    DepthNormalizer,
    FrameRecord,
    LoadedFrame,
    SequenceManifest,
    clip_and_normalize,
    export_pointcloud,
    load_sequence,
    split_into_clips,
    write_sequence,
)
from .synth import (
    Box,
    CameraPath,
    Intrinsics,
    Plane,
    SceneSpec,
    SynthFrame,
    load_scene_spec,
    synth_scene,
)

__version__ = "0.1.0"
