"""patchseg: one-pass instance assembly from per-pixel shape-patch predictions.

The pipeline turns a dense tensor of local shape predictions into an
overlap-capable instance segmentation: accumulate pairwise consensus
affinities, score and rank every patch against the consensus, cover the
image foreground with a sparse selection of patches, connect the selection
into a signed patch affinity graph, partition it, and union each
component's patch foregrounds into instance masks.  A synthetic prediction
oracle and overlap-aware metrics make the whole chain verifiable without
any trained network.
"""

__version__ = "0.1.0"

from .core import (
    ForegroundMask,
    GroundTruth,
    PatchClassification,
    PatchGeometry,
    PixelClass,
    PredictionBundle,
    classify,
    image_foreground,
    overlap_mask,
)
from .consensus import ConsensusField, accumulate, aff
from .selection import (
    EmptyForegroundError,
    PatchSelection,
    RankedPatches,
    ScoredPatch,
    greedy_cover,
    rank,
    score_patch,
    thin_out,
)
from .patchgraph import (
    EdgeList,
    PatchGraph,
    build_graph,
    paff,
    read_edge_list,
    write_edge_list,
)
from .partition import (
    MutexForest,
    Partition,
    PixelPartition,
    UnionFind,
    cc_positive,
    mutex_watershed,
    mws_dense,
)
from .assembly import (
    InstanceProvenance,
    InstanceSegmentation,
    assemble,
    filter_small,
    flatten,
    from_masks,
)
from .oracle import NoiseSpec, PlacementFailure, corrupt, make_shapes, synth
from .metrics import (
    DSB_COARSE_THRESHOLDS,
    DSB_FINE_THRESHOLDS,
    ApScore,
    EvalReport,
    ap_dsb,
    av_ap,
    evaluate,
    iou,
    iou_matrix,
)
from .npyio import (
    MalformedHeader,
    NpyFormatError,
    TruncatedPayload,
    UnsupportedDtype,
    UnsupportedLayout,
    read_npy,
    write_npy,
)
from .config import (
    BenchConfig,
    ConfigError,
    PipelineConfig,
    SynthConfig,
    config_from_dict,
    load_config,
)
from .pipeline import AssemblyResult, run_assembly, run_bench, synth_case, warmup

__all__ = [name for name in dir() if not name.startswith("_")]
