"""Embedding-space continual visual anomaly detection.

Memory-bank and Gaussian-field detectors over precomputed patch features,
their continual-learning variants, a class-incremental benchmark harness
with cost accounting, and a synthetic scenario generator so everything
runs without a neural network.
"""

from .coreset import OrderedCoreset, farthest_first, kcenter_bruteforce, truncate
from .errors import (
    CapacityError,
    ConfigError,
    DataError,
    EclvadError,
    FormatError,
    MetricError,
    NumericError,
    TruncationError,
)
from .fmap import (
    LABEL_ANOMALOUS,
    LABEL_NORMAL,
    LABEL_UNLABELED,
    FeatureMap,
    LayerStack,
    load_stack,
    read_fmap,
    read_stack,
    save_stack,
    write_fmap,
    write_stack,
)
from .harness import EvalReport, ReplayBuffer, StrategyConfig, cost_rollup, run_scenario
from .manifest import ScenarioManifest, load_manifest, manifest_hash, save_manifest
from .metrics import auroc, f1_best_threshold, image_metrics, pixel_metrics
from .padim import GaussianField, MODE_DIAG, MODE_FULL
from .padim_cl import (
    FieldList,
    FusedField,
    fuse_exact,
    fuse_legacy,
    memory_report,
    score_multimodal,
    start_exact,
    start_legacy,
)
from .patchcore import (
    AnomalyMap,
    MemoryBank,
    PatchGrid,
    build_bank,
    build_patch_grid,
    render_map,
    score_grid,
)
from .patchcore_cl import (
    BankList,
    OpLedger,
    PrototypeTable,
    build_prototype,
    cl_update,
    identify_task,
    infer,
)
from .synthetic import SynthSpec, generate_synthetic

__version__ = "0.1.0"
