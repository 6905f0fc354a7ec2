//! Training-free retrieval-augmented classification for open-vocabulary dense
//! prediction.
//!
//! The pipeline downstream of the neural feature extractors:
//!
//! 1. [`features`] — mask average pooling turns a dense feature map plus
//!    class-agnostic masks into instance embeddings.
//! 2. [`database`] — a continually growing store of labeled embeddings with a
//!    dynamic class vocabulary and bit-exact persistence. No images are ever
//!    stored.
//! 3. [`index`] — exact and HNSW cosine top-k retrieval over a snapshot.
//! 4. [`fusion`] — retrieved neighbors become confidence-aware pseudo-logits,
//!    fused with the base model's probabilities under a confidence gate.
//! 5. [`segmentation`] — per-mask decisions are stitched into semantic maps
//!    and scored with mIoU.
//! 6. [`synthetic`] / [`simulate`] — seeded cluster generators and the
//!    class-incremental expansion harness used for desk-scale evaluation.

pub mod database;
pub mod error;
pub mod features;
pub mod formats;
pub mod fusion;
pub mod index;
mod io_util;
pub mod segmentation;
pub mod simulate;
pub mod synthetic;

pub use database::{
    ClassRegistry, DatabaseStats, EmbeddingDatabase, EmbeddingRecord, Snapshot, DEFAULT_DIM,
};
pub use error::{CorruptKind, Error, Result};
pub use features::{
    extract_instance_embeddings, l2_normalize, mask_average_pool, resize_mask, Embedding,
    FeatureMap, InstanceMask, WeightGrid,
};
pub use fusion::{
    batch_classify, classify_query, fuse, pseudo_logits, ClassDecision, FusionConfig,
    ProbabilityVector,
};
pub use index::{
    cosine_similarity, recall_at_k, ExactIndex, HnswConfig, HnswIndex, IndexKind, RetrievalHit,
    VectorIndex,
};
pub use segmentation::{
    filter_confident_masks, miou, stitch_semantic_map, ConfusionMatrix, IouReport, MaskPrediction,
    OverlapStrategy, SemanticMap, VOID_LABEL,
};
pub use simulate::{run_continual_simulation, SimulationReport, TimestepMetrics};
pub use synthetic::{gen_synthetic, SyntheticDataset, SyntheticSpec};
