//! Task orchestration: extractor wiring, per-task training, the
//! gender-to-age cascade, all-attributes inference, evaluation, model
//! bundles and the synthetic corpus.

mod bundle;
mod eval;
mod extract;
mod model;
mod predict;
mod presets;
mod synth;
mod task;

use std::sync::OnceLock;

use rayon::prelude::*;

pub use bundle::{load_models, load_task_model, save_models, Bundle, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use eval::{benchmark_all, benchmark_head, evaluate, ClassAccuracy, EvalResult, EvalTarget, RoutingStats, TimingSummary};
pub use extract::{
    load_any_landmarks, preprocess_face, Extractor, ExtractorKind, ExtractorSpec, FaceInput, Preprocessing,
};
pub use model::{
    load_samples, train_age_cascade, train_task, train_task_from_records, AgeCascade, HeadPrediction,
    PipelineConfig, Sample, TaskModel, TrainSummary,
};
pub use predict::{
    predict_all, predict_all_with, predict_cascade, AgeHeads, CascadeDecision, AttributeReport, HeadResult, ModelSet,
    PredictOptions, StageTimings,
};
pub use presets::{Preset, PRESETS};
pub use synth::{generate_synthetic_corpus, CorpusSpec, CueStrengths, FaceParams, SyntheticCorpus};
pub use task::{age_bin, age_label, Task, AGE_RANGES};

/// Environment variable capping worker threads; unset or 0 means one per
/// core.
pub const THREADS_ENV: &str = "FACEPROBE_THREADS";

/// Worker pool shared by all parallel stages.
pub fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

/// Order-preserving parallel map on the shared pool.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    thread_pool().install(|| items.par_iter().map(f).collect())
}
