use super::extract::{ExtractorKind, ExtractorSpec, Preprocessing};
use super::model::PipelineConfig;
use crate::error::{Error, Result};
use crate::mlp::{TrainConfig, DEFAULT_GOAL_MSE, DEFAULT_LEARNING_RATE};
use crate::pca::Retention;

/// Named training defaults; every value can be overridden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub n_hidden: usize,
    pub n_iterations: usize,
    pub learning_rate: f64,
    /// Square AAM texture frame size in pixels.
    pub aam_texture: usize,
    pub retention: Retention,
}

pub const PRESETS: [Preset; 6] = [
    Preset {
        name: "gender-cohn",
        description: "gender on posed expression data",
        n_hidden: 500,
        n_iterations: 5000,
        learning_rate: DEFAULT_LEARNING_RATE,
        aam_texture: 200,
        retention: Retention::All,
    },
    Preset {
        name: "gender-fgnet",
        description: "gender under ageing variation",
        n_hidden: 1000,
        n_iterations: 6500,
        learning_rate: DEFAULT_LEARNING_RATE,
        aam_texture: 350,
        retention: Retention::All,
    },
    Preset {
        name: "age",
        description: "six age ranges, 0-60 years",
        n_hidden: 1200,
        n_iterations: 8000,
        learning_rate: DEFAULT_LEARNING_RATE,
        aam_texture: 350,
        retention: Retention::All,
    },
    Preset {
        name: "expression",
        description: "six basic expressions",
        n_hidden: 200,
        n_iterations: 5000,
        learning_rate: DEFAULT_LEARNING_RATE,
        aam_texture: 150,
        retention: Retention::All,
    },
    Preset {
        name: "ethnicity",
        description: "white, black, indian, other",
        n_hidden: 200,
        n_iterations: 5000,
        learning_rate: DEFAULT_LEARNING_RATE,
        aam_texture: 250,
        retention: Retention::All,
    },
    Preset {
        name: "synthetic",
        description: "small and fast, for the synthetic corpus",
        n_hidden: 12,
        n_iterations: 3000,
        learning_rate: 0.5,
        aam_texture: 56,
        retention: Retention::Count(40),
    },
];

impl Preset {
    pub fn find(name: &str) -> Result<&'static Preset> {
        PRESETS.iter().find(|p| p.name == name).ok_or_else(|| Error::UnknownToken {
            kind: "preset",
            token: name.to_string(),
            allowed: PRESETS.map(|p| p.name).join(", "),
        })
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            n_hidden: self.n_hidden,
            n_iterations: self.n_iterations,
            learning_rate: self.learning_rate,
            goal_mse: DEFAULT_GOAL_MSE,
            seed,
        }
    }

    pub fn config(&self, kind: ExtractorKind, seed: u64) -> PipelineConfig {
        PipelineConfig {
            preprocessing: Preprocessing::for_kind(kind),
            extractor: ExtractorSpec::default_for(kind, self.aam_texture),
            retention: self.retention,
            train: self.train_config(seed),
        }
    }
}
