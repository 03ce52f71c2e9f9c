use serde::{Deserialize, Serialize};

use super::extract::{Extractor, ExtractorSpec, FaceInput, Preprocessing};
use super::par_map;
use super::task::Task;
use crate::aam::{appearance_params, build_appearance_model, AppearanceModel};
use crate::dataset::{DatasetRecord, Gender, LandmarkSet};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::gabor::build_gabor_bank;
use crate::image::ImageMatrix;
use crate::mlp::{argmax, train_mlp, MlpModel, TargetScheme, TrainConfig};
use crate::pca::{fit_pca_slices, PcaModel, Retention};

/// A manifest record with its image and annotations loaded.
#[derive(Debug, Clone)]
pub struct Sample {
    pub record: DatasetRecord,
    pub face: FaceInput,
}

/// Loads the images and landmark files referenced by `records`.
pub fn load_samples(records: &[DatasetRecord]) -> Result<Vec<Sample>> {
    par_map(records, |r| {
        Ok(Sample {
            record: r.clone(),
            face: FaceInput::load(r)?,
        })
    })
    .into_iter()
    .collect()
}

/// Everything needed to train one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preprocessing: Preprocessing,
    pub extractor: ExtractorSpec,
    /// Eigenspace size for non-AAM features.
    pub retention: Retention,
    pub train: TrainConfig,
}

/// Figures from the network's training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub samples: usize,
    pub input_dims: usize,
    pub initial_mse: f64,
    pub final_mse: f64,
    pub iterations: usize,
}

/// A trained classifier head: extractor, optional eigenspace and network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub task: Task,
    pub labels: Vec<String>,
    pub preprocessing: Preprocessing,
    pub extractor: Extractor,
    pub pca: Option<PcaModel>,
    pub mlp: MlpModel,
    pub summary: TrainSummary,
}

/// Output of one head on one face.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPrediction {
    pub class: usize,
    pub label: String,
    pub scores: Vec<f64>,
}

impl TaskModel {
    /// Checks the structural invariants tying the stages together.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Bundle(format!("{} model: {msg}", self.task)));
        if self.labels != self.task.labels() {
            return bad(format!("labels {:?} do not match the task", self.labels));
        }
        if self.labels.len() != self.mlp.n_out() {
            return bad(format!(
                "{} labels but {} network outputs",
                self.labels.len(),
                self.mlp.n_out()
            ));
        }
        let is_aam = matches!(self.extractor, Extractor::Aam(_));
        let expected_scheme = if is_aam {
            TargetScheme::PlusMinusOne
        } else {
            TargetScheme::ZeroOne
        };
        if self.mlp.target_scheme != expected_scheme {
            return bad(format!("target scheme {:?} does not fit the extractor", self.mlp.target_scheme));
        }
        let input_dims = match (&self.extractor, &self.pca) {
            (Extractor::Aam(m), None) => m.n_appearance_params(),
            (Extractor::Aam(_), Some(_)) => return bad("aam models carry no eigenspace".into()),
            (_, Some(p)) => p.n_components(),
            (_, None) => return bad("missing eigenspace".into()),
        };
        if input_dims != self.mlp.n_in() {
            return bad(format!(
                "network expects {} inputs, features have {input_dims}",
                self.mlp.n_in()
            ));
        }
        Ok(())
    }

    pub fn extract(&self, face: &FaceInput) -> Result<FeatureVector> {
        self.extractor.extract(&self.preprocessing, face)
    }

    /// Network input for extracted features.
    pub fn project(&self, features: &FeatureVector) -> Result<Vec<f64>> {
        match &self.pca {
            Some(p) => p.project_slice(features.values()),
            None => Ok(features.values().to_vec()),
        }
    }

    pub fn classify(&self, input: &[f64]) -> Result<HeadPrediction> {
        let scores = self.mlp.forward(input)?;
        let class = argmax(&scores);
        Ok(HeadPrediction {
            class,
            label: self.labels[class].clone(),
            scores,
        })
    }

    pub fn predict(&self, face: &FaceInput) -> Result<HeadPrediction> {
        self.classify(&self.project(&self.extract(face)?)?)
    }
}

/// Samples usable for `task` with their class indices. Age heads bound to
/// a gender partition skip records of the other gender.
fn labelled<'a>(samples: &'a [Sample], task: Task) -> Result<(Vec<&'a Sample>, Vec<usize>)> {
    let mut chosen = Vec::new();
    let mut classes = Vec::new();
    for s in samples {
        if let Some(g) = task.gender_partition() {
            match s.record.gender {
                Some(rg) if rg == g => {}
                Some(_) => continue,
                None => {
                    return Err(Error::MissingInput(format!(
                        "{}: gender label needed to route the record to a {task} head",
                        s.face.name
                    )))
                }
            }
        }
        match task.class_of(&s.record)? {
            Some(c) => {
                chosen.push(s);
                classes.push(c);
            }
            None => {
                return Err(Error::MissingInput(format!(
                    "{}: no label for task {task}",
                    s.face.name
                )))
            }
        }
    }
    let labels = task.labels();
    match classes.first() {
        None => Err(Error::MissingInput(format!("no training records for task {task}"))),
        Some(&first) if classes.iter().all(|&c| c == first) => Err(Error::SingleClass {
            task: task.to_string(),
            label: labels[first].clone(),
        }),
        Some(_) => Ok((chosen, classes)),
    }
}

/// Trains one head on loaded samples.
pub fn train_task(samples: &[Sample], task: Task, cfg: &PipelineConfig) -> Result<TaskModel> {
    train_head(samples, task, cfg, None)
}

/// Like [`train_task`], but an AAM head reuses `appearance` instead of
/// building its own model from the task's samples.
fn train_head(
    samples: &[Sample],
    task: Task,
    cfg: &PipelineConfig,
    appearance: Option<&AppearanceModel>,
) -> Result<TaskModel> {
    let (chosen, classes) = labelled(samples, task)?;
    let labels = task.labels();

    let (extractor, preprocessing, pca, inputs, scheme) = match &cfg.extractor {
        ExtractorSpec::Aam(params) => {
            let pairs = chosen
                .iter()
                .map(|s| {
                    let l = s.face.landmarks.as_ref().ok_or_else(|| {
                        Error::MissingInput(format!("{}: landmarks are required for aam", s.face.name))
                    })?;
                    Ok((&s.face.image, l))
                })
                .collect::<Result<Vec<(&ImageMatrix, &LandmarkSet)>>>()?;
            let (model, inputs) = match appearance {
                Some(model) => {
                    let inputs = par_map(&pairs, |(img, l)| appearance_params(img, l, model).map(|f| f.values().to_vec()))
                        .into_iter()
                        .collect::<Result<Vec<_>>>()?;
                    (model.clone(), inputs)
                }
                None => {
                    let trained = build_appearance_model(&pairs, *params)?;
                    (trained.model, trained.training_params)
                }
            };
            (
                Extractor::Aam(model),
                Preprocessing::none(),
                None,
                inputs,
                TargetScheme::PlusMinusOne,
            )
        }
        spec => {
            let extractor = match spec {
                ExtractorSpec::Gabor { params, grid_step } => Extractor::Gabor {
                    bank: build_gabor_bank(*params)?,
                    grid_step: *grid_step,
                },
                ExtractorSpec::Lbp(p) => Extractor::Lbp(*p),
                ExtractorSpec::Wd(p) => Extractor::Wd(p.clone()),
                ExtractorSpec::Aam(_) => unreachable!("handled above"),
            };
            let features = par_map(&chosen, |s| extractor.extract(&cfg.preprocessing, &s.face))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let raw: Vec<&[f64]> = features.iter().map(|f| f.values()).collect();
            let pca = fit_pca_slices(&raw, cfg.retention)?;
            let inputs = raw
                .iter()
                .map(|v| pca.project_slice(v))
                .collect::<Result<Vec<_>>>()?;
            (extractor, cfg.preprocessing, Some(pca), inputs, TargetScheme::ZeroOne)
        }
    };

    let targets: Vec<Vec<f64>> = classes.iter().map(|&c| scheme.encode(c, labels.len())).collect();
    let outcome = train_mlp(&inputs, &targets, scheme, &cfg.train)?;
    let model = TaskModel {
        task,
        labels,
        preprocessing,
        extractor,
        pca,
        summary: TrainSummary {
            samples: chosen.len(),
            input_dims: inputs[0].len(),
            initial_mse: outcome.initial_mse,
            final_mse: outcome.final_mse,
            iterations: outcome.iterations,
        },
        mlp: outcome.model,
    };
    model.validate()?;
    Ok(model)
}

/// Loads `records` and trains one head on them.
pub fn train_task_from_records(records: &[DatasetRecord], task: Task, cfg: &PipelineConfig) -> Result<TaskModel> {
    train_task(&load_samples(records)?, task, cfg)
}

/// Gender head followed by one age head per gender.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeCascade {
    pub gender: TaskModel,
    pub male: TaskModel,
    pub female: TaskModel,
}

impl AgeCascade {
    pub fn head_for(&self, gender: Gender) -> &TaskModel {
        match gender {
            Gender::Male => &self.male,
            Gender::Female => &self.female,
        }
    }
}

/// Trains the gender head on every sample and each age head on its
/// gender's partition (by ground-truth label). When both configs ask for
/// the same AAM, the age heads reuse the gender head's appearance model,
/// which is built from all samples, and a face is warped only once.
pub fn train_age_cascade(samples: &[Sample], gender_cfg: &PipelineConfig, age_cfg: &PipelineConfig) -> Result<AgeCascade> {
    let gender = train_task(samples, Task::Gender, gender_cfg)?;
    let shared = match (&gender.extractor, gender_cfg.extractor == age_cfg.extractor) {
        (Extractor::Aam(model), true) => Some(model),
        _ => None,
    };
    let male = train_head(samples, Task::AgeMale, age_cfg, shared)?;
    let female = train_head(samples, Task::AgeFemale, age_cfg, shared)?;
    Ok(AgeCascade { gender, male, female })
}

/// Index of the gender label in the gender head's output.
pub(crate) fn gender_of_class(class: usize) -> Gender {
    Gender::ALL[class]
}
