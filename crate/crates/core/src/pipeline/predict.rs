use std::time::Instant;

use serde::Serialize;

use super::bundle::Bundle;
use super::model::{gender_of_class, AgeCascade, HeadPrediction, TaskModel};
use super::task::Task;
use super::extract::FaceInput;
use crate::dataset::Gender;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// The age estimator of a model set.
#[derive(Debug, Clone, PartialEq)]
pub enum AgeHeads {
    /// One head for everybody.
    Flat(TaskModel),
    /// One head per gender, chosen by the gender head's decision.
    Cascade { male: TaskModel, female: TaskModel },
}

/// The four heads queried by [`predict_all`].
#[derive(Debug, Clone)]
pub struct ModelSet {
    gender: TaskModel,
    age: AgeHeads,
    expression: TaskModel,
    ethnicity: TaskModel,
    /// For every head slot, the first slot sharing its extractor and
    /// preprocessing. Slots: gender, age (flat or male), age female,
    /// expression, ethnicity.
    share: [usize; 5],
}

const SLOT_GENDER: usize = 0;
const SLOT_AGE_MALE: usize = 1;
const SLOT_AGE_FEMALE: usize = 2;
const SLOT_EXPRESSION: usize = 3;
const SLOT_ETHNICITY: usize = 4;

impl ModelSet {
    pub fn new(gender: TaskModel, age: AgeHeads, expression: TaskModel, ethnicity: TaskModel) -> Result<Self> {
        let check = |m: &TaskModel, t: Task| -> Result<()> {
            if m.task != t {
                return Err(Error::TaskMismatch {
                    expected: t.to_string(),
                    found: m.task.to_string(),
                });
            }
            Ok(())
        };
        check(&gender, Task::Gender)?;
        check(&expression, Task::Expression)?;
        check(&ethnicity, Task::Ethnicity)?;
        match &age {
            AgeHeads::Flat(m) => check(m, Task::Age)?,
            AgeHeads::Cascade { male, female } => {
                check(male, Task::AgeMale)?;
                check(female, Task::AgeFemale)?;
            }
        }
        let mut set = ModelSet {
            gender,
            age,
            expression,
            ethnicity,
            share: [0; 5],
        };
        for slot in 0..5 {
            let this = set.slot(slot);
            set.share[slot] = (0..slot)
                .find(|&earlier| {
                    let other = set.slot(earlier);
                    other.preprocessing == this.preprocessing && other.extractor == this.extractor
                })
                .unwrap_or(slot);
        }
        Ok(set)
    }

    /// Picks the heads out of a bundle. A gendered age pair is preferred
    /// over a flat age head when both are present.
    pub fn from_bundle(bundle: &Bundle) -> Result<Self> {
        let take = |t: Task| {
            bundle
                .get(t)
                .cloned()
                .ok_or_else(|| Error::MissingHead(format!("the bundle has no {t} model")))
        };
        let age = match (bundle.get(Task::AgeMale), bundle.get(Task::AgeFemale), bundle.get(Task::Age)) {
            (Some(m), Some(f), _) => AgeHeads::Cascade {
                male: m.clone(),
                female: f.clone(),
            },
            (_, _, Some(a)) => AgeHeads::Flat(a.clone()),
            (None, _, None) => return Err(Error::MissingHead("the bundle has no age or age-male model".into())),
            (_, None, None) => return Err(Error::MissingHead("the bundle has no age or age-female model".into())),
        };
        ModelSet::new(take(Task::Gender)?, age, take(Task::Expression)?, take(Task::Ethnicity)?)
    }

    fn slot(&self, slot: usize) -> &TaskModel {
        match (slot, &self.age) {
            (SLOT_GENDER, _) => &self.gender,
            (SLOT_AGE_MALE, AgeHeads::Flat(m)) => m,
            (SLOT_AGE_MALE, AgeHeads::Cascade { male, .. }) => male,
            (SLOT_AGE_FEMALE, AgeHeads::Flat(m)) => m,
            (SLOT_AGE_FEMALE, AgeHeads::Cascade { female, .. }) => female,
            (SLOT_EXPRESSION, _) => &self.expression,
            _ => &self.ethnicity,
        }
    }

    pub fn gender(&self) -> &TaskModel {
        &self.gender
    }

    pub fn age(&self) -> &AgeHeads {
        &self.age
    }

    pub fn expression(&self) -> &TaskModel {
        &self.expression
    }

    pub fn ethnicity(&self) -> &TaskModel {
        &self.ethnicity
    }
}

/// One head's decision in a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadResult {
    pub label: String,
    pub scores: Vec<f64>,
}

impl From<HeadPrediction> for HeadResult {
    fn from(p: HeadPrediction) -> Self {
        HeadResult {
            label: p.label,
            scores: p.scores,
        }
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub feature_extraction: f64,
    pub projection: f64,
    pub classification: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeReport {
    pub gender: HeadResult,
    pub age_range: HeadResult,
    pub expression: HeadResult,
    pub ethnicity: HeadResult,
    pub timings: StageTimings,
    /// The age head that scored the face.
    pub age_head: Task,
    /// Feature extractions performed.
    pub extractions: usize,
}

/// Test and diagnostic overrides for [`predict_all_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PredictOptions {
    /// Route the cascade as if the gender head had decided this.
    pub force_gender: Option<Gender>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Runs heads over one face, extracting each distinct feature set once.
struct Runner<'a> {
    models: &'a ModelSet,
    face: &'a FaceInput,
    cache: Vec<(usize, FeatureVector)>,
    timings: StageTimings,
}

impl Runner<'_> {
    fn run(&mut self, slot: usize) -> Result<HeadPrediction> {
        let model = self.models.slot(slot);
        let key = self.models.share[slot];
        let pos = match self.cache.iter().position(|(k, _)| *k == key) {
            Some(p) => p,
            None => {
                let t = Instant::now();
                let features = model.extract(self.face)?;
                self.timings.feature_extraction += ms(t);
                self.cache.push((key, features));
                self.cache.len() - 1
            }
        };
        let t = Instant::now();
        let input = model.project(&self.cache[pos].1)?;
        self.timings.projection += ms(t);
        let t = Instant::now();
        let out = model.classify(&input)?;
        self.timings.classification += ms(t);
        Ok(out)
    }
}

pub fn predict_all(face: &FaceInput, models: &ModelSet) -> Result<AttributeReport> {
    predict_all_with(face, models, &PredictOptions::default())
}

/// All four attributes of one face. The gender decision selects the age
/// head when the set holds a cascade.
pub fn predict_all_with(face: &FaceInput, models: &ModelSet, opts: &PredictOptions) -> Result<AttributeReport> {
    let start = Instant::now();
    let mut runner = Runner {
        models,
        face,
        cache: Vec::new(),
        timings: StageTimings::default(),
    };
    let gender = runner.run(SLOT_GENDER)?;
    let routed = opts.force_gender.unwrap_or_else(|| gender_of_class(gender.class));
    let (age_slot, age_head) = match (&models.age, routed) {
        (AgeHeads::Flat(_), _) => (SLOT_AGE_MALE, Task::Age),
        (AgeHeads::Cascade { .. }, Gender::Male) => (SLOT_AGE_MALE, Task::AgeMale),
        (AgeHeads::Cascade { .. }, Gender::Female) => (SLOT_AGE_FEMALE, Task::AgeFemale),
    };
    let age = runner.run(age_slot)?;
    let expression = runner.run(SLOT_EXPRESSION)?;
    let ethnicity = runner.run(SLOT_ETHNICITY)?;
    let mut timings = runner.timings;
    timings.total = ms(start);
    Ok(AttributeReport {
        gender: gender.into(),
        age_range: age.into(),
        expression: expression.into(),
        ethnicity: ethnicity.into(),
        timings,
        age_head,
        extractions: runner.cache.len(),
    })
}

/// Routing of one face through a cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeDecision {
    pub gender: HeadPrediction,
    pub age: HeadPrediction,
    /// The age head that scored the face.
    pub head: Task,
    /// Age heads invoked for this face.
    pub age_heads_run: usize,
}

/// Age decision of a cascade for one face.
pub fn predict_cascade(face: &FaceInput, cascade: &AgeCascade, opts: &PredictOptions) -> Result<CascadeDecision> {
    let features = cascade.gender.extract(face)?;
    let gender = cascade.gender.classify(&cascade.gender.project(&features)?)?;
    let routed = opts.force_gender.unwrap_or_else(|| gender_of_class(gender.class));
    let mut age_heads_run = 0;
    let mut run = |head: &TaskModel| -> Result<HeadPrediction> {
        age_heads_run += 1;
        let shared = head.preprocessing == cascade.gender.preprocessing && head.extractor == cascade.gender.extractor;
        let features = if shared { features.clone() } else { head.extract(face)? };
        head.classify(&head.project(&features)?)
    };
    let head = cascade.head_for(routed);
    let age = run(head)?;
    Ok(CascadeDecision {
        gender,
        age,
        head: head.task,
        age_heads_run,
    })
}
