use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use super::extract::FaceInput;
use super::model::{AgeCascade, Sample, TaskModel};
use super::predict::{predict_all, predict_cascade, ModelSet, PredictOptions, StageTimings};
use super::task::Task;
use crate::error::{Error, Result};

/// What is being evaluated.
#[derive(Debug, Clone, Copy)]
pub enum EvalTarget<'a> {
    Single(&'a TaskModel),
    /// Ages scored through the gender-routed cascade.
    Cascade(&'a AgeCascade),
}

impl EvalTarget<'_> {
    fn task(&self) -> Task {
        match self {
            EvalTarget::Single(m) => m.task,
            EvalTarget::Cascade(_) => Task::Age,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub label: String,
    pub count: usize,
    /// Percentage; absent when the class has no test records.
    pub accuracy: Option<f64>,
}

/// Milliseconds spent on the first image, the first ten and all images,
/// with per-stage totals over the whole set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingSummary {
    pub images: usize,
    pub first_1_ms: f64,
    pub first_10_ms: f64,
    pub all_ms: f64,
    pub mean_ms: f64,
    pub stages: StageTimings,
}

/// Which gendered age head scored each record of a cascade evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingStats {
    pub male: usize,
    pub female: usize,
    /// Age-head invocations per record; all ones when routing is sound.
    pub heads_per_record: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub task: Task,
    pub labels: Vec<String>,
    /// Percentage of correctly classified records.
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub timing: TimingSummary,
    pub routing: Option<RoutingStats>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Scores every sample in order. Images are processed one at a time so
/// the per-image timings are meaningful.
pub fn evaluate(samples: &[Sample], target: EvalTarget<'_>) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(Error::MissingInput("empty test set".into()));
    }
    let task = target.task();
    let labels = task.labels();
    let n = labels.len();
    let mut confusion = vec![vec![0usize; n]; n];
    let mut per_image = Vec::with_capacity(samples.len());
    let mut stages = StageTimings::default();
    let mut routing = matches!(target, EvalTarget::Cascade(_)).then(|| RoutingStats {
        male: 0,
        female: 0,
        heads_per_record: Vec::new(),
    });

    for s in samples {
        let actual = task.class_of(&s.record)?.ok_or_else(|| {
            Error::MissingInput(format!("{}: no label for task {task}", s.face.name))
        })?;
        let start = Instant::now();
        let predicted = match target {
            EvalTarget::Single(model) => {
                let t = Instant::now();
                let features = model.extract(&s.face)?;
                stages.feature_extraction += ms(t);
                let t = Instant::now();
                let input = model.project(&features)?;
                stages.projection += ms(t);
                let t = Instant::now();
                let out = model.classify(&input)?;
                stages.classification += ms(t);
                out.class
            }
            EvalTarget::Cascade(cascade) => {
                let d = predict_cascade(&s.face, cascade, &PredictOptions::default())?;
                let r = routing.as_mut().expect("cascade routing");
                match d.head {
                    Task::AgeMale => r.male += 1,
                    _ => r.female += 1,
                }
                r.heads_per_record.push(d.age_heads_run);
                d.age.class
            }
        };
        let elapsed = ms(start);
        stages.total += elapsed;
        per_image.push(elapsed);
        confusion[actual][predicted] += 1;
    }

    let correct: usize = (0..n).map(|i| confusion[i][i]).sum();
    let per_class = labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let count: usize = confusion[i].iter().sum();
            ClassAccuracy {
                label: label.clone(),
                count,
                accuracy: (count > 0).then(|| 100.0 * confusion[i][i] as f64 / count as f64),
            }
        })
        .collect();
    Ok(EvalResult {
        task,
        labels,
        accuracy: 100.0 * correct as f64 / samples.len() as f64,
        per_class,
        confusion,
        timing: TimingSummary::from_images(&per_image, stages),
        routing,
    })
}

impl EvalResult {
    /// `metric,value` rows, a blank line, then the confusion matrix with
    /// actual labels down and predicted labels across.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "task,{}", self.task);
        let _ = writeln!(out, "images,{}", self.timing.images);
        let _ = writeln!(out, "accuracy,{:.4}", self.accuracy);
        for c in &self.per_class {
            match c.accuracy {
                Some(a) => {
                    let _ = writeln!(out, "accuracy[{}],{a:.4}", c.label);
                }
                None => {
                    let _ = writeln!(out, "accuracy[{}],", c.label);
                }
            }
        }
        let t = &self.timing;
        let _ = writeln!(out, "time_ms[1],{:.3}", t.first_1_ms);
        let _ = writeln!(out, "time_ms[10],{:.3}", t.first_10_ms);
        let _ = writeln!(out, "time_ms[all],{:.3}", t.all_ms);
        let _ = writeln!(out, "time_ms[mean],{:.3}", t.mean_ms);
        let _ = writeln!(out, "time_ms[feature_extraction],{:.3}", t.stages.feature_extraction);
        let _ = writeln!(out, "time_ms[projection],{:.3}", t.stages.projection);
        let _ = writeln!(out, "time_ms[classification],{:.3}", t.stages.classification);
        if let Some(r) = &self.routing {
            let _ = writeln!(out, "routed[age-male],{}", r.male);
            let _ = writeln!(out, "routed[age-female],{}", r.female);
        }
        out.push('\n');
        let _ = writeln!(out, "actual\\predicted,{}", self.labels.join(","));
        for (label, row) in self.labels.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{label},{}", cells.join(","));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}: {:.2}% correct on {} images",
            self.task, self.accuracy, self.timing.images
        );
        for c in &self.per_class {
            match c.accuracy {
                Some(a) => {
                    let _ = writeln!(out, "  {:<12} {:>7.2}%  ({} images)", c.label, a, c.count);
                }
                None => {
                    let _ = writeln!(out, "  {:<12}       -   (0 images)", c.label);
                }
            }
        }
        if let Some(r) = &self.routing {
            let _ = writeln!(out, "  routed to age-male: {}, age-female: {}", r.male, r.female);
        }
        out.push_str(&self.timing_table());
        out
    }

    /// The 1 / 10 / all images timing table.
    pub fn timing_table(&self) -> String {
        self.timing.table()
    }
}

impl TimingSummary {
    /// Summary of per-image wall-clock times in milliseconds.
    pub fn from_images(per_image: &[f64], stages: StageTimings) -> Self {
        let sum_first = |k: usize| per_image.iter().take(k).sum::<f64>();
        let all_ms = sum_first(per_image.len());
        TimingSummary {
            images: per_image.len(),
            first_1_ms: sum_first(1),
            first_10_ms: sum_first(10),
            all_ms,
            mean_ms: if per_image.is_empty() {
                0.0
            } else {
                all_ms / per_image.len() as f64
            },
            stages,
        }
    }

    /// The 1 / 10 / all images table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>12}", "images", "time (ms)");
        let _ = writeln!(out, "{:<12} {:>12.3}", 1.min(self.images), self.first_1_ms);
        let _ = writeln!(out, "{:<12} {:>12.3}", 10.min(self.images), self.first_10_ms);
        let _ = writeln!(out, "{:<12} {:>12.3}", format!("all ({})", self.images), self.all_ms);
        out
    }
}

/// Times one head over `faces`, one image at a time.
pub fn benchmark_head(faces: &[FaceInput], model: &TaskModel) -> Result<TimingSummary> {
    let mut per_image = Vec::with_capacity(faces.len());
    let mut stages = StageTimings::default();
    for face in faces {
        let start = Instant::now();
        let t = Instant::now();
        let features = model.extract(face)?;
        stages.feature_extraction += ms(t);
        let t = Instant::now();
        let input = model.project(&features)?;
        stages.projection += ms(t);
        let t = Instant::now();
        model.classify(&input)?;
        stages.classification += ms(t);
        let elapsed = ms(start);
        stages.total += elapsed;
        per_image.push(elapsed);
    }
    Ok(TimingSummary::from_images(&per_image, stages))
}

/// Times [`predict_all`] over `faces`, one image at a time.
pub fn benchmark_all(faces: &[FaceInput], models: &ModelSet) -> Result<TimingSummary> {
    let mut per_image = Vec::with_capacity(faces.len());
    let mut stages = StageTimings::default();
    for face in faces {
        let r = predict_all(face, models)?;
        stages.feature_extraction += r.timings.feature_extraction;
        stages.projection += r.timings.projection;
        stages.classification += r.timings.classification;
        stages.total += r.timings.total;
        per_image.push(r.timings.total);
    }
    Ok(TimingSummary::from_images(&per_image, stages))
}
