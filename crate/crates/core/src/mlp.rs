//! Three-layer feedforward network with tanh activations on both the
//! hidden and the output layer, trained by full-batch gradient descent on
//! the mean squared error.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

pub const DEFAULT_GOAL_MSE: f64 = 1e-4;
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;

/// Weights beyond this magnitude only saturate tanh; treated as divergence.
const WEIGHT_LIMIT: f64 = 1e100;

/// Target values used for one-hot encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetScheme {
    /// `+1` for the class, `-1` elsewhere.
    PlusMinusOne,
    /// `1` for the class, `0` elsewhere.
    ZeroOne,
}

impl TargetScheme {
    pub fn encode(self, class: usize, n_classes: usize) -> Vec<f64> {
        let off = match self {
            TargetScheme::PlusMinusOne => -1.0,
            TargetScheme::ZeroOne => 0.0,
        };
        (0..n_classes)
            .map(|i| if i == class { 1.0 } else { off })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_hidden: usize,
    pub n_iterations: usize,
    pub learning_rate: f64,
    pub goal_mse: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(n_hidden: usize, n_iterations: usize) -> Self {
        TrainConfig {
            n_hidden,
            n_iterations,
            learning_rate: DEFAULT_LEARNING_RATE,
            goal_mse: DEFAULT_GOAL_MSE,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_hidden == 0 {
            return Err(Error::Parameter("n_hidden must be >= 1".into()));
        }
        if self.n_iterations == 0 {
            return Err(Error::Parameter("n_iterations must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(self.goal_mse > 0.0) {
            return Err(Error::Parameter("goal_mse must be positive".into()));
        }
        Ok(())
    }
}

/// Input centring and scaling fitted on the training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
}

impl InputScaler {
    pub fn identity(dims: usize) -> Self {
        InputScaler {
            mean: vec![0.0; dims],
            stdev: vec![1.0; dims],
        }
    }

    /// Centres every dimension and divides all of them by the largest
    /// per-dimension population stdev, so relative variances (e.g. between
    /// PCA components) are kept. Constant inputs get a unit scale.
    pub fn fit(rows: &[&[f64]]) -> Self {
        let dims = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dims];
        for row in rows {
            for (m, x) in mean.iter_mut().zip(row.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dims];
        for row in rows {
            for ((v, x), m) in var.iter_mut().zip(row.iter()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let top = var.iter().map(|v| (v / n).sqrt()).fold(0.0, f64::max);
        let scale = if top > 1e-12 { top } else { 1.0 };
        InputScaler {
            mean,
            stdev: vec![scale; dims],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.stdev)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// `hidden x in`
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// `out x hidden`
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub target_scheme: TargetScheme,
    pub scaler: InputScaler,
}

/// Gradients laid out like the model's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl Gradients {
    /// `w1` (column-major), `b1`, `w2` (column-major), `b2`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(self.b1.as_slice());
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(self.b2.as_slice());
        out
    }
}

/// Result of [`train_mlp`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Gradient steps taken.
    pub iterations: usize,
}

impl MlpModel {
    /// Weights drawn uniformly from `[-0.5, 0.5]`: `w1` row by row, then
    /// `b1`, `w2` row by row, `b2`.
    pub fn random(
        n_in: usize,
        n_hidden: usize,
        n_out: usize,
        target_scheme: TargetScheme,
        scaler: InputScaler,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            let mut m = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    m[(r, c)] = rng.gen_range(-0.5..=0.5);
                }
            }
            m
        };
        let w1 = draw(n_hidden, n_in);
        let b1 = draw(n_hidden, 1).column(0).into_owned();
        let w2 = draw(n_out, n_hidden);
        let b2 = draw(n_out, 1).column(0).into_owned();
        MlpModel {
            w1,
            b1,
            w2,
            b2,
            target_scheme,
            scaler,
        }
    }

    pub fn n_in(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.w2.nrows()
    }

    /// Same layout as [`Gradients::flat`].
    pub fn flat_params(&self) -> Vec<f64> {
        Gradients {
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
        }
        .flat()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let sizes = [self.w1.len(), self.b1.len(), self.w2.len(), self.b2.len()];
        assert_eq!(params.len(), sizes.iter().sum::<usize>(), "parameter count");
        let (a, rest) = params.split_at(sizes[0]);
        let (b, rest) = rest.split_at(sizes[1]);
        let (c, d) = rest.split_at(sizes[2]);
        self.w1.as_mut_slice().copy_from_slice(a);
        self.b1.as_mut_slice().copy_from_slice(b);
        self.w2.as_mut_slice().copy_from_slice(c);
        self.b2.as_mut_slice().copy_from_slice(d);
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_in() {
            return Err(Error::Dimension {
                expected: self.n_in(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Output activations for one raw (unscaled) input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x)?;
        let z = DVector::from_vec(self.scaler.apply(x));
        let hidden = (&self.w1 * z + &self.b1).map(f64::tanh);
        let out = (&self.w2 * hidden + &self.b2).map(f64::tanh);
        Ok(out.as_slice().to_vec())
    }

    fn scaled_batch(&self, inputs: &[&[f64]]) -> Result<DMatrix<f64>> {
        for x in inputs {
            self.check_dims(x)?;
        }
        let mut m = DMatrix::zeros(inputs.len(), self.n_in());
        for (r, x) in inputs.iter().enumerate() {
            for (c, v) in self.scaler.apply(x).into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        Ok(m)
    }

    /// Forward pass over a scaled batch (`n x in`): hidden and output
    /// activations.
    fn forward_batch(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut hidden = x * self.w1.transpose();
        for mut row in hidden.row_iter_mut() {
            row += self.b1.transpose();
        }
        hidden.apply(|v| *v = v.tanh());
        let mut out = &hidden * self.w2.transpose();
        for mut row in out.row_iter_mut() {
            row += self.b2.transpose();
        }
        out.apply(|v| *v = v.tanh());
        (hidden, out)
    }

    fn mse_of(out: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
        (out - targets).norm_squared() / out.len() as f64
    }

    /// Mean squared error over all samples and outputs.
    pub fn loss(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> Result<f64> {
        let x = self.scaled_batch(inputs)?;
        let t = target_matrix(targets, self.n_out())?;
        Ok(Self::mse_of(&self.forward_batch(&x).1, &t))
    }

    fn backprop(&self, x: &DMatrix<f64>, t: &DMatrix<f64>) -> (f64, Gradients) {
        let (hidden, out) = self.forward_batch(x);
        let mse = Self::mse_of(&out, t);
        let scale = 2.0 / out.len() as f64;
        // dL/d(pre-activation) at the output layer.
        let mut d_out = (&out - t) * scale;
        d_out.zip_apply(&out, |d, y| *d *= 1.0 - y * y);
        let g_w2 = d_out.transpose() * &hidden;
        let g_b2 = row_sums(&d_out);
        let mut d_hidden = &d_out * &self.w2;
        d_hidden.zip_apply(&hidden, |d, h| *d *= 1.0 - h * h);
        let g_w1 = d_hidden.transpose() * x;
        let g_b1 = row_sums(&d_hidden);
        (
            mse,
            Gradients {
                w1: g_w1,
                b1: g_b1,
                w2: g_w2,
                b2: g_b2,
            },
        )
    }

    /// Analytic gradient of [`MlpModel::loss`].
    pub fn gradient(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> Result<Gradients> {
        let x = self.scaled_batch(inputs)?;
        let t = target_matrix(targets, self.n_out())?;
        Ok(self.backprop(&x, &t).1)
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

fn target_matrix(targets: &[&[f64]], n_out: usize) -> Result<DMatrix<f64>> {
    let mut t = DMatrix::zeros(targets.len(), n_out);
    for (r, row) in targets.iter().enumerate() {
        if row.len() != n_out {
            return Err(Error::Dimension {
                expected: n_out,
                actual: row.len(),
            });
        }
        for (c, v) in row.iter().enumerate() {
            t[(r, c)] = *v;
        }
    }
    Ok(t)
}

/// Trains a fresh network. Stops after `n_iterations` steps or as soon as
/// the MSE reaches `goal_mse`.
pub fn train_mlp<X: AsRef<[f64]>, T: AsRef<[f64]>>(
    features: &[X],
    targets: &[T],
    scheme: TargetScheme,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::Parameter("empty training set".into()));
    }
    if features.len() != targets.len() {
        return Err(Error::Dimension {
            expected: features.len(),
            actual: targets.len(),
        });
    }
    let inputs: Vec<&[f64]> = features.iter().map(AsRef::as_ref).collect();
    let target_rows: Vec<&[f64]> = targets.iter().map(AsRef::as_ref).collect();
    let n_in = inputs[0].len();
    let n_out = target_rows[0].len();
    if n_in == 0 || n_out == 0 {
        return Err(Error::Parameter("inputs and targets must be non-empty".into()));
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != n_in) {
        return Err(Error::Dimension {
            expected: n_in,
            actual: bad.len(),
        });
    }
    if inputs.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::Parameter("non-finite training input".into()));
    }
    let (lo, hi) = match scheme {
        TargetScheme::PlusMinusOne => (-1.0, 1.0),
        TargetScheme::ZeroOne => (0.0, 1.0),
    };
    if target_rows
        .iter()
        .flat_map(|t| t.iter())
        .any(|v| !(lo..=hi).contains(v))
    {
        return Err(Error::Parameter(format!(
            "targets must lie in [{lo}, {hi}] for {scheme:?}"
        )));
    }

    let scaler = InputScaler::fit(&inputs);
    let mut model = MlpModel::random(n_in, cfg.n_hidden, n_out, scheme, scaler, cfg.seed);
    let x = model.scaled_batch(&inputs)?;
    let t = target_matrix(&target_rows, n_out)?;

    let mut initial_mse = None;
    let mut steps = 0;
    let final_mse = loop {
        let (mse, grad) = model.backprop(&x, &t);
        if !mse.is_finite() {
            return Err(Error::Diverged { iteration: steps });
        }
        initial_mse.get_or_insert(mse);
        if mse <= cfg.goal_mse || steps == cfg.n_iterations {
            break mse;
        }
        let lr = cfg.learning_rate;
        model.w1 -= grad.w1 * lr;
        model.b1 -= grad.b1 * lr;
        model.w2 -= grad.w2 * lr;
        model.b2 -= grad.b2 * lr;
        steps += 1;
        let blown = |v: &f64| !(v.abs() <= WEIGHT_LIMIT);
        if model.w1.iter().any(blown)
            || model.b1.iter().any(blown)
            || model.w2.iter().any(blown)
            || model.b2.iter().any(blown)
        {
            return Err(Error::Diverged { iteration: steps });
        }
    };

    let initial_mse = initial_mse.expect("at least one evaluation");
    // A saturated network can keep weights bounded while the loss climbs.
    if final_mse > initial_mse {
        return Err(Error::Diverged { iteration: steps });
    }
    Ok(TrainOutcome {
        model,
        initial_mse,
        final_mse,
        iterations: steps,
    })
}

pub fn mlp_forward(model: &MlpModel, v: &FeatureVector) -> Result<Vec<f64>> {
    model.forward(v.values())
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Picks the label with the highest output; returns it with all scores.
pub fn classify<'a, L>(model: &MlpModel, v: &FeatureVector, labels: &'a [L]) -> Result<(&'a L, Vec<f64>)> {
    if labels.len() != model.n_out() {
        return Err(Error::Dimension {
            expected: model.n_out(),
            actual: labels.len(),
        });
    }
    let scores = mlp_forward(model, v)?;
    Ok((&labels[argmax(&scores)], scores))
}
