//! The feed-forward base regressor: batch training over one cross-section,
//! prediction and the per-period absolute error statistic.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClaError, Result};
use crate::rng::{self, domain};
use crate::scalar::Scalar;

/// Fewest rows a training batch may have.
pub const MIN_TRAIN_ROWS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activated value.
    #[inline]
    fn grad_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Identity => T::one(),
        }
    }
}

/// Dense layer. `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Layer<T: Scalar> {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn forward(&self, input: &[T], out: &mut Vec<T>) {
        out.clear();
        for o in 0..self.outputs {
            let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let z = w.iter().zip(input).fold(self.biases[o], |acc, (&a, &b)| acc + a * b);
            out.push(self.activation.apply(z));
        }
    }
}

/// Parameters θ of the regressor: tanh hidden layers and a linear scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BaseParams<T: Scalar> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> BaseParams<T> {
    /// All-zero network of the given shape.
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                inputs: w[0],
                outputs: w[1],
                activation: if i + 2 == sizes.len() { Activation::Identity } else { Activation::Tanh },
                weights: vec![T::zero(); w[0] * w[1]],
                biases: vec![T::zero(); w[1]],
            })
            .collect();
        Self { layers }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn random<R: Rng>(input: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        for layer in &mut p.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::lit(rng.random_range(-limit..limit));
            }
        }
        p
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Parameters in a flat vector: per layer, weights then biases.
    pub fn flatten(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.biases);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.n_params());
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    fn forward_row(&self, row: &[T], a: &mut Vec<T>, b: &mut Vec<T>) -> T {
        a.clear();
        a.extend_from_slice(row);
        for layer in &self.layers {
            layer.forward(a, b);
            std::mem::swap(a, b);
        }
        a[0]
    }

    /// Mean squared error and its gradient (same layout as `flatten`).
    pub fn loss_and_gradient(&self, features: ArrayView2<'_, T>, targets: &[T]) -> Result<(T, Vec<T>)> {
        check_input(self, features)?;
        if features.nrows() != targets.len() {
            return Err(ClaError::ShapeMismatch { expected: features.nrows(), found: targets.len() });
        }
        if targets.is_empty() {
            return Err(ClaError::Empty("loss: no rows"));
        }
        let n = T::from_count(targets.len());
        let mut grads: Vec<(Vec<T>, Vec<T>)> =
            self.layers.iter().map(|l| (vec![T::zero(); l.weights.len()], vec![T::zero(); l.biases.len()])).collect();
        let mut acts: Vec<Vec<T>> = vec![Vec::new(); self.layers.len() + 1];
        let mut loss = T::zero();
        let mut delta = Vec::new();
        let mut next = Vec::new();
        for (row, &y) in features.axis_iter(Axis(0)).zip(targets) {
            acts[0].clear();
            acts[0].extend(row.iter().copied());
            for (li, layer) in self.layers.iter().enumerate() {
                let (head, tail) = acts.split_at_mut(li + 1);
                layer.forward(&head[li], &mut tail[0]);
            }
            let err = acts[self.layers.len()][0] - y;
            loss += err * err;
            delta.clear();
            delta.push(T::lit(2.0) * err / n);
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let out = &acts[li + 1];
                for (o, d) in delta.iter_mut().enumerate() {
                    *d *= layer.activation.grad_from_output(out[o]);
                }
                let input = &acts[li];
                let (gw, gb) = &mut grads[li];
                next.clear();
                next.resize(layer.inputs, T::zero());
                for o in 0..layer.outputs {
                    let d = delta[o];
                    gb[o] += d;
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    let g = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for i in 0..layer.inputs {
                        g[i] += d * input[i];
                        next[i] += d * w[i];
                    }
                }
                std::mem::swap(&mut delta, &mut next);
            }
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        Ok((loss / n, flat))
    }
}

fn check_input<T: Scalar>(params: &BaseParams<T>, features: ArrayView2<'_, T>) -> Result<()> {
    if features.ncols() != params.input_size() {
        return Err(ClaError::ShapeMismatch { expected: params.input_size(), found: features.ncols() });
    }
    Ok(())
}

/// One forecast per row.
pub fn predict<T: Scalar>(params: &BaseParams<T>, features: ArrayView2<'_, T>) -> Result<Vec<T>> {
    check_input(params, features)?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let mut row_buf = Vec::with_capacity(features.ncols());
    Ok(features
        .axis_iter(Axis(0))
        .map(|row| {
            row_buf.clear();
            row_buf.extend(row.iter().copied());
            params.forward_row(&row_buf, &mut a, &mut b)
        })
        .collect())
}

/// Per-row absolute errors and their cross-sectional mean ε_t.
pub fn absolute_error<T: Scalar>(forecasts: &[T], realized: &[T]) -> Result<(Vec<T>, T)> {
    if forecasts.len() != realized.len() {
        return Err(ClaError::ShapeMismatch { expected: forecasts.len(), found: realized.len() });
    }
    if forecasts.is_empty() {
        return Err(ClaError::Empty("absolute error: no rows"));
    }
    let per_row: Vec<T> = forecasts.iter().zip(realized).map(|(f, r)| (*f - *r).abs()).collect();
    let eps = per_row.iter().copied().sum::<T>() / T::from_count(per_row.len());
    Ok((per_row, eps))
}

fn mse<T: Scalar>(params: &BaseParams<T>, x: ArrayView2<'_, T>, y: &[T]) -> Result<T> {
    let f = predict(params, x)?;
    Ok(f.iter().zip(y).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>() / T::from_count(y.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Train / validation / test proportions; rescaled to sum to one.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![8],
            learning_rate: 0.1,
            max_epochs: 300,
            patience: 30,
            split: [0.75, 0.05, 0.25],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.split.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(ClaError::InvalidArgument("train.split: fractions must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ClaError::InvalidArgument("train.learning_rate: must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(ClaError::InvalidArgument("train.max_epochs: must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(ClaError::InvalidArgument("train.hidden: layer sizes must be positive".into()));
        }
        Ok(())
    }

    /// Row counts `(train, validation, test)` for `n` rows; each part gets at least one row.
    pub fn split_sizes(&self, n: usize) -> (usize, usize, usize) {
        let total: f64 = self.split.iter().sum();
        let n_val = ((self.split[1] / total) * n as f64).round().max(1.0) as usize;
        let n_test = ((self.split[2] / total) * n as f64).round().max(1.0) as usize;
        (n - n_val - n_test, n_val, n_test)
    }
}

/// Row indices assigned to each part of the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T: Scalar> {
    pub params: BaseParams<T>,
    pub validation_error: T,
    pub train_error: T,
    pub test_error: T,
    pub epochs: usize,
    pub split: Split,
}

fn gather<T: Scalar>(x: ArrayView2<'_, T>, y: &[T], idx: &[usize]) -> (Array2<T>, Vec<T>) {
    (x.select(Axis(0), idx), idx.iter().map(|&i| y[i]).collect())
}

/// Full-batch gradient descent on mean squared error with early stopping on
/// the validation split. Returns the parameters with the best validation error.
pub fn train<T: Scalar>(features: ArrayView2<'_, T>, targets: &[T], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let n = features.nrows();
    if targets.len() != n {
        return Err(ClaError::ShapeMismatch { expected: n, found: targets.len() });
    }
    if n < MIN_TRAIN_ROWS {
        return Err(ClaError::TooFewRows { needed: MIN_TRAIN_ROWS, got: n });
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(ClaError::InvalidArgument("train: non-finite target".into()));
    }

    let mut init_rng = rng::stream(cfg.seed, domain::TRAIN, 0, 0);
    let mut split_rng = rng::stream(cfg.seed, domain::TRAIN, 1, 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut split_rng);
    let (n_train, n_val, _) = cfg.split_sizes(n);
    let split = Split {
        train: order[..n_train].to_vec(),
        validation: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };
    let (xt, yt) = gather(features, targets, &split.train);
    let (xv, yv) = gather(features, targets, &split.validation);
    let (xs, ys) = gather(features, targets, &split.test);

    let mut params = BaseParams::<T>::random(features.ncols(), &cfg.hidden, &mut init_rng);
    // Zero output weights with the mean target as bias: training starts from
    // the best constant forecast and a constant target is fit exactly.
    let out = params.layers.last_mut().expect("output layer");
    out.weights.iter_mut().for_each(|w| *w = T::zero());
    out.biases[0] = yt.iter().copied().sum::<T>() / T::from_count(yt.len());

    let lr = T::lit(cfg.learning_rate);
    let mut flat = params.flatten();
    let mut best = params.clone();
    let mut best_val = mse(&params, xv.view(), &yv)?;
    let mut since_best = 0;
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        let (loss, grad) = params.loss_and_gradient(xt.view(), &yt)?;
        if !loss.is_finite() {
            return Err(ClaError::Divergence { epoch });
        }
        for (w, g) in flat.iter_mut().zip(&grad) {
            *w -= lr * *g;
        }
        params.set_flat(&flat);
        epochs = epoch;
        let val = mse(&params, xv.view(), &yv)?;
        if !val.is_finite() {
            return Err(ClaError::Divergence { epoch });
        }
        if val < best_val {
            best_val = val;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        train_error: mse(&best, xt.view(), &yt)?,
        test_error: mse(&best, xs.view(), &ys)?,
        validation_error: best_val,
        params: best,
        epochs,
        split,
    })
}

/// Largest relative deviation between the analytic gradient and central
/// finite differences of the mean squared error.
pub fn gradient_check<T: Scalar>(params: &BaseParams<T>, features: ArrayView2<'_, T>, targets: &[T]) -> Result<T> {
    let (_, analytic) = params.loss_and_gradient(features, targets)?;
    let step = T::epsilon().cbrt();
    let mut probe = params.clone();
    let base = params.flatten();
    let mut flat = base.clone();
    let mut worst = T::zero();
    for i in 0..flat.len() {
        let h = step * base[i].abs().max(T::one());
        flat[i] = base[i] + h;
        probe.set_flat(&flat);
        let up = mse(&probe, features, targets)?;
        flat[i] = base[i] - h;
        probe.set_flat(&flat);
        let down = mse(&probe, features, targets)?;
        flat[i] = base[i];
        let numeric = (up - down) / (h + h);
        let scale = analytic[i].abs().max(numeric.abs());
        let dev = if scale < T::lit(1e-8) { (analytic[i] - numeric).abs() } else { (analytic[i] - numeric).abs() / scale };
        worst = worst.max(dev);
    }
    Ok(worst)
}
