//! Pilot-trained correction network `f(y) ≈ t_th·x`.
//!
//! Inputs are the eight samples of a detected pulse. Training rescales them
//! by the RMS of the pilot OSP values so gradient descent sees unit-scale data
//! regardless of the pilot power; the scale is stored with the model and the
//! public forward map is expressed in shot-noise units.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{ordered_sum, Real};
use crate::signal::{PulseSamples, PULSE_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqualizerMode {
    Linear,
    OneHidden,
}

pub const DEFAULT_HIDDEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualizerModel<T> {
    pub mode: EqualizerMode,
    pub hidden_size: usize,
    pub t_th_target: T,
    /// Rows of input weights: `hidden × 8`, or a single row in linear mode.
    pub w_in: Vec<[T; PULSE_LEN]>,
    /// Hidden biases (empty in linear mode).
    pub b_in: Vec<T>,
    /// Output weights (empty in linear mode).
    pub w_out: Vec<T>,
    pub b_out: T,
    /// Input normalization fixed by the first training run.
    #[serde(default)]
    pub input_scale: Option<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper<T> {
    pub learning_rate: T,
    pub epochs: usize,
    pub batch: usize,
    pub val_fraction: T,
}

impl<T: Real> Default for TrainHyper<T> {
    fn default() -> Self {
        Self { learning_rate: T::lit(1e-2), epochs: 200, batch: 64, val_fraction: T::lit(0.2) }
    }
}

impl<T: Real> TrainHyper<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > T::zero()) || self.epochs == 0 || self.batch == 0 {
            return Err(Error::config("learning rate, epochs and batch must be positive"));
        }
        if !(self.val_fraction >= T::zero() && self.val_fraction < T::one()) {
            return Err(Error::config("validation fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport<T> {
    pub epochs_run: usize,
    /// Training MSE after each epoch (SNU).
    pub loss_history: Vec<T>,
    /// Validation MSE after each epoch (SNU).
    pub val_loss_history: Vec<T>,
    pub final_val_loss: T,
    pub converged: bool,
}

impl<T: Real> TrainReport<T> {
    /// Writes `epoch,train_loss,val_loss` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_loss"]).map_err(csv_err)?;
        for (i, (tr, va)) in self.loss_history.iter().zip(&self.val_loss_history).enumerate() {
            w.write_record([i.to_string(), fmt(*tr), fmt(*va)]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt<T: Real>(v: T) -> String {
    format!("{:e}", v.to_f64_lossy())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrainPolicy<T> {
    /// RMS pilot residual (SNU) above which the model is retrained.
    pub residual_threshold: T,
    pub window: usize,
}

impl<T: Real> RetrainPolicy<T> {
    pub fn new(residual_threshold: T, window: usize) -> Result<Self> {
        if !(residual_threshold > T::zero()) || window == 0 {
            return Err(Error::config("retrain threshold must be positive and window nonzero"));
        }
        Ok(Self { residual_threshold, window })
    }

    /// Threshold tied to the validation error of the last fit: the RMS
    /// residual of a window of `window` pilots stays below
    /// `√mse·(1 + 3/√(2·window))` with ~3σ confidence if the channel is unchanged.
    pub fn from_validation(val_mse: T, window: usize) -> Result<Self> {
        let slack = T::one() + T::lit(3.0) / (T::lit(2.0) * T::of_usize(window.max(1))).sqrt();
        Self::new(val_mse.max(T::min_positive_value()).sqrt() * slack, window)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetrainDecision {
    Keep,
    Retrain,
}

pub fn init_model<T: Real, R: Rng + ?Sized>(
    mode: EqualizerMode,
    hidden_size: usize,
    t_th: T,
    rng: &mut R,
) -> Result<EqualizerModel<T>> {
    if !(t_th > T::zero() && t_th <= T::one()) {
        return Err(Error::config("target slope must lie in (0, 1]"));
    }
    let in_sd = (T::one() / T::of_usize(PULSE_LEN)).sqrt();
    let draw_row = |rng: &mut R| {
        let mut row = [T::zero(); PULSE_LEN];
        for w in &mut row {
            *w = in_sd * T::sample_std_normal(rng);
        }
        row
    };
    match mode {
        EqualizerMode::Linear => Ok(EqualizerModel {
            mode,
            hidden_size: 0,
            t_th_target: t_th,
            w_in: vec![draw_row(rng)],
            b_in: Vec::new(),
            w_out: Vec::new(),
            b_out: T::zero(),
            input_scale: None,
        }),
        EqualizerMode::OneHidden => {
            if hidden_size == 0 {
                return Err(Error::config("one-hidden-layer mode needs at least one hidden unit"));
            }
            let w_in = (0..hidden_size).map(|_| draw_row(rng)).collect();
            let out_sd = (T::one() / T::of_usize(hidden_size)).sqrt();
            let w_out = (0..hidden_size).map(|_| out_sd * T::sample_std_normal(rng)).collect();
            Ok(EqualizerModel {
                mode,
                hidden_size,
                t_th_target: t_th,
                w_in,
                b_in: vec![T::zero(); hidden_size],
                w_out,
                b_out: T::zero(),
                input_scale: None,
            })
        }
    }
}

impl<T: Real> EqualizerModel<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.mode {
            EqualizerMode::Linear => self.w_in.len() == 1 && self.b_in.is_empty() && self.w_out.is_empty(),
            EqualizerMode::OneHidden => {
                self.hidden_size > 0
                    && self.w_in.len() == self.hidden_size
                    && self.b_in.len() == self.hidden_size
                    && self.w_out.len() == self.hidden_size
            }
        };
        if !ok {
            return Err(Error::contract("equalizer parameter shapes do not match the mode"));
        }
        if !(self.t_th_target > T::zero() && self.t_th_target <= T::one()) {
            return Err(Error::contract("target slope must lie in (0, 1]"));
        }
        Ok(())
    }

    fn scale(&self) -> T {
        self.input_scale.unwrap_or_else(T::one)
    }

    fn param_count(&self) -> usize {
        self.w_in.len() * PULSE_LEN + self.b_in.len() + self.w_out.len() + 1
    }

    /// Visits every trainable parameter in the canonical gradient order.
    fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut T)) {
        self.w_in.iter_mut().flatten().for_each(&mut f);
        self.b_in.iter_mut().for_each(&mut f);
        self.w_out.iter_mut().for_each(&mut f);
        f(&mut self.b_out);
    }

    /// Network output on normalized inputs; hidden activations are written to `hidden`.
    fn net(&self, u: &[T; PULSE_LEN], hidden: &mut Vec<T>) -> T {
        hidden.clear();
        match self.mode {
            EqualizerMode::Linear => dot(&self.w_in[0], u) + self.b_out,
            EqualizerMode::OneHidden => {
                let mut out = self.b_out;
                for ((row, &b), &wo) in self.w_in.iter().zip(&self.b_in).zip(&self.w_out) {
                    let z = (dot(row, u) + b).tanh();
                    hidden.push(z);
                    out += wo * z;
                }
                out
            }
        }
    }

    /// Adds `coef · ∂net/∂θ` to `grad` (canonical order).
    fn accumulate_grad(&self, u: &[T; PULSE_LEN], hidden: &[T], coef: T, grad: &mut [T]) {
        match self.mode {
            EqualizerMode::Linear => {
                for k in 0..PULSE_LEN {
                    grad[k] += coef * u[k];
                }
                grad[PULSE_LEN] += coef;
            }
            EqualizerMode::OneHidden => {
                let h = self.hidden_size;
                let (w_in_g, rest) = grad.split_at_mut(h * PULSE_LEN);
                let (b_in_g, rest) = rest.split_at_mut(h);
                let (w_out_g, b_out_g) = rest.split_at_mut(h);
                for j in 0..h {
                    let z = hidden[j];
                    w_out_g[j] += coef * z;
                    let delta = coef * self.w_out[j] * (T::one() - z * z);
                    b_in_g[j] += delta;
                    for k in 0..PULSE_LEN {
                        w_in_g[j * PULSE_LEN + k] += delta * u[k];
                    }
                }
                b_out_g[0] += coef;
            }
        }
    }

    fn normalized(&self, pulse: &PulseSamples<T>) -> [T; PULSE_LEN] {
        let s = self.scale();
        pulse.samples.map(|y| y / s)
    }

    /// Jacobian of the corrected value with respect to the raw samples.
    pub fn input_gradient(&self, pulse: &PulseSamples<T>) -> [T; PULSE_LEN] {
        match self.mode {
            EqualizerMode::Linear => self.w_in[0],
            EqualizerMode::OneHidden => {
                let u = self.normalized(pulse);
                let mut g = [T::zero(); PULSE_LEN];
                for ((row, &b), &wo) in self.w_in.iter().zip(&self.b_in).zip(&self.w_out) {
                    let z = (dot(row, &u) + b).tanh();
                    let d = wo * (T::one() - z * z);
                    for k in 0..PULSE_LEN {
                        g[k] += d * row[k];
                    }
                }
                g
            }
        }
    }
}

fn dot<T: Real>(a: &[T; PULSE_LEN], b: &[T; PULSE_LEN]) -> T {
    let mut acc = T::zero();
    for k in 0..PULSE_LEN {
        acc += a[k] * b[k];
    }
    acc
}

/// Corrected value `f(y)` in shot-noise units.
pub fn forward<T: Real>(model: &EqualizerModel<T>, pulse: &PulseSamples<T>) -> T {
    let mut hidden = Vec::with_capacity(model.hidden_size);
    model.scale() * model.net(&model.normalized(pulse), &mut hidden)
}

/// Like [`forward`] but rejects malformed models.
pub fn try_forward<T: Real>(model: &EqualizerModel<T>, pulse: &PulseSamples<T>) -> Result<T> {
    model.validate()?;
    Ok(forward(model, pulse))
}

pub fn apply<T: Real>(model: &EqualizerModel<T>, pulses: &[PulseSamples<T>]) -> Vec<T> {
    let mut hidden = Vec::with_capacity(model.hidden_size);
    let s = model.scale();
    pulses.iter().map(|p| s * model.net(&model.normalized(p), &mut hidden)).collect()
}

struct Normalized<T> {
    inputs: Vec<[T; PULSE_LEN]>,
    targets: Vec<T>,
}

fn mse_on<T: Real>(model: &EqualizerModel<T>, data: &Normalized<T>, idx: &[usize], hidden: &mut Vec<T>) -> T {
    if idx.is_empty() {
        return T::zero();
    }
    let sum = ordered_sum(idx.iter().map(|&i| {
        let e = model.net(&data.inputs[i], hidden) - data.targets[i];
        e * e
    }));
    sum / T::of_usize(idx.len())
}

/// Minimum number of pilot pairs accepted by [`train`].
pub const MIN_TRAIN_PILOTS: usize = 100;

/// Mini-batch gradient descent on the MSE between `f(y)` and `t_th·x`.
///
/// A model that already carries an input scale is warm-started in place.
pub fn train<T: Real, R: Rng + ?Sized>(
    mut model: EqualizerModel<T>,
    pilots: &[(PulseSamples<T>, T)],
    hyper: &TrainHyper<T>,
    rng: &mut R,
) -> Result<(EqualizerModel<T>, TrainReport<T>)> {
    model.validate()?;
    hyper.validate()?;
    if pilots.len() < MIN_TRAIN_PILOTS {
        return Err(Error::Precision(format!(
            "{} pilot pairs supplied, at least {MIN_TRAIN_PILOTS} required",
            pilots.len()
        )));
    }
    let scale = match model.input_scale {
        Some(s) => s,
        None => {
            let ms = ordered_sum(pilots.iter().map(|(p, _)| {
                let y = p.samples[p.osp_index];
                y * y
            })) / T::of_usize(pilots.len());
            if !(ms > T::zero()) || !ms.is_finite() {
                return Err(Error::degenerate("pilot outputs have zero energy"));
            }
            let s = ms.sqrt();
            model.input_scale = Some(s);
            s
        }
    };
    let data = Normalized {
        inputs: pilots.iter().map(|(p, _)| p.samples.map(|y| y / scale)).collect(),
        targets: pilots.iter().map(|&(_, x)| model.t_th_target * x / scale).collect(),
    };

    let mut order: Vec<usize> = (0..pilots.len()).collect();
    order.shuffle(rng);
    let n_val = (hyper.val_fraction * T::of_usize(pilots.len())).floor().to_usize().unwrap_or(0);
    let (val_idx, train_idx) = order.split_at(n_val.min(pilots.len() - 1));
    let (val_idx, mut train_idx) = (val_idx.to_vec(), train_idx.to_vec());

    let s2 = scale * scale;
    let mut hidden = Vec::with_capacity(model.hidden_size);
    let mut grad = vec![T::zero(); model.param_count()];
    let mut loss_history = Vec::with_capacity(hyper.epochs);
    let mut val_loss_history = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        train_idx.shuffle(rng);
        for batch in train_idx.chunks(hyper.batch) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let scale_b = T::lit(2.0) / T::of_usize(batch.len());
            for &i in batch {
                let u = &data.inputs[i];
                let err = model.net(u, &mut hidden) - data.targets[i];
                model.accumulate_grad(u, &hidden, scale_b * err, &mut grad);
            }
            let mut g = grad.iter();
            let lr = hyper.learning_rate;
            model.for_each_param_mut(|p| *p -= lr * *g.next().expect("gradient length matches parameters"));
        }
        let train_loss = mse_on(&model, &data, &train_idx, &mut hidden) * s2;
        let val_loss = if val_idx.is_empty() { train_loss } else { mse_on(&model, &data, &val_idx, &mut hidden) * s2 };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss at epoch {epoch}; lower the learning rate (currently {})",
                hyper.learning_rate
            )));
        }
        loss_history.push(train_loss);
        val_loss_history.push(val_loss);
    }

    let final_val_loss = *val_loss_history.last().expect("at least one epoch");
    let converged = match loss_history.as_slice() {
        [.., prev, last] => (*prev - *last).abs() <= T::lit(1e-4) * prev.max(T::epsilon()),
        _ => false,
    };
    let report = TrainReport { epochs_run: hyper.epochs, loss_history, val_loss_history, final_val_loss, converged };
    Ok((model, report))
}

/// Worst relative discrepancy between backpropagated and central-difference
/// gradients of the squared pilot error, over every parameter.
pub fn gradient_check<T: Real>(model: &EqualizerModel<T>, pulse: &PulseSamples<T>, pilot_x: T) -> Result<T> {
    model.validate()?;
    let s = model.scale();
    let u = model.normalized(pulse);
    let target = model.t_th_target * pilot_x / s;
    let mut hidden = Vec::with_capacity(model.hidden_size);
    let err = model.net(&u, &mut hidden) - target;
    let mut analytic = vec![T::zero(); model.param_count()];
    model.accumulate_grad(&u, &hidden, T::lit(2.0) * err, &mut analytic);

    let h = T::lit(1e-5);
    let loss = |m: &EqualizerModel<T>, hidden: &mut Vec<T>| {
        let e = m.net(&u, hidden) - target;
        e * e
    };
    let mut probe = model.clone();
    let mut worst = T::zero();
    for (i, &a) in analytic.iter().enumerate() {
        let original = nth_param(&mut probe, i);
        set_nth_param(&mut probe, i, original + h);
        let plus = loss(&probe, &mut hidden);
        set_nth_param(&mut probe, i, original - h);
        let minus = loss(&probe, &mut hidden);
        set_nth_param(&mut probe, i, original);
        let numeric = (plus - minus) / (T::lit(2.0) * h);
        let denom = a.abs().max(numeric.abs()).max(T::lit(1e-4));
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

fn nth_param<T: Real>(model: &mut EqualizerModel<T>, n: usize) -> T {
    let mut i = 0;
    let mut out = T::zero();
    model.for_each_param_mut(|p| {
        if i == n {
            out = *p;
        }
        i += 1;
    });
    out
}

fn set_nth_param<T: Real>(model: &mut EqualizerModel<T>, n: usize, value: T) {
    let mut i = 0;
    model.for_each_param_mut(|p| {
        if i == n {
            *p = value;
        }
        i += 1;
    });
}

/// RMS pilot residual over the most recent `policy.window` pilots.
pub fn pilot_residual_rms<T: Real>(model: &EqualizerModel<T>, recent: &[(PulseSamples<T>, T)], window: usize) -> T {
    let tail = &recent[recent.len().saturating_sub(window)..];
    if tail.is_empty() {
        return T::zero();
    }
    let ms = ordered_sum(tail.iter().map(|(p, x)| {
        let e = forward(model, p) - model.t_th_target * *x;
        e * e
    })) / T::of_usize(tail.len());
    ms.sqrt()
}

pub fn residual_check<T: Real>(
    model: &EqualizerModel<T>,
    recent: &[(PulseSamples<T>, T)],
    policy: &RetrainPolicy<T>,
) -> RetrainDecision {
    if pilot_residual_rms(model, recent, policy.window) > policy.residual_threshold {
        RetrainDecision::Retrain
    } else {
        RetrainDecision::Keep
    }
}

/// Pearson correlation coefficient.
pub fn correlation<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::contract("correlation needs two sequences of equal length ≥ 2"));
    }
    let n = T::of_usize(a.len());
    let ma = ordered_sum(a.iter().copied()) / n;
    let mb = ordered_sum(b.iter().copied()) / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > T::zero() && sbb > T::zero()) {
        return Err(Error::degenerate("correlation undefined for a constant sequence"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).max(-T::one()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{optimum_sample, shape_pulse, OSP_INDEX};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn noiseless_pilots(n: usize, t: f64, sd: f64, r: &mut ChaCha8Rng) -> Vec<(PulseSamples<f64>, f64)> {
        (0..n)
            .map(|_| {
                let x = sd * f64::sample_std_normal(r);
                (shape_pulse(t * x), x)
            })
            .collect()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let lin = init_model::<f64, _>(EqualizerMode::Linear, 99, 0.5, &mut rng(1)).unwrap();
        assert_eq!((lin.w_in.len(), lin.b_in.len(), lin.w_out.len()), (1, 0, 0));
        let a = init_model::<f64, _>(EqualizerMode::OneHidden, 16, 0.5, &mut rng(1)).unwrap();
        let b = init_model::<f64, _>(EqualizerMode::OneHidden, 16, 0.5, &mut rng(1)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(init_model::<f64, _>(EqualizerMode::OneHidden, 0, 0.5f64, &mut rng(1)), Err(Error::Config(_))));
        assert!(forward(&a, &shape_pulse(1e6)).is_finite());
    }

    #[test]
    fn forward_special_cases() {
        let mut m = init_model::<f64, _>(EqualizerMode::OneHidden, 4, 0.5, &mut rng(2)).unwrap();
        m.w_in.iter_mut().for_each(|r| *r = [0.0; PULSE_LEN]);
        m.w_out.iter_mut().for_each(|w| *w = 0.0);
        m.b_out = 0.37;
        assert_eq!(forward(&m, &shape_pulse(5.0)), 0.37);

        let mut lin = init_model::<f64, _>(EqualizerMode::Linear, 0, 0.5, &mut rng(2)).unwrap();
        lin.w_in[0] = [0.0; PULSE_LEN];
        lin.w_in[0][OSP_INDEX] = 1.0;
        let p = shape_pulse(-2.25);
        assert_eq!(forward(&lin, &p), optimum_sample(&p));

        let m = init_model::<f64, _>(EqualizerMode::OneHidden, 16, 0.5, &mut rng(3)).unwrap();
        let bound = m.b_out.abs() + m.w_out.iter().map(|w| w.abs()).sum::<f64>();
        for v in [-1e3, -1.0, 0.0, 2.0, 1e5] {
            assert!(forward(&m, &shape_pulse(v)).abs() <= bound);
        }

        let mut broken = m.clone();
        broken.b_in.pop();
        assert!(matches!(try_forward(&broken, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_channel_converges() {
        let mut r = rng(4);
        let pilots = noiseless_pilots(10_000, 1.0, 2.0, &mut r);
        let model = init_model::<f64, _>(EqualizerMode::OneHidden, DEFAULT_HIDDEN, 1.0, &mut r).unwrap();
        let (_, report) = train(model, &pilots, &TrainHyper::default(), &mut r).unwrap();
        assert!(report.final_val_loss < 1e-3, "val loss {}", report.final_val_loss);
    }

    #[test]
    fn linear_mode_reaches_least_squares_optimum() {
        let mut r = rng(5);
        let t = 0.7;
        let pilots = noiseless_pilots(400, t, 2.0, &mut r);
        let model = init_model::<f64, _>(EqualizerMode::Linear, 0, t, &mut r).unwrap();
        // Full-batch descent on a convex quadratic with a step below 1/λ_max
        // must decrease the loss monotonically.
        let hyper = TrainHyper { learning_rate: 0.05, epochs: 300, batch: 400, val_fraction: 0.0 };
        let (trained, report) = train(model, &pilots, &hyper, &mut r).unwrap();
        assert!(report.loss_history.windows(2).all(|w| w[1] <= w[0]));
        // Exact optimum is zero: the data lie on the plane ω·y = t·x.
        assert!(*report.loss_history.last().unwrap() < 1e-10);
        let held_out = noiseless_pilots(200, t, 2.0, &mut r);
        for (p, x) in &held_out {
            assert!((forward(&trained, p) - t * x).abs() < 1e-3 * 2.0);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let pilots = noiseless_pilots(300, 0.8, 2.0, &mut rng(6));
        let run = || {
            let mut r = rng(7);
            let m = init_model::<f64, _>(EqualizerMode::OneHidden, 8, 0.8, &mut r).unwrap();
            let hyper = TrainHyper { epochs: 20, ..TrainHyper::default() };
            train(m, &pilots, &hyper, &mut r).unwrap().0
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_rejects_small_or_exploding_runs() {
        let mut r = rng(8);
        let m = init_model::<f64, _>(EqualizerMode::Linear, 0, 0.8, &mut r).unwrap();
        let few = noiseless_pilots(50, 0.8, 2.0, &mut r);
        assert!(matches!(train(m.clone(), &few, &TrainHyper::default(), &mut r), Err(Error::Precision(_))));
        let many = noiseless_pilots(200, 0.8, 2.0, &mut r);
        let hyper = TrainHyper { learning_rate: 10.0, epochs: 200, batch: 200, val_fraction: 0.0 };
        assert!(matches!(train(m, &many, &hyper, &mut r), Err(Error::Training(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(9);
        let lin = init_model::<f64, _>(EqualizerMode::Linear, 0, 0.6, &mut r).unwrap();
        assert!(gradient_check(&lin, &shape_pulse(0.8), 1.1).unwrap() < 1e-8);
        for _ in 0..20 {
            let m = init_model::<f64, _>(EqualizerMode::OneHidden, 16, 0.6, &mut r).unwrap();
            let x = f64::sample_std_normal(&mut r);
            let err = gradient_check(&m, &shape_pulse(0.7 * x + 0.1), x).unwrap();
            assert!(err < 1e-6, "rel err {err}");
        }
        let m = init_model::<f64, _>(EqualizerMode::OneHidden, 16, 0.6, &mut r).unwrap();
        assert!(gradient_check(&m, &PulseSamples::zeros(), 0.0).unwrap() < 1e-6);
    }

    #[test]
    fn residual_policy() {
        let mut r = rng(10);
        let mut m = init_model::<f64, _>(EqualizerMode::Linear, 0, 0.5, &mut r).unwrap();
        m.w_in[0] = [0.0; PULSE_LEN];
        m.w_in[0][OSP_INDEX] = 1.0;
        let policy = RetrainPolicy::new(0.1, 50).unwrap();
        let exact: Vec<_> = (0..50).map(|i| (shape_pulse(0.5 * i as f64), i as f64)).collect();
        assert_eq!(residual_check(&m, &exact, &policy), RetrainDecision::Keep);
        let off: Vec<_> = (0..50).map(|i| (shape_pulse(0.5 * i as f64 + 0.5), i as f64)).collect();
        assert_eq!(residual_check(&m, &off, &policy), RetrainDecision::Retrain);
    }

    #[test]
    fn drift_triggers_retrain_within_one_window() {
        let mut r = rng(11);
        let t = 0.7;
        let noisy = |t_ch: f64, n: usize, r: &mut ChaCha8Rng| -> Vec<(PulseSamples<f64>, f64)> {
            (0..n)
                .map(|_| {
                    let x = 20.0 * f64::sample_std_normal(r);
                    let mut p = shape_pulse(t_ch * x);
                    p.samples.iter_mut().for_each(|s| *s += 0.1 * f64::sample_std_normal(r));
                    (p, x)
                })
                .collect()
        };
        let m = init_model::<f64, _>(EqualizerMode::Linear, 0, t, &mut r).unwrap();
        let (m, rep) = train(m, &noisy(t, 500, &mut r), &TrainHyper::default(), &mut r).unwrap();
        let window = 100;
        let policy = RetrainPolicy::from_validation(rep.final_val_loss, window).unwrap();
        assert_eq!(residual_check(&m, &noisy(t, window, &mut r), &policy), RetrainDecision::Keep);
        let mut stream = noisy(t, window / 2, &mut r);
        stream.extend(noisy(0.8 * t, window, &mut r));
        assert_eq!(residual_check(&m, &stream, &policy), RetrainDecision::Retrain);
    }

    #[test]
    fn apply_is_elementwise() {
        let m = init_model::<f64, _>(EqualizerMode::OneHidden, 4, 0.5, &mut rng(12)).unwrap();
        assert!(apply(&m, &[]).is_empty());
        let pulses = [shape_pulse(1.0), shape_pulse(-3.0)];
        let out = apply(&m, &pulses);
        assert_eq!(out, vec![forward(&m, &pulses[0]), forward(&m, &pulses[1])]);
    }

    #[test]
    fn pearson() {
        let a: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((correlation(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((correlation(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(correlation(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Degenerate(_))));
        let mut r = rng(13);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| f64::sample_std_normal(&mut r)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::sample_std_normal(&mut r)).collect();
        assert!(correlation(&x, &y).unwrap().abs() < 0.01);
    }

    #[test]
    fn loss_csv_has_one_row_per_epoch() {
        let report = TrainReport {
            epochs_run: 2,
            loss_history: vec![1.0, 0.5],
            val_loss_history: vec![1.1, 0.6],
            final_val_loss: 0.6,
            converged: false,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("epoch,train_loss,val_loss"));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = init_model::<f64, _>(EqualizerMode::OneHidden, 5, 0.5, &mut rng(14)).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: EqualizerModel<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }
}
