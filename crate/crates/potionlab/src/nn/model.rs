//! Model parameters, forward/backward passes and the two gradient
//! primitives: mean cross-entropy gradient (training/Fisher) and the
//! gradient of the l2^w output-norm (label-free importance).
//!
//! All math is `f64`. Per-sample work composes through the deterministic
//! chunked reductions in [`crate::par`], so results are bitwise-reproducible
//! regardless of thread count.

use crate::data::View;
use crate::error::{Error, Result};
use crate::nn::spec::{plan_layers, param_count, LayerPlan, LayerSpec, ModelSpec, Shape};
use crate::par;

/// Zero-norm threshold below which the l2^w gradient with w < 2 is treated
/// as degenerate (non-differentiable at the origin): the gradient is defined
/// as the zero subgradient and flagged.
pub const OUTNORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    plans: Vec<LayerPlan>,
    pub params: Vec<f64>,
}

/// Result of [`Model::outnorm_gradient`]: the parameter gradient of
/// ||logits||_2^w and whether the zero-norm subgradient case was hit.
#[derive(Debug, Clone)]
pub struct OutnormGradient {
    pub gradient: Vec<f64>,
    pub degenerate: bool,
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        let e = (z - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Model {
    /// Builds a model with Kaiming-uniform weights (bound sqrt(6/fan_in))
    /// and zero biases, deterministic in `spec.seed`.
    pub fn build(spec: ModelSpec) -> Result<Model> {
        let plans = plan_layers(&spec)?;
        let total = param_count(&plans);
        let mut params = vec![0.0; total];
        let mut rng = crate::data::rng_from(crate::data::derive_seed(spec.seed, "model-init"));
        for plan in &plans {
            if plan.params == 0 {
                continue;
            }
            let fan_in = plan.fan_in();
            let bound = (6.0 / fan_in as f64).sqrt();
            let weights = plan.params - bias_count(&plan.spec);
            for p in params[plan.offset..plan.offset + weights].iter_mut() {
                let u: f64 = rand::Rng::random(&mut rng);
                *p = bound * (2.0 * u - 1.0);
            }
            // Biases (the tail of the slice) stay zero.
        }
        Ok(Model { spec, plans, params })
    }

    /// Wraps existing parameters (e.g. loaded from disk).
    pub fn from_params(spec: ModelSpec, params: Vec<f64>) -> Result<Model> {
        let plans = plan_layers(&spec)?;
        let total = param_count(&plans);
        if params.len() != total {
            return Err(Error::Config(format!(
                "parameter vector has {} values, spec wants {total}",
                params.len()
            )));
        }
        Ok(Model { spec, plans, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.height * self.spec.input.width * self.spec.input.channels
    }

    pub fn classes(&self) -> usize {
        self.spec.classes as usize
    }

    pub(crate) fn check_view(&self, view: &View) -> Result<()> {
        let img = &view.dataset().images;
        if img.height() != self.spec.input.height
            || img.width() != self.spec.input.width
            || img.channels() != self.spec.input.channels
        {
            return Err(Error::Config(format!(
                "dataset images are {}x{}x{}, model expects {}x{}x{}",
                img.height(),
                img.width(),
                img.channels(),
                self.spec.input.height,
                self.spec.input.width,
                self.spec.input.channels
            )));
        }
        if view.is_empty() {
            return Err(Error::Degenerate("empty dataset view".into()));
        }
        Ok(())
    }

    /// Forward pass keeping every layer input (needed for backprop).
    /// `trace[l]` is the input of layer `l`; the last entry is the logits.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        debug_assert_eq!(x.len(), self.input_len());
        let mut trace = Vec::with_capacity(self.plans.len() + 1);
        trace.push(x.to_vec());
        for plan in &self.plans {
            let input = trace.last().unwrap();
            let mut out = vec![0.0; plan.output.size()];
            self.forward_layer(plan, input, &mut out);
            trace.push(out);
        }
        trace
    }

    fn forward_layer(&self, plan: &LayerPlan, input: &[f64], out: &mut [f64]) {
        match plan.spec {
            LayerSpec::Dense { inputs, outputs } => {
                let w = &self.params[plan.offset..plan.offset + inputs * outputs];
                let b = &self.params[plan.offset + inputs * outputs..plan.offset + plan.params];
                for o in 0..outputs {
                    let row = &w[o * inputs..(o + 1) * inputs];
                    let mut acc = b[o];
                    for (wi, xi) in row.iter().zip(input) {
                        acc += wi * xi;
                    }
                    out[o] = acc;
                }
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                let (h, w_in) = match plan.input {
                    Shape::Spatial { h, w, .. } => (h, w),
                    Shape::Flat(_) => unreachable!("conv input is spatial by planning"),
                };
                let (oh, ow) = (h - kernel + 1, w_in - kernel + 1);
                let wlen = out_channels * in_channels * kernel * kernel;
                let weights = &self.params[plan.offset..plan.offset + wlen];
                let bias = &self.params[plan.offset + wlen..plan.offset + plan.params];
                for r in 0..oh {
                    for s in 0..ow {
                        for oc in 0..out_channels {
                            let mut acc = bias[oc];
                            for ic in 0..in_channels {
                                for u in 0..kernel {
                                    for v in 0..kernel {
                                        let wi = ((oc * in_channels + ic) * kernel + u) * kernel + v;
                                        let xi = ((r + u) * w_in + (s + v)) * in_channels + ic;
                                        acc += weights[wi] * input[xi];
                                    }
                                }
                            }
                            out[(r * ow + s) * out_channels + oc] = acc;
                        }
                    }
                }
            }
            LayerSpec::Relu => {
                for (o, &xi) in out.iter_mut().zip(input) {
                    *o = if xi > 0.0 { xi } else { 0.0 };
                }
            }
            LayerSpec::Flatten => out.copy_from_slice(input),
        }
    }

    /// Backpropagates a gradient w.r.t. the logits, *adding* parameter
    /// gradients into `grad_acc` (callers zero it when they want a plain
    /// gradient; accumulation across samples composes means cheaply).
    fn backward_accumulate(&self, trace: &[Vec<f64>], dlogits: &[f64], grad_acc: &mut [f64]) {
        let mut delta = dlogits.to_vec();
        for (l, plan) in self.plans.iter().enumerate().rev() {
            let input = &trace[l];
            match plan.spec {
                LayerSpec::Dense { inputs, outputs } => {
                    let w = &self.params[plan.offset..plan.offset + inputs * outputs];
                    let mut din = vec![0.0; inputs];
                    for o in 0..outputs {
                        let d = delta[o];
                        let row = &w[o * inputs..(o + 1) * inputs];
                        let grow = &mut grad_acc[plan.offset + o * inputs..plan.offset + (o + 1) * inputs];
                        for i in 0..inputs {
                            grow[i] += d * input[i];
                            din[i] += d * row[i];
                        }
                        grad_acc[plan.offset + inputs * outputs + o] += d;
                    }
                    delta = din;
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let (h, w_in) = match plan.input {
                        Shape::Spatial { h, w, .. } => (h, w),
                        Shape::Flat(_) => unreachable!(),
                    };
                    let (oh, ow) = (h - kernel + 1, w_in - kernel + 1);
                    let wlen = out_channels * in_channels * kernel * kernel;
                    let weights = &self.params[plan.offset..plan.offset + wlen];
                    let mut din = vec![0.0; input.len()];
                    for r in 0..oh {
                        for s in 0..ow {
                            for oc in 0..out_channels {
                                let d = delta[(r * ow + s) * out_channels + oc];
                                grad_acc[plan.offset + wlen + oc] += d;
                                for ic in 0..in_channels {
                                    for u in 0..kernel {
                                        for v in 0..kernel {
                                            let wi = ((oc * in_channels + ic) * kernel + u) * kernel
                                                + v;
                                            let xi =
                                                ((r + u) * w_in + (s + v)) * in_channels + ic;
                                            grad_acc[plan.offset + wi] += d * input[xi];
                                            din[xi] += d * weights[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    delta = din;
                }
                LayerSpec::Relu => {
                    for (d, &xi) in delta.iter_mut().zip(input) {
                        if xi <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                LayerSpec::Flatten => {}
            }
        }
    }

    /// Class probabilities for every sample in the view (softmax rows).
    pub fn forward(&self, view: &View) -> Result<Vec<Vec<f64>>> {
        self.check_view(view)?;
        let k = self.classes();
        Ok(par::map_collect(view.len(), |j| {
            let trace = self.forward_trace(view.image(j));
            let logits = trace.last().unwrap();
            let mut p = vec![0.0; k];
            softmax_into(logits, &mut p);
            p
        }))
    }

    /// Logits for one raw sample.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).last().unwrap().clone()
    }

    /// Adds the cross-entropy gradient of one sample into `grad_acc` and
    /// returns (loss, correct) for that sample.
    pub(crate) fn ce_sample_stats(
        &self,
        x: &[f64],
        label: u32,
        grad_acc: &mut [f64],
    ) -> (f64, bool) {
        let trace = self.forward_trace(x);
        let logits = trace.last().unwrap();
        let k = self.classes();
        let mut dlogits = vec![0.0; k];
        softmax_into(logits, &mut dlogits);
        let correct = argmax(&dlogits) == label as usize;
        let p_label = dlogits[label as usize];
        // The floor caps the loss at ~690.78 for vanishing probabilities but
        // must not mask NaN (f64::max would): a poisoned forward pass has to
        // surface as a non-finite loss, not a silently clamped one.
        let loss = if p_label.is_nan() {
            f64::NAN
        } else {
            -(p_label.max(1e-300)).ln()
        };
        dlogits[label as usize] -= 1.0;
        self.backward_accumulate(&trace, &dlogits, grad_acc);
        (loss, correct)
    }

    /// Mean cross-entropy gradient over the view, plus mean loss and
    /// accuracy of the same forward passes. The reduction carries loss and
    /// correct-count as two extra lanes of the gradient accumulator, so one
    /// deterministic pass yields all three.
    pub fn loss_stats_gradient(&self, view: &View) -> Result<(Vec<f64>, f64, f64)> {
        self.check_view(view)?;
        let dim = self.param_count();
        let total = par::try_sum_vectors(view.len(), dim + 2, |j, buf| {
            let (loss, correct) = self.ce_sample_stats(view.image(j), view.label(j), &mut buf[..dim]);
            buf[dim] += loss;
            buf[dim + 1] += correct as usize as f64;
            Ok(())
        })?;
        let n = view.len() as f64;
        let mut grad = total;
        let correct = grad.pop().unwrap();
        let loss = grad.pop().unwrap();
        for g in grad.iter_mut() {
            *g /= n;
        }
        Ok((grad, loss / n, correct / n))
    }

    /// Mean cross-entropy gradient w.r.t. the view's labels.
    pub fn loss_gradient(&self, view: &View) -> Result<Vec<f64>> {
        Ok(self.loss_stats_gradient(view)?.0)
    }

    /// Mean cross-entropy loss over the view.
    pub fn mean_loss(&self, view: &View) -> Result<f64> {
        Ok(self.loss_stats_gradient(view)?.1)
    }

    /// Writes the gradient of ||logits||_2^w for one sample into `out`
    /// (overwriting it); returns whether the zero-norm w<2 subgradient case
    /// was hit (gradient is then all zeros).
    pub(crate) fn outnorm_gradient_into(&self, x: &[f64], w: f64, out: &mut [f64]) -> bool {
        out.fill(0.0);
        let trace = self.forward_trace(x);
        let logits = trace.last().unwrap();
        let norm = logits.iter().map(|z| z * z).sum::<f64>().sqrt();
        let dlogits: Vec<f64> = if w == 2.0 {
            // d||z||^2/dz = 2z, exact even at the origin.
            logits.iter().map(|z| 2.0 * z).collect()
        } else if norm <= OUTNORM_EPS {
            if w < 2.0 {
                // ||z||^w is not differentiable at 0 for w < 2; use the zero
                // subgradient and flag the sample.
                return true;
            }
            vec![0.0; logits.len()]
        } else {
            let scale = w * norm.powf(w - 2.0);
            logits.iter().map(|z| scale * z).collect()
        };
        self.backward_accumulate(&trace, &dlogits, out);
        false
    }

    /// Gradient of the w-powered l2 norm of the raw (pre-softmax) output
    /// for a single sample. `w` must be positive and finite.
    pub fn outnorm_gradient(&self, x: &[f64], w: f64) -> Result<OutnormGradient> {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Config(format!("norm power w = {w} must be positive")));
        }
        if x.len() != self.input_len() {
            return Err(Error::Config(format!(
                "sample has {} values, model expects {}",
                x.len(),
                self.input_len()
            )));
        }
        let mut gradient = vec![0.0; self.param_count()];
        let degenerate = self.outnorm_gradient_into(x, w, &mut gradient);
        Ok(OutnormGradient { gradient, degenerate })
    }

    /// Fraction of view samples whose argmax prediction matches the view's
    /// label column. Ties pick the lowest class index.
    pub fn evaluate_accuracy(&self, view: &View) -> Result<f64> {
        self.check_view(view)?;
        let correct = par::count_where(view.len(), |j| {
            let trace = self.forward_trace(view.image(j));
            argmax(trace.last().unwrap()) == view.label(j) as usize
        });
        Ok(correct as f64 / view.len() as f64)
    }
}

fn bias_count(spec: &LayerSpec) -> usize {
    match *spec {
        LayerSpec::Dense { outputs, .. } => outputs,
        LayerSpec::Conv2d { out_channels, .. } => out_channels,
        _ => 0,
    }
}
