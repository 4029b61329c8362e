//! Mini-batch training with Adam and a cosine learning-rate schedule.

use std::f64::consts::PI;

use candle_core::{Tensor, Var};
use csi_inpaint_core::metrics::{self, SampleMetrics, SsimParams};
use csi_inpaint_core::seed;
use rand::seq::SliceRandom;

use crate::config::{Mode, TrainConfig};
use crate::data::{make_batch, unstack, Sample};
use crate::error::{ModelError, Result};
use crate::loss::reconstruction_loss;
use crate::network::InpaintNet;

/// Loss of `samples` under the current weights, as a graph-attached scalar.
pub fn batch_loss(net: &InpaintNet, samples: &[&Sample], mode: Mode, ssim_weight: f64) -> Result<Tensor> {
    let (batch, truth) = make_batch(samples, net.dtype())?;
    let out = net.forward(&batch, mode)?;
    let (b, l, h, w, c) = out.dims5()?;
    reconstruction_loss(
        &out.reshape((b * l, h, w, c))?,
        &truth.reshape((b * l, h, w, c))?,
        ssim_weight,
        &SsimParams::default(),
    )
}

/// Adam moment estimates, one pair per parameter in store order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros(params: &[(String, Var)]) -> Result<Self> {
        let zeros = params
            .iter()
            .map(|(_, v)| Ok(v.as_tensor().zeros_like()?))
            .collect::<Result<Vec<_>>>()?;
        Ok(AdamState { m: zeros.clone(), v: zeros })
    }
}

#[derive(Debug)]
pub struct Trainer {
    net: InpaintNet,
    mode: Mode,
    config: TrainConfig,
    adam: AdamState,
    step: u64,
    loss_curve: Vec<f64>,
}

impl Trainer {
    pub fn new(net: InpaintNet, mode: Mode, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::zeros(net.params().entries())?;
        Ok(Trainer {
            net,
            mode,
            config,
            adam,
            step: 0,
            loss_curve: Vec::new(),
        })
    }

    /// Restores optimizer progress, e.g. from a checkpoint.
    pub fn resume(
        net: InpaintNet,
        mode: Mode,
        config: TrainConfig,
        adam: AdamState,
        step: u64,
        loss_curve: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        if adam.m.len() != net.params().entries().len() || adam.v.len() != adam.m.len() {
            return Err(ModelError::CheckpointMismatch(
                "optimizer state does not match the parameter list".into(),
            ));
        }
        Ok(Trainer {
            net,
            mode,
            config,
            adam,
            step,
            loss_curve,
        })
    }

    pub fn net(&self) -> &InpaintNet {
        &self.net
    }

    pub fn into_net(self) -> InpaintNet {
        self.net
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Allows extending or shortening the schedule when resuming.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.epochs = epochs;
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn loss_curve(&self) -> &[f64] {
        &self.loss_curve
    }

    pub fn epochs_done(&self) -> usize {
        self.loss_curve.len()
    }

    fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.config.batch_size) as u64
    }

    /// Cosine decay from `learning_rate` to `min_learning_rate` over the
    /// configured number of epochs.
    pub fn learning_rate(&self, step: u64, n_samples: usize) -> f64 {
        let total = (self.config.epochs as u64 * self.steps_per_epoch(n_samples)).max(1);
        let t = (step as f64 / total as f64).min(1.0);
        let (hi, lo) = (self.config.learning_rate, self.config.min_learning_rate);
        lo + 0.5 * (hi - lo) * (1.0 + (PI * t).cos())
    }

    fn apply_adam(&mut self, grads: &candle_core::backprop::GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, (_, var)) in self.net.params().entries().iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // detached so the moments do not chain graphs across steps
            let g = g.detach();
            let m = ((&self.adam.m[i] * c.beta1)? + (&g * (1.0 - c.beta1))?)?.detach();
            let v = ((&self.adam.v[i] * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?.detach();
            let denom = ((&v / bc2)?.sqrt()? + c.eps)?;
            let update = ((&m / bc1)? / denom)?;
            let next = (var.as_tensor().detach() - (update * lr)?)?;
            var.set(&next)?;
            self.adam.m[i] = m;
            self.adam.v[i] = v;
        }
        Ok(())
    }

    /// One pass over `samples` in a seeded shuffled order; returns the
    /// sample-weighted mean loss, which is also appended to the loss curve.
    pub fn train_epoch(&mut self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(ModelError::Shape("training split is empty".into()));
        }
        let epoch = self.epochs_done();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut seed::rng(self.config.seed, "shuffle", &[epoch as u64]));
        let mut total = 0.0;
        for (step_in_epoch, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let loss = batch_loss(&self.net, &batch, self.mode, self.config.ssim_weight)?;
            let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    step: step_in_epoch,
                    loss: value,
                });
            }
            let grads = loss.backward()?;
            let lr = self.learning_rate(self.step, samples.len());
            self.apply_adam(&grads, lr)?;
            total += value * batch.len() as f64;
        }
        let mean = total / samples.len() as f64;
        self.loss_curve.push(mean);
        Ok(mean)
    }

    /// Trains until the configured epoch count, calling `on_epoch` with
    /// (epoch index, mean loss) after each epoch.
    pub fn fit(&mut self, samples: &[Sample], mut on_epoch: impl FnMut(usize, f64)) -> Result<()> {
        while self.epochs_done() < self.config.epochs {
            let loss = self.train_epoch(samples)?;
            on_epoch(self.epochs_done() - 1, loss);
        }
        Ok(())
    }
}

/// Restored windows for `samples`, in order.
pub fn predict(net: &InpaintNet, samples: &[Sample], mode: Mode, batch_size: usize) -> Result<Vec<ndarray::Array4<f32>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (batch, _) = make_batch(&refs, net.dtype())?;
        out.extend(unstack(&net.forward(&batch, mode)?.detach())?);
    }
    Ok(out)
}

/// Per-sample PSNR and SSIM of the restored windows against the truth.
pub fn evaluate(net: &InpaintNet, samples: &[Sample], mode: Mode, batch_size: usize) -> Result<Vec<SampleMetrics>> {
    let restored = predict(net, samples, mode, batch_size)?;
    restored
        .iter()
        .zip(samples)
        .map(|(r, s)| Ok(metrics::window_metrics(&r.view(), &s.truth.view(), &SsimParams::default())?))
        .collect()
}
