//! Meta-learning pre-training optimizer.
//!
//! One meta step runs `k` inner gradient-descent updates on train batches
//! starting from the meta parameters θ₀, then updates θ₀ with the gradient
//! of the test-batch loss taken at the adapted parameters θₖ (first-order
//! approximation: the Hessian product chain is dropped). With `k = 0` the
//! loop degrades to the plain base optimizer.
//!
//! The base update is either plain gradient descent or an adaptive update
//! with decoupled weight decay (β₁ = 0.9, β₂ = 0.999, ε = 1e−8). Inner and
//! meta updates keep separate moment state: the inner scratch state is
//! re-copied from the persistent meta state at the start of every meta step,
//! so inner exploration never disturbs the meta trajectory.

use crate::error::{Error, Result};
use crate::labeler::ModelParams;
use crate::real::Real;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Linear warmup to `base_rate`, then linear decay to zero at `total_steps`.
///
/// The warmup branch uses `step + 1` so the very first update is non-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningRateSchedule {
    pub base_rate: f64,
    pub warmup_fraction: f64,
    pub total_steps: u64,
}

impl LearningRateSchedule {
    pub fn new(base_rate: f64, warmup_fraction: f64, total_steps: u64) -> Result<Self> {
        if base_rate <= 0.0 {
            return Err(Error::Config(format!("base rate {base_rate} must be > 0")));
        }
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup fraction {warmup_fraction} must lie in [0, 1)"
            )));
        }
        if total_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        Ok(Self {
            base_rate,
            warmup_fraction,
            total_steps,
        })
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_fraction * self.total_steps as f64).floor() as u64
    }

    /// Learning rate at `step` (0-based).
    pub fn rate(&self, step: u64) -> f64 {
        let warmup = self.warmup_steps();
        if step < warmup {
            self.base_rate * (step + 1) as f64 / warmup as f64
        } else if step >= self.total_steps {
            0.0
        } else {
            self.base_rate * (self.total_steps - step) as f64
                / (self.total_steps - warmup) as f64
        }
    }

    /// Rate as a fraction of the base rate, for scaling α and β jointly.
    pub fn scale(&self, step: u64) -> f64 {
        self.rate(step) / self.base_rate
    }
}

/// Which base optimizer backs the inner and meta updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    /// `update(g) = g`.
    Plain,
    /// Bias-corrected adaptive moments with decoupled weight decay.
    AdamW,
}

impl BaseKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "adamw" => Ok(Self::AdamW),
            other => Err(Error::Config(format!(
                "base_optimizer must be plain or adamw, got {other:?}"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::AdamW => "adamw",
        }
    }
}

/// Moment accumulators and step counter of one base-optimizer instance.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseState<F: Real> {
    Plain,
    AdamW { m: Vec<F>, v: Vec<F>, step: u64 },
}

impl<F: Real> BaseState<F> {
    pub fn new(kind: BaseKind, n: usize) -> Self {
        match kind {
            BaseKind::Plain => Self::Plain,
            BaseKind::AdamW => Self::AdamW {
                m: vec![F::zero(); n],
                v: vec![F::zero(); n],
                step: 0,
            },
        }
    }
}

/// One base-optimizer update: returns the parameter delta for `rate`.
///
/// Plain mode is exactly `rate × grads`. Adaptive mode applies
/// bias-corrected first/second moments and adds the decoupled weight-decay
/// term `rate × weight_decay × θ`.
pub fn base_update<F: Real>(
    state: &mut BaseState<F>,
    params: &[F],
    grads: &[F],
    rate: f64,
    weight_decay: f64,
) -> Vec<F> {
    let rate_f = F::cast(rate);
    match state {
        BaseState::Plain => grads.iter().map(|&g| rate_f * g).collect(),
        BaseState::AdamW { m, v, step } => {
            *step += 1;
            let b1 = F::cast(ADAM_BETA1);
            let b2 = F::cast(ADAM_BETA2);
            let eps = F::cast(ADAM_EPS);
            let c1 = F::cast(1.0 - ADAM_BETA1.powi(*step as i32));
            let c2 = F::cast(1.0 - ADAM_BETA2.powi(*step as i32));
            let wd = F::cast(weight_decay);
            let mut delta = Vec::with_capacity(grads.len());
            for i in 0..grads.len() {
                let g = grads[i];
                m[i] = b1 * m[i] + (F::one() - b1) * g;
                v[i] = b2 * v[i] + (F::one() - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                delta.push(rate_f * (m_hat / (v_hat.sqrt() + eps) + wd * params[i]));
            }
            delta
        }
    }
}

/// Parameter buffers the optimizer can read and update in place.
pub trait Params<F: Real>: Clone {
    fn values(&self) -> &[F];
    fn values_mut(&mut self) -> &mut [F];
}

impl<F: Real> Params<F> for Vec<F> {
    fn values(&self) -> &[F] {
        self
    }

    fn values_mut(&mut self) -> &mut [F] {
        self
    }
}

impl<F: Real> Params<F> for ModelParams<F> {
    fn values(&self) -> &[F] {
        ModelParams::values(self)
    }

    fn values_mut(&mut self) -> &mut [F] {
        ModelParams::values_mut(self)
    }
}

/// Hyper-parameters of the meta loop.
#[derive(Debug, Clone)]
pub struct MetaConfig {
    /// Inner learning rate α.
    pub alpha: f64,
    /// Meta learning rate β.
    pub beta: f64,
    /// Meta train steps k (inner updates per meta step).
    pub k: usize,
    pub base: BaseKind,
    /// Decoupled weight decay, adaptive mode only.
    pub weight_decay: f64,
    /// Shared warmup/decay shape applied to both α and β, indexed by meta
    /// test steps. `None` keeps the rates constant.
    pub schedule: Option<LearningRateSchedule>,
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::Config("α and β must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step diagnostics for structured logging.
#[derive(Debug, Clone)]
pub struct MetaStepDiagnostics {
    /// 0-based index of the completed meta test step.
    pub step: u64,
    pub inner_losses: Vec<f64>,
    pub meta_loss: f64,
    /// Scheduled rates in effect during this step.
    pub alpha: f64,
    pub beta: f64,
}

/// Meta parameters θ₀ plus everything one meta step needs.
#[derive(Debug, Clone)]
pub struct MetaOptimizer<F: Real, P: Params<F>> {
    theta0: P,
    inner_theta: P,
    config: MetaConfig,
    meta_base: BaseState<F>,
    inner_base: BaseState<F>,
    step: u64,
    grad_evals: u64,
}

impl<F: Real, P: Params<F>> MetaOptimizer<F, P> {
    pub fn new(theta0: P, config: MetaConfig) -> Result<Self> {
        Self::with_progress(theta0, config, 0, 0)
    }

    /// Resumes at a given schedule position. Moment state starts fresh, so
    /// the continued trajectory is exact only for the plain base.
    pub fn with_progress(
        theta0: P,
        config: MetaConfig,
        step: u64,
        grad_evals: u64,
    ) -> Result<Self> {
        config.validate()?;
        let n = theta0.values().len();
        let inner_theta = theta0.clone();
        let meta_base = BaseState::new(config.base, n);
        let inner_base = BaseState::new(config.base, n);
        Ok(Self {
            theta0,
            inner_theta,
            config,
            meta_base,
            inner_base,
            step,
            grad_evals,
        })
    }

    pub fn theta0(&self) -> &P {
        &self.theta0
    }

    pub fn into_theta0(self) -> P {
        self.theta0
    }

    pub fn config(&self) -> &MetaConfig {
        &self.config
    }

    /// Completed meta test steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Total `loss_fn` evaluations so far; one meta step costs `k + 1`.
    pub fn grad_evals(&self) -> u64 {
        self.grad_evals
    }

    fn check_finite(&self, what: &'static str, loss: F, grads: &[F]) -> Result<()> {
        if !loss.into_f64().is_finite() || grads.iter().any(|g| !g.into_f64().is_finite()) {
            return Err(Error::Divergence {
                what,
                step: self.step,
            });
        }
        Ok(())
    }

    /// Runs one meta step: `k` inner updates on `train_batches` starting
    /// from θ₀, then one meta update of θ₀ with the test-batch gradient
    /// taken at θₖ. The inner scratch parameters and moments never leak
    /// into θ₀ except through the meta update.
    pub fn meta_step<B>(
        &mut self,
        train_batches: &[B],
        test_batch: &B,
        mut loss_fn: impl FnMut(&P, &B) -> Result<(F, Vec<F>)>,
    ) -> Result<MetaStepDiagnostics> {
        if train_batches.len() != self.config.k {
            return Err(Error::Config(format!(
                "meta step needs k = {} train batches, got {}",
                self.config.k,
                train_batches.len()
            )));
        }
        let scale = self
            .config
            .schedule
            .as_ref()
            .map_or(1.0, |s| s.scale(self.step));
        let alpha = self.config.alpha * scale;
        let beta = self.config.beta * scale;

        self.inner_theta
            .values_mut()
            .copy_from_slice(self.theta0.values());
        self.inner_base = self.meta_base.clone();

        let mut inner_losses = Vec::with_capacity(self.config.k);
        for batch in train_batches {
            let (loss, grads) = loss_fn(&self.inner_theta, batch)?;
            self.grad_evals += 1;
            self.check_finite("inner loss or gradient", loss, &grads)?;
            let delta = base_update(
                &mut self.inner_base,
                self.inner_theta.values(),
                &grads,
                alpha,
                self.config.weight_decay,
            );
            for (p, d) in self.inner_theta.values_mut().iter_mut().zip(&delta) {
                *p = *p - *d;
            }
            inner_losses.push(loss.into_f64());
        }

        let (meta_loss, grads) = loss_fn(&self.inner_theta, test_batch)?;
        self.grad_evals += 1;
        self.check_finite("meta loss or gradient", meta_loss, &grads)?;
        let delta = base_update(
            &mut self.meta_base,
            self.theta0.values(),
            &grads,
            beta,
            self.config.weight_decay,
        );
        for (p, d) in self.theta0.values_mut().iter_mut().zip(&delta) {
            *p = *p - *d;
        }

        let diag = MetaStepDiagnostics {
            step: self.step,
            inner_losses,
            meta_loss: meta_loss.into_f64(),
            alpha,
            beta,
        };
        self.step += 1;
        Ok(diag)
    }
}
