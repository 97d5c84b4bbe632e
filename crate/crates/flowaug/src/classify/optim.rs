//! First-order optimizers (momentum SGD, Adam) and learning-rate schedules.
//!
//! Optimizer state and update arithmetic run in `f64` regardless of the
//! parameter width; updates narrow on write. A step first stages every new
//! value, validates that all of them are finite, and only then commits, so a
//! failed step leaves parameters and state untouched.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the learning rate evolves over training.
#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleKind {
    /// Always the base rate.
    Constant,
    /// Continuous decay `base · rate^(step / interval)`.
    Exponential { rate: f64, interval: u64 },
    /// `base · factor^(number of listed epochs ≤ current epoch)`.
    Milestones { epochs: Vec<usize>, factor: f64 },
    /// Linear ramp `base · min(1, max(step, 1) / steps)`; the `max(step, 1)`
    /// keeps the very first step strictly positive.
    LinearWarmup { steps: u64 },
}

/// Base learning rate plus its evolution rule.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub kind: ScheduleKind,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        LrSchedule { base, kind: ScheduleKind::Constant }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(Error::invalid("schedule", format!("base rate {} must be positive", self.base)));
        }
        match &self.kind {
            ScheduleKind::Constant => {}
            ScheduleKind::Exponential { rate, interval } => {
                if !(*rate > 0.0 && rate.is_finite()) || *interval == 0 {
                    return Err(Error::invalid(
                        "schedule",
                        format!("exponential decay needs rate > 0 and interval ≥ 1, got ({rate}, {interval})"),
                    ));
                }
            }
            ScheduleKind::Milestones { factor, .. } => {
                if !(*factor > 0.0 && factor.is_finite()) {
                    return Err(Error::invalid(
                        "schedule",
                        format!("milestone factor {factor} must be positive"),
                    ));
                }
            }
            ScheduleKind::LinearWarmup { steps } => {
                if *steps == 0 {
                    return Err(Error::invalid("schedule", "warmup needs at least one step".to_string()));
                }
            }
        }
        Ok(())
    }
}

/// Learning rate at optimizer step `step` (0-based, global across epochs)
/// inside epoch `epoch` (0-based). Always strictly positive for a valid
/// schedule.
pub fn schedule_rate(schedule: &LrSchedule, step: u64, epoch: usize) -> f64 {
    let base = schedule.base;
    let raw = match &schedule.kind {
        ScheduleKind::Constant => base,
        ScheduleKind::Exponential { rate, interval } => {
            base * rate.powf(step as f64 / *interval as f64)
        }
        ScheduleKind::Milestones { epochs, factor } => {
            let hits = epochs.iter().filter(|&&m| m <= epoch).count();
            base * factor.powi(hits as i32)
        }
        ScheduleKind::LinearWarmup { steps } => {
            let progress = (step.max(1) as f64 / *steps as f64).min(1.0);
            base * progress
        }
    };
    // Deep decay can underflow the double range; floor it so the emitted
    // rate keeps the documented strict positivity.
    raw.max(f64::MIN_POSITIVE)
}

/// Per-parameter `f64` state buffers, lazily sized on the first step.
type State = Vec<Vec<f64>>;

/// Stochastic gradient optimizer.
#[derive(Clone, Debug)]
pub enum Optimizer {
    /// Momentum SGD: `v ← μ·v + g`, update `g + μ·v` when `nesterov`, else
    /// `v`; plain gradient descent when `momentum == 0`.
    Sgd { momentum: f64, nesterov: bool, weight_decay: f64, velocity: State },
    /// Adam with bias correction:
    /// `m ← β₁·m + (1−β₁)·g`, `v ← β₂·v + (1−β₂)·g²`,
    /// update `m̂ / (√v̂ + ε)`.
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
        m: State,
        v: State,
        t: u64,
    },
}

impl Optimizer {
    pub fn sgd(momentum: f64, nesterov: bool, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) || weight_decay < 0.0 {
            return Err(Error::invalid(
                "optimizer",
                format!("momentum {momentum} must be in [0, 1) and weight decay {weight_decay} ≥ 0"),
            ));
        }
        if nesterov && momentum == 0.0 {
            return Err(Error::invalid("optimizer", "nesterov needs momentum > 0".to_string()));
        }
        Ok(Optimizer::Sgd { momentum, nesterov, weight_decay, velocity: Vec::new() })
    }

    pub fn adam(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1)
            || !(0.0..1.0).contains(&beta2)
            || eps <= 0.0
            || weight_decay < 0.0
        {
            return Err(Error::invalid(
                "optimizer",
                format!("adam needs β ∈ [0, 1), ε > 0, decay ≥ 0, got ({beta1}, {beta2}, {eps}, {weight_decay})"),
            ));
        }
        Ok(Optimizer::Adam { beta1, beta2, eps, weight_decay, m: Vec::new(), v: Vec::new(), t: 0 })
    }

    /// Adam with the customary coefficients (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
    pub fn adam_default(weight_decay: f64) -> Result<Self> {
        Self::adam(0.9, 0.999, 1e-8, weight_decay)
    }

    fn check_and_init_state(
        params: &[&mut Tensor<impl Scalar>],
        grads: &[Tensor<impl Scalar>],
        states: &mut [&mut State],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "optimizer step",
                format!("{} params vs {} gradients", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "optimizer step",
                    format!("param {i} is {:?} but gradient is {:?}", p.shape(), g.shape()),
                ));
            }
        }
        for state in states {
            if state.is_empty() {
                **state = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            } else if state.len() != params.len()
                || state.iter().zip(params.iter()).any(|(s, p)| s.len() != p.numel())
            {
                return Err(Error::shape(
                    "optimizer step",
                    "parameter list changed between steps".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// Applies one update at learning rate `rate`. Any non-finite staged
    /// value fails the whole step with parameters and state untouched.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[Tensor<T>],
        rate: f64,
    ) -> Result<()> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::invalid("optimizer step", format!("rate {rate} must be positive")));
        }
        match self {
            Optimizer::Sgd { momentum, nesterov, weight_decay, velocity } => {
                Self::check_and_init_state(params, grads, &mut [velocity])?;
                let (mu, wd, nest) = (*momentum, *weight_decay, *nesterov);
                let mut new_params: Vec<Vec<f64>> = Vec::with_capacity(params.len());
                let mut new_vel: Vec<Vec<f64>> = Vec::with_capacity(params.len());
                for (i, (p, g)) in params.iter().zip(grads).enumerate() {
                    let mut pv = Vec::with_capacity(p.numel());
                    let mut vv = Vec::with_capacity(p.numel());
                    for (j, (&pw, &gw)) in p.data().iter().zip(g.data()).enumerate() {
                        let theta = pw.widen();
                        let grad = gw.widen() + wd * theta;
                        let vel = mu * velocity[i][j] + grad;
                        let update = if mu == 0.0 {
                            grad
                        } else if nest {
                            grad + mu * vel
                        } else {
                            vel
                        };
                        pv.push(theta - rate * update);
                        vv.push(vel);
                    }
                    Self::ensure_finite(i, &pv, &vv)?;
                    new_params.push(pv);
                    new_vel.push(vv);
                }
                Self::commit(params, &new_params);
                *velocity = new_vel;
            }
            Optimizer::Adam { beta1, beta2, eps, weight_decay, m, v, t } => {
                Self::check_and_init_state(params, grads, &mut [m, v])?;
                let (b1, b2, e, wd) = (*beta1, *beta2, *eps, *weight_decay);
                let t_next = *t + 1;
                let bc1 = 1.0 - b1.powi(t_next as i32);
                let bc2 = 1.0 - b2.powi(t_next as i32);
                let mut new_params: Vec<Vec<f64>> = Vec::with_capacity(params.len());
                let mut new_m: Vec<Vec<f64>> = Vec::with_capacity(params.len());
                let mut new_v: Vec<Vec<f64>> = Vec::with_capacity(params.len());
                for (i, (p, g)) in params.iter().zip(grads).enumerate() {
                    let mut pv = Vec::with_capacity(p.numel());
                    let mut mv = Vec::with_capacity(p.numel());
                    let mut vv = Vec::with_capacity(p.numel());
                    for (j, (&pw, &gw)) in p.data().iter().zip(g.data()).enumerate() {
                        let theta = pw.widen();
                        let grad = gw.widen() + wd * theta;
                        let m_new = b1 * m[i][j] + (1.0 - b1) * grad;
                        let v_new = b2 * v[i][j] + (1.0 - b2) * grad * grad;
                        let update = (m_new / bc1) / ((v_new / bc2).sqrt() + e);
                        pv.push(theta - rate * update);
                        mv.push(m_new);
                        vv.push(v_new);
                    }
                    Self::ensure_finite(i, &pv, &mv)?;
                    Self::ensure_finite(i, &vv, &[])?;
                    new_params.push(pv);
                    new_m.push(mv);
                    new_v.push(vv);
                }
                Self::commit(params, &new_params);
                *m = new_m;
                *v = new_v;
                *t = t_next;
            }
        }
        Ok(())
    }

    fn ensure_finite(index: usize, a: &[f64], b: &[f64]) -> Result<()> {
        if a.iter().chain(b).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::numerical(
                "optimizer step",
                format!("non-finite update for parameter {index}; parameters left unchanged"),
            ))
        }
    }

    fn commit<T: Scalar>(params: &mut [&mut Tensor<T>], staged: &[Vec<f64>]) {
        for (p, s) in params.iter_mut().zip(staged) {
            for (slot, &v) in p.data_mut().iter_mut().zip(s) {
                *slot = T::narrow(v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta(v: f64) -> Tensor<f64> {
        Tensor::vector(vec![v])
    }

    #[test]
    fn vanilla_descent_single_step() {
        let mut opt = Optimizer::sgd(0.0, false, 0.0).unwrap();
        let mut p = theta(1.0);
        opt.step(&mut [&mut p], &[theta(0.5)], 0.1).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn heavy_ball_momentum_two_steps_by_hand() {
        // μ = 0.9, constant gradient 1, lr = 0.1:
        // v₁ = 1 → θ = −0.1; v₂ = 1.9 → θ = −0.29.
        let mut opt = Optimizer::sgd(0.9, false, 0.0).unwrap();
        let mut p = theta(0.0);
        opt.step(&mut [&mut p], &[theta(1.0)], 0.1).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-15, "{}", p.data()[0]);
        opt.step(&mut [&mut p], &[theta(1.0)], 0.1).unwrap();
        assert!((p.data()[0] + 0.29).abs() < 1e-15, "{}", p.data()[0]);
    }

    #[test]
    fn nesterov_momentum_two_steps_by_hand() {
        // Same setting with the lookahead update g + μ·v:
        // v₁ = 1, d₁ = 1.9 → θ = −0.19;
        // v₂ = 1.9, d₂ = 1 + 0.9·1.9 = 2.71 → θ = −0.461.
        let mut opt = Optimizer::sgd(0.9, true, 0.0).unwrap();
        let mut p = theta(0.0);
        opt.step(&mut [&mut p], &[theta(1.0)], 0.1).unwrap();
        assert!((p.data()[0] + 0.19).abs() < 1e-15, "{}", p.data()[0]);
        opt.step(&mut [&mut p], &[theta(1.0)], 0.1).unwrap();
        assert!((p.data()[0] + 0.461).abs() < 1e-15, "{}", p.data()[0]);
    }

    #[test]
    fn weight_decay_adds_scaled_parameter_to_gradient() {
        let mut opt = Optimizer::sgd(0.0, false, 0.1).unwrap();
        let mut p = theta(1.0);
        opt.step(&mut [&mut p], &[theta(0.0)], 1.0).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_about_the_rate() {
        // Bias correction makes m̂ = g and v̂ = g² exactly at t = 1, so the
        // first update is rate·sign(g) up to ε.
        let mut opt = Optimizer::adam(0.9, 0.999, 1e-8, 0.0).unwrap();
        let mut p = theta(5.0);
        opt.step(&mut [&mut p], &[theta(2.0)], 0.1).unwrap();
        assert!((p.data()[0] - 4.9).abs() < 1e-8, "{}", p.data()[0]);
    }

    #[test]
    fn adam_second_step_matches_hand_recurrence() {
        let (b1, b2, e, lr, g) = (0.9, 0.999, 1e-8, 0.1, 2.0);
        let mut opt = Optimizer::adam(b1, b2, e, 0.0).unwrap();
        let mut p = theta(0.0);
        opt.step(&mut [&mut p], &[theta(g)], lr).unwrap();
        opt.step(&mut [&mut p], &[theta(g)], lr).unwrap();
        let mut m = 0.0;
        let mut v = 0.0;
        let mut want = 0.0;
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            want -= lr * mh / (vh.sqrt() + e);
        }
        assert!((p.data()[0] - want).abs() < 1e-15, "{} vs {want}", p.data()[0]);
    }

    #[test]
    fn non_finite_gradient_fails_and_leaves_everything_untouched() {
        let mut opt = Optimizer::sgd(0.9, true, 0.0).unwrap();
        let mut p = theta(1.0);
        opt.step(&mut [&mut p], &[theta(1.0)], 0.1).unwrap();
        let before = p.data()[0];
        let vel_before = match &opt {
            Optimizer::Sgd { velocity, .. } => velocity.clone(),
            _ => unreachable!(),
        };
        assert!(opt.step(&mut [&mut p], &[theta(f64::INFINITY)], 0.1).is_err());
        assert!(opt.step(&mut [&mut p], &[theta(f64::NAN)], 0.1).is_err());
        assert_eq!(p.data()[0], before);
        match &opt {
            Optimizer::Sgd { velocity, .. } => assert_eq!(*velocity, vel_before),
            _ => unreachable!(),
        }
        // A sane step still works afterwards.
        opt.step(&mut [&mut p], &[theta(1.0)], 0.1).unwrap();
    }

    #[test]
    fn shape_and_count_mismatches_are_rejected() {
        let mut opt = Optimizer::sgd(0.0, false, 0.0).unwrap();
        let mut p = theta(1.0);
        assert!(opt.step(&mut [&mut p], &[], 0.1).is_err());
        let wide = Tensor::vector(vec![1.0, 2.0]);
        assert!(opt.step(&mut [&mut p], &[wide], 0.1).is_err());
        assert!(opt.step(&mut [&mut p], &[theta(1.0)], 0.0).is_err());
    }

    #[test]
    fn multiple_parameters_keep_independent_state() {
        let mut opt = Optimizer::sgd(0.9, false, 0.0).unwrap();
        let mut a = theta(0.0);
        let mut b = Tensor::vector(vec![0.0, 0.0]);
        let ga = theta(1.0);
        let gb = Tensor::vector(vec![0.0, -1.0]);
        opt.step(&mut [&mut a, &mut b], &[ga.clone(), gb.clone()], 0.1).unwrap();
        opt.step(&mut [&mut a, &mut b], &[ga, gb], 0.1).unwrap();
        assert!((a.data()[0] + 0.29).abs() < 1e-15);
        assert_eq!(b.data()[0], 0.0);
        assert!((b.data()[1] - 0.29).abs() < 1e-15);
    }

    #[test]
    fn exponential_decay_pinned_values() {
        let s = LrSchedule {
            base: 0.001,
            kind: ScheduleKind::Exponential { rate: 0.1, interval: 10_000 },
        };
        s.validate().unwrap();
        assert_eq!(schedule_rate(&s, 0, 0), 0.001);
        assert!((schedule_rate(&s, 10_000, 3) - 0.0001).abs() < 1e-18);
        assert!((schedule_rate(&s, 20_000, 7) - 0.00001).abs() < 1e-18);
        // Continuous between interval boundaries.
        assert!((schedule_rate(&s, 5_000, 0) - 0.001 * 0.1f64.sqrt()).abs() < 1e-18);
    }

    #[test]
    fn milestone_decay_pinned_values() {
        let s = LrSchedule {
            base: 0.1,
            kind: ScheduleKind::Milestones { epochs: vec![60, 120, 160], factor: 0.2 },
        };
        s.validate().unwrap();
        assert_eq!(schedule_rate(&s, 12345, 0), 0.1);
        assert_eq!(schedule_rate(&s, 0, 59), 0.1);
        assert!((schedule_rate(&s, 0, 60) - 0.02).abs() < 1e-17);
        assert!((schedule_rate(&s, 0, 125) - 0.004).abs() < 1e-17);
        assert!((schedule_rate(&s, 0, 160) - 0.0008).abs() < 1e-17);
    }

    #[test]
    fn linear_warmup_pinned_values_and_positivity() {
        let s = LrSchedule { base: 0.0005, kind: ScheduleKind::LinearWarmup { steps: 500_000 } };
        s.validate().unwrap();
        assert!((schedule_rate(&s, 250_000, 0) - 0.00025).abs() < 1e-18);
        assert_eq!(schedule_rate(&s, 500_000, 0), 0.0005);
        assert_eq!(schedule_rate(&s, 750_000, 0), 0.0005);
        // Step 0 must still emit a usable positive rate.
        let r0 = schedule_rate(&s, 0, 0);
        assert!(r0 > 0.0);
        assert_eq!(r0, schedule_rate(&s, 1, 0));
    }

    #[test]
    fn every_kind_stays_strictly_positive() {
        let schedules = [
            LrSchedule::constant(0.1),
            LrSchedule { base: 0.001, kind: ScheduleKind::Exponential { rate: 0.1, interval: 100 } },
            LrSchedule { base: 0.1, kind: ScheduleKind::Milestones { epochs: vec![1, 2, 3], factor: 0.2 } },
            LrSchedule { base: 0.0005, kind: ScheduleKind::LinearWarmup { steps: 1000 } },
        ];
        for s in &schedules {
            for step in [0u64, 1, 9, 99, 999, 9_999, 99_999] {
                for epoch in [0usize, 1, 5, 50] {
                    assert!(schedule_rate(s, step, epoch) > 0.0, "{s:?} at ({step}, {epoch})");
                }
            }
        }
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        assert!(Optimizer::sgd(1.0, false, 0.0).is_err());
        assert!(Optimizer::sgd(0.0, true, 0.0).is_err());
        assert!(Optimizer::adam(0.9, 1.0, 1e-8, 0.0).is_err());
        assert!(Optimizer::adam(0.9, 0.999, 0.0, 0.0).is_err());
        assert!(LrSchedule::constant(0.0).validate().is_err());
        assert!(LrSchedule { base: 0.1, kind: ScheduleKind::Exponential { rate: 0.0, interval: 10 } }
            .validate()
            .is_err());
        assert!(LrSchedule { base: 0.1, kind: ScheduleKind::LinearWarmup { steps: 0 } }
            .validate()
            .is_err());
    }
}
