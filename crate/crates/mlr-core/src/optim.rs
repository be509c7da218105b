//! Adam optimizer and the reduce-on-plateau learning-rate schedule.

use alloc::format;
use alloc::string::String;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Adam hyperparameters; the learning rate actually applied per step comes
/// from [`SchedulerState::current_lr`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl AdamState {
    pub fn new(dims: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(dims),
            v: Tensor::zeros(dims),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
///
/// A non-finite gradient aborts with a diagnostic naming the parameter.
pub fn adam_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut AdamState,
    hyper: &AdamParams,
    lr: f64,
    name: &str,
) -> Result<()> {
    if param.dims() != grad.dims() || param.dims() != state.m.dims() {
        return Err(CoreError::shape(
            "adam_step",
            format!(
                "param {:?} / grad {:?} / moments {:?} disagree for '{name}'",
                param.dims(),
                grad.dims(),
                state.m.dims()
            ),
        ));
    }
    grad.ensure_finite(&format!("gradient of parameter '{name}'"))?;

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - libm::pow(hyper.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(hyper.beta2, t as f64);
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    for ((p, &g), (m, v)) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(state.m.data_mut().iter_mut().zip(state.v.data_mut()))
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (libm::sqrt(v_hat) + hyper.epsilon);
    }
    Ok(())
}

/// Reduce-on-plateau schedule state.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
    pub factor: f64,
    pub patience: usize,
    pub rel_threshold: f64,
    pub min_lr: f64,
    pub current_lr: f64,
}

impl SchedulerState {
    pub fn new(
        initial_lr: f64,
        factor: f64,
        patience: usize,
        rel_threshold: f64,
        min_lr: f64,
    ) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(CoreError::build(format!(
                "scheduler factor must be in (0,1), got {factor}"
            )));
        }
        if !(min_lr > 0.0 && initial_lr >= min_lr) {
            return Err(CoreError::build(format!(
                "scheduler requires lr ({initial_lr}) >= min_lr ({min_lr}) > 0"
            )));
        }
        Ok(SchedulerState {
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
            factor,
            patience,
            rel_threshold,
            min_lr,
            current_lr: initial_lr,
        })
    }
}

/// Folds one epoch's validation loss into the schedule.
///
/// Improvement means beating the best loss by more than the relative
/// threshold; after more than `patience` consecutive non-improving epochs the
/// rate is multiplied by `factor` (clamped at `min_lr`) and the counter
/// resets.
pub fn scheduler_update(state: &SchedulerState, val_loss: f64) -> Result<SchedulerState> {
    if !val_loss.is_finite() {
        return Err(CoreError::non_finite(String::from(
            "validation loss fed to scheduler",
        )));
    }
    let mut next = state.clone();
    // first finite observation always improves over the +inf sentinel
    let improved = if state.best_val_loss.is_finite() {
        val_loss < state.best_val_loss - state.rel_threshold * state.best_val_loss.abs()
    } else {
        true
    };
    if improved {
        next.best_val_loss = val_loss;
        next.epochs_since_improvement = 0;
    } else {
        next.epochs_since_improvement += 1;
        if next.epochs_since_improvement > next.patience {
            next.current_lr = (next.current_lr * next.factor).max(next.min_lr);
            next.epochs_since_improvement = 0;
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_gradients_are_a_fixed_point() {
        let mut p = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let orig = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(&[3]);
        let hp = AdamParams::default();
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut st, &hp, 0.002, "w").unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::new(vec![2], vec![0.3, -7.0]).unwrap();
        let mut st = AdamState::new(&[2]);
        let hp = AdamParams::default();
        adam_step(&mut p, &g, &mut st, &hp, 0.002, "w").unwrap();
        // t=1: m_hat = g, v_hat = g^2 -> update = lr * sign(g) up to epsilon
        assert!((p.data()[0] + 0.002).abs() < 1e-7);
        assert!((p.data()[1] - 0.002).abs() < 1e-7);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn identical_histories_identical_updates() {
        let g1 = Tensor::new(vec![1], vec![0.37]).unwrap();
        let mut p1 = Tensor::full(&[1], 1.0);
        let mut p2 = Tensor::full(&[1], 1.0);
        let mut s1 = AdamState::new(&[1]);
        let mut s2 = AdamState::new(&[1]);
        let hp = AdamParams::default();
        for _ in 0..5 {
            adam_step(&mut p1, &g1, &mut s1, &hp, 0.002, "a").unwrap();
            adam_step(&mut p2, &g1, &mut s2, &hp, 0.002, "b").unwrap();
        }
        assert_eq!(p1, p2);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Tensor::zeros(&[1]);
        let mut g = Tensor::zeros(&[1]);
        g.data_mut()[0] = f64::NAN;
        let mut st = AdamState::new(&[1]);
        let err = adam_step(&mut p, &g, &mut st, &AdamParams::default(), 0.002, "enc1.conv.w")
            .unwrap_err();
        assert!(format!("{err}").contains("enc1.conv.w"));
    }

    #[test]
    fn improving_stream_never_reduces() {
        let mut st = SchedulerState::new(0.002, 0.5, 5, 1e-4, 1e-5).unwrap();
        for i in 0..20 {
            st = scheduler_update(&st, 1.0 / (i + 1) as f64).unwrap();
        }
        assert_eq!(st.current_lr, 0.002);
    }

    #[test]
    fn constant_stream_halves_on_seventh_update() {
        // first update improves over +inf; six more non-improving updates are
        // needed before the counter exceeds patience = 5
        let mut st = SchedulerState::new(0.002, 0.5, 5, 1e-4, 1e-5).unwrap();
        for i in 1..=6 {
            st = scheduler_update(&st, 1.0).unwrap();
            assert_eq!(st.current_lr, 0.002, "update {i}");
        }
        st = scheduler_update(&st, 1.0).unwrap();
        assert_eq!(st.current_lr, 0.001);
        assert_eq!(st.epochs_since_improvement, 0);
    }

    #[test]
    fn rate_clamps_at_min_lr() {
        let mut st = SchedulerState::new(0.002, 0.5, 0, 1e-4, 1e-5).unwrap();
        for _ in 0..100 {
            st = scheduler_update(&st, 1.0).unwrap();
        }
        assert_eq!(st.current_lr, 1e-5);
    }
}
