//! Central finite-difference verification of analytic gradients.
//!
//! This is the gate every backward pass in the crate has to clear. The
//! harness only needs a scalar-valued forward closure, so it stays
//! independent of whichever backward implementation produced the analytic
//! gradient it is checking.

use crate::error::Result;
use crate::tensor::{require_same_dims, Tensor};

/// Floor for the relative-error denominator.
pub const REL_DENOM_FLOOR: f64 = 1e-8;

/// Relative error between two gradient values.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_DENOM_FLOOR)
}

/// Compares `analytic` against central differences of `f` at `input`.
///
/// Returns the maximum relative error over all elements. `f` is re-run with
/// each element nudged by `±eps`; it must be a pure function of its input.
pub fn finite_diff_check<F>(f: F, input: &Tensor, analytic: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    require_same_dims("finite_diff_check", input, analytic)?;
    let mut max_err = 0.0f64;
    let mut probe = input.clone();
    for i in 0..input.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        max_err = max_err.max(rel_error(analytic.data()[i], numeric));
    }
    Ok(max_err)
}

/// Outcome of one layer's finite-difference verification.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub max_rel_err: f64,
    pub pass: bool,
}

const SUITE_EPS: f64 = 1e-5;
const SUITE_TOL: f64 = 1e-4;

/// Runs the standard per-layer verification sweep (a compact version of the
/// integration suite): several random seeds per backward pass, 64-bit
/// precision. `inject_fault` deliberately corrupts one gradient so callers
/// can prove the harness catches broken math.
pub fn run_standard_suite(inject_fault: bool) -> alloc::vec::Vec<LayerCheck> {
    use crate::init::normal_init;
    use crate::ops::activation::{gelu, gelu_backward, sigmoid, sigmoid_backward};
    use crate::ops::batchnorm::{batchnorm_backward, batchnorm_train, RunningStats};
    use crate::ops::activation::Activation;
    use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvLayerSpec};
    use crate::ops::loss::mse_loss;
    use crate::ops::pool::{maxpool2x2_backward, maxpool2x2_forward};
    use crate::ops::upsample::{upsample_to_backward, upsample_to_forward};
    use alloc::vec;
    use alloc::vec::Vec;

    let dot = |p: &Tensor, o: &Tensor| -> f64 {
        p.data().iter().zip(o.data()).map(|(a, b)| a * b).sum()
    };
    let seeds = 5u64;
    let mut out = Vec::new();
    let mut push = |layer: &'static str, err: f64| {
        out.push(LayerCheck {
            layer,
            max_rel_err: err,
            pass: err <= SUITE_TOL,
        });
    };

    // conv2d
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let sp = ConvLayerSpec {
            in_channels: 2,
            out_channels: 2,
            kernel: (3, 3),
            padding: (1, 1),
            stride: (1, 1),
            has_batchnorm: false,
            activation: Activation::Identity,
        };
        let x = normal_init(&[1, 2, 4, 5], 100 + s, 1.0);
        let w = normal_init(&sp.weight_dims(), 200 + s, 0.5);
        let b = normal_init(&[2], 300 + s, 0.5);
        let o = conv2d_forward(&x, &w, &b, &sp).expect("suite conv forward");
        let proj = normal_init(o.dims(), 400 + s, 1.0);
        let (mut gi, gw, _gb) = conv2d_backward(&proj, &x, &w, &sp).expect("suite conv backward");
        if inject_fault {
            for v in gi.data_mut() {
                *v *= 1.1;
            }
        }
        let e1 = finite_diff_check(
            |t| Ok(dot(&proj, &conv2d_forward(t, &w, &b, &sp)?)),
            &x,
            &gi,
            SUITE_EPS,
        )
        .expect("suite conv fd");
        let e2 = finite_diff_check(
            |t| Ok(dot(&proj, &conv2d_forward(&x, t, &b, &sp)?)),
            &w,
            &gw,
            SUITE_EPS,
        )
        .expect("suite conv fd w");
        worst = worst.max(e1).max(e2);
    }
    push("conv2d", worst);

    // maxpool
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let x = normal_init(&[1, 2, 6, 7], 500 + s, 2.0);
        let (o, map) = maxpool2x2_forward(&x).expect("suite pool");
        let proj = normal_init(o.dims(), 600 + s, 1.0);
        let gi = maxpool2x2_backward(&proj, &map).expect("suite pool backward");
        let e = finite_diff_check(
            |t| {
                let (o, _) = maxpool2x2_forward(t)?;
                Ok(dot(&proj, &o))
            },
            &x,
            &gi,
            SUITE_EPS,
        )
        .expect("suite pool fd");
        worst = worst.max(e);
    }
    push("maxpool2x2", worst);

    // batchnorm
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let x = normal_init(&[2, 3, 4, 4], 700 + s, 1.5);
        let gamma = normal_init(&[3], 710 + s, 0.5).map(|v| v + 1.0);
        let beta = normal_init(&[3], 720 + s, 0.5);
        let (o, cache, _) =
            batchnorm_train(&x, &gamma, &beta, &RunningStats::new(3), 0.1).expect("suite bn");
        let proj = normal_init(o.dims(), 730 + s, 1.0);
        let (gi, _, _) = batchnorm_backward(&proj, &cache, &gamma).expect("suite bn backward");
        let e = finite_diff_check(
            |t| {
                let (o, _, _) = batchnorm_train(t, &gamma, &beta, &RunningStats::new(3), 0.1)?;
                Ok(dot(&proj, &o))
            },
            &x,
            &gi,
            SUITE_EPS,
        )
        .expect("suite bn fd");
        worst = worst.max(e);
    }
    push("batchnorm", worst);

    // gelu + sigmoid
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let x = normal_init(&[3, 7], 800 + s, 2.0);
        let proj = normal_init(&[3, 7], 810 + s, 1.0);
        let g = gelu_backward(&proj, &x);
        let e1 = finite_diff_check(|t| Ok(dot(&proj, &gelu(t))), &x, &g, SUITE_EPS)
            .expect("suite gelu fd");
        let y = sigmoid(&x);
        let gs = sigmoid_backward(&proj, &y);
        let e2 = finite_diff_check(|t| Ok(dot(&proj, &sigmoid(t))), &x, &gs, SUITE_EPS)
            .expect("suite sigmoid fd");
        worst = worst.max(e1).max(e2);
    }
    push("gelu", worst);

    // upsample
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let x = normal_init(&[1, 2, 3, 4], 900 + s, 1.0);
        let target = (5 + (s as usize % 2), 9);
        let o = upsample_to_forward(&x, target).expect("suite upsample");
        let proj = normal_init(o.dims(), 910 + s, 1.0);
        let gi = upsample_to_backward(&proj, x.dims()).expect("suite upsample backward");
        let e = finite_diff_check(
            |t| Ok(dot(&proj, &upsample_to_forward(t, target)?)),
            &x,
            &gi,
            SUITE_EPS,
        )
        .expect("suite upsample fd");
        worst = worst.max(e);
    }
    push("upsample", worst);

    // mse
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let pred = normal_init(&[4, 5], 950 + s, 1.0);
        let target = normal_init(&[4, 5], 960 + s, 1.0);
        let (_, grad) = mse_loss(&pred, &target).expect("suite mse");
        let e = finite_diff_check(|t| Ok(mse_loss(t, &target)?.0), &pred, &grad, SUITE_EPS)
            .expect("suite mse fd");
        worst = worst.max(e);
    }
    push("mse", worst);

    // logistic loss
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let x = normal_init(&[6, 4], 970 + s, 1.0);
        let labels: Vec<bool> = (0..6).map(|i| (i + s as usize) % 2 == 0).collect();
        let w = normal_init(&[4], 980 + s, 0.7);
        let (_, gw, _) =
            crate::logreg::logistic_loss_and_grad(w.data(), 0.1, &x, &labels, 1.0)
                .expect("suite logistic");
        let gw_t = Tensor::new(vec![4], gw).expect("suite logistic grad dims");
        let e = finite_diff_check(
            |t| Ok(crate::logreg::logistic_loss_and_grad(t.data(), 0.1, &x, &labels, 1.0)?.0),
            &w,
            &gw_t,
            SUITE_EPS,
        )
        .expect("suite logistic fd");
        worst = worst.max(e);
    }
    push("logistic_loss", worst);

    // reduced end-to-end model: two sampled parameter entries
    {
        use crate::cae::{build_cae, stack_batch, CAEArchitecture};
        let arch = CAEArchitecture::reference(false);
        let model = build_cae((16, 16), &arch, 11, 0.05).expect("suite model");
        let a = normal_init(&[16, 16], 1200, 1.0).map(|v| 0.5 + 0.4 * libm::tanh(v));
        let b = normal_init(&[16, 16], 1201, 1.0).map(|v| 0.5 + 0.4 * libm::tanh(v));
        let batch = stack_batch(&[a, b]).expect("suite batch");
        let (_, grads, _, _) = model.loss_and_gradients(&batch, 0.1).expect("suite loss");
        let mut worst = 0.0f64;
        let mut checked = 0;
        'outer: for (pi, p) in model.parameters().iter().enumerate() {
            for ei in 0..p.value.len() {
                let a = grads[pi].data()[ei];
                if a.abs() < 1e-4 || (pi + ei) % 11 != 0 {
                    continue;
                }
                let name = p.name.clone();
                let probe = |delta: f64| -> f64 {
                    let mut m = model.clone();
                    let mut t = m.parameters()[pi].value.clone();
                    t.data_mut()[ei] += delta;
                    m.set_parameter(&name, t).expect("suite set param");
                    m.loss_and_gradients(&batch, 0.1).expect("suite probe").0
                };
                let numeric = (probe(SUITE_EPS) - probe(-SUITE_EPS)) / (2.0 * SUITE_EPS);
                worst = worst.max(rel_error(a, numeric));
                checked += 1;
                if checked >= 2 {
                    break 'outer;
                }
            }
        }
        push("cae_end_to_end", worst);
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn linear_function_is_exact() {
        let coef = [2.0, -3.0, 0.5, 7.0];
        let f = |t: &Tensor| {
            Ok(t.data()
                .iter()
                .zip(coef.iter())
                .map(|(&x, &c)| c * x)
                .sum())
        };
        let input = Tensor::new(vec![4], vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let analytic = Tensor::new(vec![4], coef.to_vec()).unwrap();
        let err = finite_diff_check(f, &input, &analytic, 1e-5).unwrap();
        assert!(err <= 1e-8, "linear check error {err}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let f = |t: &Tensor| Ok(t.data().iter().map(|&x| x * x).sum());
        let input = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let analytic = Tensor::new(vec![3], vec![2.0 * 1.1, -4.0 * 1.1, 1.0 * 1.1]).unwrap();
        let err = finite_diff_check(f, &input, &analytic, 1e-5).unwrap();
        assert!(err >= 0.05, "fault injection slipped through: {err}");
    }

    #[test]
    fn standard_suite_passes_and_catches_faults() {
        let clean = run_standard_suite(false);
        assert_eq!(clean.len(), 8);
        for c in &clean {
            assert!(c.pass, "{} failed with {}", c.layer, c.max_rel_err);
        }
        let faulty = run_standard_suite(true);
        let conv = faulty.iter().find(|c| c.layer == "conv2d").unwrap();
        assert!(!conv.pass, "injected fault not detected");
        assert!(conv.max_rel_err >= 0.05);
    }
}
