//! Elementwise activations: exact-erf GELU and the sigmoid output layer.

use crate::par;
use crate::tensor::Tensor;

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Activation applied after a conv stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Sigmoid,
    Identity,
}

#[inline]
fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

#[inline]
fn gelu_scalar(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

#[inline]
fn gelu_grad_scalar(x: f64) -> f64 {
    std_normal_cdf(x) + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

#[inline]
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

const SPAN: usize = 16 * 1024;

/// `x * Phi(x)` with the exact standard-normal CDF (erf form).
pub fn gelu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    par::for_each_span(out.data_mut(), SPAN, |_, chunk| {
        for v in chunk.iter_mut() {
            *v = gelu_scalar(*v);
        }
    });
    out
}

/// `d gelu / dx = Phi(x) + x * phi(x)`, evaluated at the forward input.
pub fn gelu_backward(grad_out: &Tensor, cached_input: &Tensor) -> Tensor {
    debug_assert_eq!(grad_out.dims(), cached_input.dims());
    let mut out = grad_out.clone();
    let x = cached_input.data();
    par::for_each_span(out.data_mut(), SPAN, |j, chunk| {
        let base = j * SPAN;
        for (k, g) in chunk.iter_mut().enumerate() {
            *g *= gelu_grad_scalar(x[base + k]);
        }
    });
    out
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    par::for_each_span(out.data_mut(), SPAN, |_, chunk| {
        for v in chunk.iter_mut() {
            *v = sigmoid_scalar(*v);
        }
    });
    out
}

/// Sigmoid gradient from the cached forward *output*: `y * (1 - y)`.
pub fn sigmoid_backward(grad_out: &Tensor, cached_output: &Tensor) -> Tensor {
    debug_assert_eq!(grad_out.dims(), cached_output.dims());
    let mut out = grad_out.clone();
    let y = cached_output.data();
    par::for_each_span(out.data_mut(), SPAN, |j, chunk| {
        let base = j * SPAN;
        for (k, g) in chunk.iter_mut().enumerate() {
            let yv = y[base + k];
            *g *= yv * (1.0 - yv);
        }
    });
    out
}

impl Activation {
    pub fn forward(&self, input: &Tensor) -> Tensor {
        match self {
            Activation::Gelu => gelu(input),
            Activation::Sigmoid => sigmoid(input),
            Activation::Identity => input.clone(),
        }
    }

    /// `cached` is the forward input for GELU/identity and the forward
    /// output for sigmoid.
    pub fn backward(&self, grad_out: &Tensor, cached: &Tensor) -> Tensor {
        match self {
            Activation::Gelu => gelu_backward(grad_out, cached),
            Activation::Sigmoid => sigmoid_backward(grad_out, cached),
            Activation::Identity => grad_out.clone(),
        }
    }
}
