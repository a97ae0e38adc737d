//! LeakyReLU and elementwise addition.

use crate::error::{Error, Result};

use super::{Real, Tensor4};

pub const DEFAULT_SLOPE: f64 = 0.01;

/// `max(0, x) + phi * min(0, x)`. The derivative at exactly zero is `phi`.
#[derive(Debug, Clone)]
pub struct LeakyRelu<T> {
    pub slope: f64,
    input: Option<Tensor4<T>>,
}

impl<T: Real> LeakyRelu<T> {
    pub fn new(slope: f64) -> Self {
        LeakyRelu { slope, input: None }
    }

    pub fn forward(&mut self, x: &Tensor4<T>) -> Tensor4<T> {
        let phi = T::of(self.slope);
        let data = x
            .data
            .iter()
            .map(|&v| if v < T::zero() { v * phi } else { v })
            .collect();
        self.input = Some(x.clone());
        Tensor4::from_vec(x.shape(), data).expect("same length as input")
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self.input.take().ok_or(Error::MissingForward("leaky_relu"))?;
        if grad_out.shape() != x.shape() {
            return Err(Error::dims("leaky_relu upstream gradient", &x.shape(), &grad_out.shape()));
        }
        let phi = T::of(self.slope);
        let data = grad_out
            .data
            .iter()
            .zip(&x.data)
            .map(|(&g, &v)| if v > T::zero() { g } else { g * phi })
            .collect();
        Tensor4::from_vec(x.shape(), data)
    }
}

/// `a + b`. Its reverse rule passes the upstream gradient to both inputs.
pub fn add<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dims("add", &a.shape(), &b.shape()));
    }
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect();
    Tensor4::from_vec(a.shape(), data)
}
