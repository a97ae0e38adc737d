//! The plain convolutional network: `Conv(1->w) -> LeakyReLU`, then
//! `depth - 2` blocks of `Conv(w->w) -> BN -> LeakyReLU`, then `Conv(w->1)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::activation::{LeakyRelu, DEFAULT_SLOPE};
use super::batchnorm::{BatchNorm2d, BatchNormParams, DEFAULT_EPS};
use super::conv::{Conv2d, ConvAlgorithm, ConvLayerParams};
use super::{Real, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    /// Number of convolution layers.
    pub depth: usize,
    /// Channels of every hidden layer.
    pub width: usize,
    pub slope: f64,
    pub bn_eps: f64,
    pub algorithm: ConvAlgorithm,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            depth: 30,
            width: 64,
            slope: DEFAULT_SLOPE,
            bn_eps: DEFAULT_EPS,
            algorithm: ConvAlgorithm::Auto,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 || self.width == 0 {
            return Err(Error::InvalidArgument(format!(
                "network needs depth >= 2 and width >= 1, got depth {} width {}",
                self.depth, self.width
            )));
        }
        if !(self.slope.is_finite() && self.slope >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "leaky relu slope must be finite and nonnegative, got {}",
                self.slope
            )));
        }
        if !(self.bn_eps > 0.0 && self.bn_eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "batchnorm eps must be positive, got {}",
                self.bn_eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    LeakyRelu(LeakyRelu<T>),
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv3x3",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::LeakyRelu(_) => "leaky_relu",
        }
    }

    fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x),
            Layer::LeakyRelu(l) => Ok(l.forward(x)),
        }
    }

    fn backward(&mut self, g: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            Layer::Conv(l) => l.backward(g),
            Layer::BatchNorm(l) => l.backward(g),
            Layer::LeakyRelu(l) => l.backward(g),
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn parameters(&self) -> Vec<&Tensor4<T>> {
        match self {
            Layer::Conv(l) => vec![&l.params.weight, &l.params.bias],
            Layer::BatchNorm(l) => vec![&l.params.gamma, &l.params.beta],
            Layer::LeakyRelu(_) => Vec::new(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.params.weight, &mut l.params.bias],
            Layer::BatchNorm(l) => vec![&mut l.params.gamma, &mut l.params.beta],
            Layer::LeakyRelu(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Network<T> {
    /// Kaiming-normal convolution weights with the LeakyReLU gain, zero
    /// biases, unit BN scale and zero BN shift.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = (2.0 / (1.0 + spec.slope * spec.slope)).sqrt();
        let mut conv = |ci: usize, co: usize| {
            let mut p = ConvLayerParams::<T>::zeros(ci, co);
            let std = gain / ((ci * 9) as f64).sqrt();
            for w in p.weight.data.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = T::of(std * z);
            }
            let mut c = Conv2d::new(p);
            c.algorithm = spec.algorithm;
            Layer::Conv(c)
        };
        let w = spec.width;
        let mut layers = vec![conv(1, w), Layer::LeakyRelu(LeakyRelu::new(spec.slope))];
        for _ in 0..spec.depth - 2 {
            layers.push(conv(w, w));
            layers.push(Layer::BatchNorm(BatchNorm2d::new(BatchNormParams::identity(
                w,
                spec.bn_eps,
            )?)));
            layers.push(Layer::LeakyRelu(LeakyRelu::new(spec.slope)));
        }
        layers.push(conv(w, 1));
        Ok(Network { spec, seed, layers })
    }

    pub fn parameters(&self) -> Vec<&Tensor4<T>> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// The last convolution, for tests and warm starts.
    pub fn output_conv_mut(&mut self) -> &mut Conv2d<T> {
        match self.layers.last_mut() {
            Some(Layer::Conv(c)) => c,
            _ => unreachable!("network always ends in a convolution"),
        }
    }

    /// Runs the network and records every layer's input for
    /// [`backward`](Self::backward).
    pub fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        if x.channels() != 1 {
            return Err(Error::dims("network input channels", &[1], &[x.channels()]));
        }
        let mut act = x.clone();
        for (k, layer) in self.layers.iter_mut().enumerate() {
            act = layer.forward(&act)?;
            if !act.is_finite() {
                return Err(Error::NonFinite {
                    layer: k,
                    kind: layer.kind(),
                    stage: "forward activation",
                });
            }
        }
        Ok(act)
    }

    /// Accumulates parameter gradients of `<grad_out, forward(x)>` and
    /// returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = grad_out.clone();
        for (k, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&g)?;
            let params_ok = layer
                .parameters()
                .iter()
                .all(|p| p.grad.as_ref().is_none_or(|v| v.iter().all(|x| x.is_finite())));
            if !g.is_finite() || !params_ok {
                return Err(Error::NonFinite {
                    layer: k,
                    kind: layer.kind(),
                    stage: "backward gradient",
                });
            }
        }
        Ok(g)
    }

    /// Fails with the offending layer if any parameter is non-finite.
    pub fn check_parameters(&self) -> Result<()> {
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.parameters().iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite {
                    layer: k,
                    kind: layer.kind(),
                    stage: "parameter update",
                });
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => {
                    let mut n = Conv2d::new(ConvLayerParams {
                        weight: c.params.weight.cast(),
                        bias: c.params.bias.cast(),
                    });
                    n.algorithm = c.algorithm;
                    Layer::Conv(n)
                }
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm2d::new(BatchNormParams {
                    gamma: b.params.gamma.cast(),
                    beta: b.params.beta.cast(),
                    eps: b.params.eps,
                })),
                Layer::LeakyRelu(a) => Layer::LeakyRelu(LeakyRelu::new(a.slope)),
            })
            .collect();
        Network {
            spec: self.spec,
            seed: self.seed,
            layers,
        }
    }
}
