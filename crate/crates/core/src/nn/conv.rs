use serde::{Deserialize, Serialize};

use super::{FanInUniform, ParamId, ParamStore};
use crate::tensor::{Padding, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::None => Ok(x.clone()),
        }
    }
}

/// `k×k` convolution with bias and activation.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: Padding,
    pub activation: Activation,
}

impl ConvLayer {
    /// Registers weights (fan-in uniform) and a zero bias under `name`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut FanInUniform,
        name: &str,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        activation: Activation,
        frozen: bool,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let w = init.sample(
            &[kernel, kernel, in_channels, out_channels],
            kernel * kernel * in_channels,
        );
        let weight = store.add(format!("{name}.weight"), w, frozen);
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::zeros(&[out_channels]),
            frozen,
        );
        ConvLayer {
            weight,
            bias,
            kernel,
            in_channels,
            out_channels,
            stride,
            padding: Padding::Same,
            activation,
        }
    }

    pub fn forward(&self, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(
            &params[self.weight.0],
            &params[self.bias.0],
            self.stride,
            self.padding,
        )?;
        self.activation.apply(&y)
    }
}
