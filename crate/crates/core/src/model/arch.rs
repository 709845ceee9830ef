use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Erf,
    Identity,
}

const TWO_OVER_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Erf => libm::erf(x),
            Activation::Identity => x,
        }
    }

    /// Derivative; ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Erf => TWO_OVER_SQRT_PI * (-x * x).exp(),
            Activation::Identity => 1.0,
        }
    }
}

/// How stored parameters are scaled in the forward pass.
///
/// `Standard` applies weights as stored. `Ntk` multiplies each weight
/// application by `sigma_w / sqrt(fan_in)`, each bias by `sigma_b`, and each
/// readout by `sigma_v / sqrt(width)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Parameterization {
    Standard,
    Ntk {
        sigma_w: f64,
        sigma_b: f64,
        sigma_v: f64,
    },
}

/// Static shape of the network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub parameterization: Parameterization,
}

impl Architecture {
    pub fn standard(
        input_dim: usize,
        width: usize,
        depth: usize,
        output_dim: usize,
        activation: Activation,
    ) -> Self {
        Architecture {
            input_dim,
            width,
            depth,
            output_dim,
            activation,
            parameterization: Parameterization::Standard,
        }
    }

    pub fn ntk(
        input_dim: usize,
        width: usize,
        depth: usize,
        output_dim: usize,
        activation: Activation,
        sigma_w: f64,
        sigma_b: f64,
        sigma_v: f64,
    ) -> Self {
        Architecture {
            input_dim,
            width,
            depth,
            output_dim,
            activation,
            parameterization: Parameterization::Ntk {
                sigma_w,
                sigma_b,
                sigma_v,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("width", self.width),
            ("depth", self.depth),
            ("output_dim", self.output_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Argument(format!("architecture {name} must be >= 1")));
            }
        }
        if let Parameterization::Ntk {
            sigma_w,
            sigma_b,
            sigma_v,
        } = self.parameterization
        {
            for (name, v) in [("sigma_w", sigma_w), ("sigma_b", sigma_b), ("sigma_v", sigma_v)] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Argument(format!("{name} must be finite and >= 0")));
                }
            }
        }
        Ok(())
    }

    /// Fan-in of the weight matrix of layer `layer` (0-based).
    #[inline]
    pub fn fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.width
        }
    }

    #[inline]
    pub fn weight_scale(&self, layer: usize) -> f64 {
        match self.parameterization {
            Parameterization::Standard => 1.0,
            Parameterization::Ntk { sigma_w, .. } => sigma_w / (self.fan_in(layer) as f64).sqrt(),
        }
    }

    #[inline]
    pub fn bias_scale(&self) -> f64 {
        match self.parameterization {
            Parameterization::Standard => 1.0,
            Parameterization::Ntk { sigma_b, .. } => sigma_b,
        }
    }

    #[inline]
    pub fn readout_scale(&self) -> f64 {
        match self.parameterization {
            Parameterization::Standard => 1.0,
            Parameterization::Ntk { sigma_v, .. } => sigma_v / (self.width as f64).sqrt(),
        }
    }

    /// Number of trainable scalars in θ (Ω excluded).
    pub fn num_params(&self) -> usize {
        let n = self.width;
        self.input_dim * n + (self.depth - 1) * n * n + self.depth * n + self.depth * n * self.output_dim
    }
}
