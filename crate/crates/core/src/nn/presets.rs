//! Named architectures with their gate attachments.

use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GatedNetwork, Layer, TensorShape};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 784-300-100-10 MLP; gates on the input and both hidden layers.
    // Serde's snake_case would drop the first underscore of the canonical
    // name, so pin it to keep config files and `name()` in agreement.
    #[serde(rename = "mlp_784_300_100")]
    Mlp784_300_100,
    /// conv20(5x5) - pool2 - conv50(5x5) - pool2 - fc500 - fc10; gates on
    /// both filter banks, every flatten unit, and the 500 fc units.
    Lenet5Caffe,
    /// 6-4-3 dense net with gated input and hidden layer; test fixture.
    ToyDense,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Mlp784_300_100 => "mlp_784_300_100",
            Preset::Lenet5Caffe => "lenet5_caffe",
            Preset::ToyDense => "toy_dense",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp_784_300_100" => Ok(Preset::Mlp784_300_100),
            "lenet5_caffe" => Ok(Preset::Lenet5Caffe),
            "toy_dense" => Ok(Preset::ToyDense),
            other => Err(Error::Domain(format!(
                "unknown preset '{other}' (expected mlp_784_300_100, lenet5_caffe, or toy_dense)"
            ))),
        }
    }
}

/// Build a preset with He-normal weights and zero biases drawn from `rng`.
pub fn build_preset<F: Scalar, R: Rng + ?Sized>(preset: Preset, rng: &mut R) -> GatedNetwork<F> {
    let layers = match preset {
        Preset::Mlp784_300_100 => vec![
            Layer::Gate { groups: 784 },
            dense(784, 300, rng),
            Layer::Relu,
            Layer::Gate { groups: 300 },
            dense(300, 100, rng),
            Layer::Relu,
            Layer::Gate { groups: 100 },
            dense(100, 10, rng),
        ],
        Preset::Lenet5Caffe => vec![
            conv(1, 20, 5, rng),
            Layer::Gate { groups: 20 },
            Layer::MaxPool2d { size: 2 },
            conv(20, 50, 5, rng),
            Layer::Gate { groups: 50 },
            Layer::MaxPool2d { size: 2 },
            Layer::Flatten,
            Layer::Gate { groups: 800 },
            dense(800, 500, rng),
            Layer::Relu,
            Layer::Gate { groups: 500 },
            dense(500, 10, rng),
        ],
        Preset::ToyDense => vec![
            Layer::Gate { groups: 6 },
            dense(6, 4, rng),
            Layer::Relu,
            Layer::Gate { groups: 4 },
            dense(4, 3, rng),
        ],
    };
    let input = match preset {
        Preset::Mlp784_300_100 => TensorShape::Flat(784),
        Preset::Lenet5Caffe => TensorShape::Chw(1, 28, 28),
        Preset::ToyDense => TensorShape::Flat(6),
    };
    GatedNetwork::new(input, layers).expect("presets are well formed")
}

fn dense<F: Scalar, R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Layer<F> {
    let std = (2.0 / n_in as f64).sqrt();
    let weight = Array2::from_shape_fn((n_in, n_out), |_| {
        let z: f64 = rng.sample(StandardNormal);
        F::from_f64(z * std)
    });
    Layer::Dense { weight, bias: Array1::zeros(n_out) }
}

fn conv<F: Scalar, R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, rng: &mut R) -> Layer<F> {
    let std = (2.0 / (c_in * k * k) as f64).sqrt();
    let weight = Array4::from_shape_fn((c_out, c_in, k, k), |_| {
        let z: f64 = rng.sample(StandardNormal);
        F::from_f64(z * std)
    });
    Layer::Conv2d { weight, bias: Array1::zeros(c_out) }
}
