use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::EncoderConfig;

pub const PRELU_INIT: f64 = 0.25;

/// Gate tensors of one GRU direction, as indices into the parameter list.
///
/// Gate order is reset, update, candidate. Each gate has an input projection
/// `w_*` (`input x hidden`), a recurrent projection `u_*` (`hidden x hidden`)
/// and one bias `b_*` on the input side:
///
/// ```text
/// r  = sigmoid(x W_r + h U_r + b_r)
/// u  = sigmoid(x W_u + h U_u + b_u)
/// h~ = tanh(x W_h + (r * h) U_h + b_h)
/// h' = u * h + (1 - u) * h~
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruSlots {
    pub w: [usize; 3],
    pub u: [usize; 3],
    pub b: [usize; 3],
}

#[derive(Clone, Debug)]
pub struct ParamSlots {
    /// `(weight, bias, prelu slope)` per conv block.
    pub conv: Vec<[usize; 3]>,
    pub gru_fwd: GruSlots,
    pub gru_bwd: GruSlots,
    /// `(weight, bias, prelu slope)`
    pub fc1: [usize; 3],
    /// `(weight, bias)`
    pub fc2: [usize; 2],
}

/// Parameter kind, used for initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight { fan_in: usize },
    Bias,
    Slope,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Names, shapes and kinds of every parameter, in a fixed order.
pub fn param_layout(cfg: &EncoderConfig) -> Result<(Vec<ParamSpec>, ParamSlots)> {
    cfg.validate()?;
    let mut specs = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, kind: ParamKind| {
        specs.push(ParamSpec { name, shape, kind });
        specs.len() - 1
    };

    let mut conv = Vec::new();
    let mut channels = 1;
    for (i, layer) in cfg.conv_stack.iter().enumerate() {
        let [kt, kf] = layer.kernel;
        let fan_in = channels * kt * kf;
        let w = add(
            format!("conv{i}.weight"),
            vec![layer.out_channels, channels, kt, kf],
            ParamKind::Weight { fan_in },
        );
        let b = add(
            format!("conv{i}.bias"),
            vec![layer.out_channels],
            ParamKind::Bias,
        );
        let s = add(format!("conv{i}.slope"), vec![1], ParamKind::Slope);
        conv.push([w, b, s]);
        channels = layer.out_channels;
    }

    let input = cfg.sequence_dim()?;
    let hidden = cfg.rnn_width;
    let mut gru = |dir: &str| {
        let mut slots = GruSlots {
            w: [0; 3],
            u: [0; 3],
            b: [0; 3],
        };
        for (g, gate) in ["r", "u", "h"].iter().enumerate() {
            slots.w[g] = add(
                format!("gru_{dir}.w_{gate}"),
                vec![input, hidden],
                ParamKind::Weight { fan_in: input },
            );
        }
        for (g, gate) in ["r", "u", "h"].iter().enumerate() {
            slots.u[g] = add(
                format!("gru_{dir}.u_{gate}"),
                vec![hidden, hidden],
                ParamKind::Weight { fan_in: hidden },
            );
        }
        for (g, gate) in ["r", "u", "h"].iter().enumerate() {
            slots.b[g] = add(format!("gru_{dir}.b_{gate}"), vec![hidden], ParamKind::Bias);
        }
        slots
    };
    let gru_fwd = gru("fwd");
    let gru_bwd = gru("bwd");

    let rnn_out = cfg.rnn_output_dim();
    let fc1 = [
        add(
            "fc1.weight".into(),
            vec![rnn_out, cfg.feature_dim],
            ParamKind::Weight { fan_in: rnn_out },
        ),
        add("fc1.bias".into(), vec![cfg.feature_dim], ParamKind::Bias),
        add("fc1.slope".into(), vec![1], ParamKind::Slope),
    ];
    let fc2 = [
        add(
            "fc2.weight".into(),
            vec![cfg.feature_dim, cfg.n_classes],
            ParamKind::Weight {
                fan_in: cfg.feature_dim,
            },
        ),
        add("fc2.bias".into(), vec![cfg.n_classes], ParamKind::Bias),
    ];
    Ok((
        specs,
        ParamSlots {
            conv,
            gru_fwd,
            gru_bwd,
            fc1,
            fc2,
        },
    ))
}

/// All trainable tensors of the encoder, stored in [`param_layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    cfg: EncoderConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// He-style initialization: weights drawn from `N(0, 2 / fan_in)`, biases
    /// zero, PReLU slopes 0.25. Deterministic in `seed`.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        let (specs, _) = param_layout(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|spec| match spec.kind {
                ParamKind::Weight { fan_in } => {
                    let normal =
                        Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    let n = spec.shape.iter().product();
                    Tensor::new(
                        spec.shape.clone(),
                        (0..n).map(|_| normal.sample(&mut rng)).collect(),
                    )
                    .expect("layout shape")
                }
                ParamKind::Bias => Tensor::zeros(&spec.shape),
                ParamKind::Slope => Tensor::filled(&spec.shape, PRELU_INIT),
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors (any order); every layout entry must be present.
    pub fn from_named(cfg: &EncoderConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let (specs, _) = param_layout(cfg)?;
        let mut named: std::collections::HashMap<String, Tensor> = named.into_iter().collect();
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in &specs {
            let t = named
                .remove(&spec.name)
                .ok_or_else(|| Error::Container(format!("missing tensor {}", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::shape(format!(
                    "{}: expected {:?}, got {:?}",
                    spec.name,
                    spec.shape,
                    t.shape()
                )));
            }
            tensors.push(t);
        }
        Ok(Self {
            cfg: cfg.clone(),
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = EncoderConfig::default();
        assert_eq!(
            ModelParams::init(&cfg, 7).unwrap(),
            ModelParams::init(&cfg, 7).unwrap()
        );
        assert_ne!(
            ModelParams::init(&cfg, 7).unwrap(),
            ModelParams::init(&cfg, 8).unwrap()
        );
    }

    #[test]
    fn weight_variance_matches_fan_in() {
        let cfg = EncoderConfig::default();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let (specs, _) = param_layout(&cfg).unwrap();
        for (spec, t) in specs.iter().zip(params.tensors()) {
            match spec.kind {
                ParamKind::Weight { fan_in } => {
                    let n = t.len() as f64;
                    let mean = t.data().iter().sum::<f64>() / n;
                    let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                    let target = 2.0 / fan_in as f64;
                    assert!(
                        (var / target - 1.0).abs() < 0.2,
                        "{}: variance {var} vs {target} over {n} values",
                        spec.name
                    );
                }
                ParamKind::Bias => assert!(t.data().iter().all(|&v| v == 0.0)),
                ParamKind::Slope => assert_eq!(t.data(), &[PRELU_INIT]),
            }
        }
    }

    #[test]
    fn layout_names_are_unique_and_fc2_holds_class_columns() {
        let cfg = EncoderConfig::default();
        let params = ModelParams::init(&cfg, 0).unwrap();
        let mut names = params.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), params.names().len());
        assert_eq!(params.get("fc2.weight").unwrap().shape(), &[64, 4]);
        assert_eq!(params.get("fc2.bias").unwrap().shape(), &[4]);
        assert_eq!(params.get("gru_fwd.w_r").unwrap().shape(), &[512, 128]);
    }

    #[test]
    fn from_named_rejects_missing_or_misshapen() {
        let cfg = EncoderConfig::default();
        let params = ModelParams::init(&cfg, 0).unwrap();
        let mut named: Vec<_> = params
            .names()
            .iter()
            .cloned()
            .zip(params.tensors().iter().cloned())
            .collect();
        assert_eq!(
            ModelParams::from_named(&cfg, named.clone()).unwrap(),
            params
        );
        named[0].1 = Tensor::zeros(&[1]);
        assert!(ModelParams::from_named(&cfg, named.clone()).is_err());
        named.remove(0);
        assert!(ModelParams::from_named(&cfg, named).is_err());
    }
}
