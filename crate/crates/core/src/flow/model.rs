use rand::Rng;
use serde::{Deserialize, Serialize};

use super::coupling::{CouplingLayer, Subnet, SubnetNodes};
use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
/// Rows evaluated together by the direct (tape-free) passes.
const ROW_CHUNK: usize = 256;

/// Architecture of a [`FlowModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Feature dimension `d`.
    pub dim: usize,
    /// Positional condition dimension `P`.
    pub cond_dim: usize,
    /// Subnet hidden width.
    pub hidden: usize,
    pub layers: usize,
    /// Soft clamp `s_max` on the log-scale.
    pub clamp: f64,
}

impl FlowConfig {
    /// `d` channels with the default head: `P = 128`, hidden width `d`,
    /// 8 layers, clamp 1.9.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            cond_dim: 128,
            hidden: dim,
            layers: 8,
            clamp: 1.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(Error::Parameter(format!(
                "flow needs positive dim, hidden and layers, got {self:?}"
            )));
        }
        if !(self.clamp.is_finite() && self.clamp > 0.0) {
            return Err(Error::Parameter(format!("clamp must be positive, got {}", self.clamp)));
        }
        Ok(())
    }
}

/// Stack of conditional affine couplings with alternating masks over a
/// standard Gaussian base.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    config: FlowConfig,
    layers: Vec<CouplingLayer>,
}

/// Parameter nodes of a whole model on one tape.
#[derive(Clone, Debug)]
pub struct FlowNodes {
    layers: Vec<Option<SubnetNodes>>,
}

impl FlowNodes {
    /// Parameter nodes in [`FlowModel::params`] order.
    pub fn ids(&self) -> Vec<NodeId> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|n| [n.w1, n.b1, n.w2, n.b2])
            .collect()
    }
}

impl FlowModel {
    /// Freshly initialised model. Every layer starts as the identity.
    pub fn new<R: Rng>(config: FlowConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|k| {
                CouplingLayer::new(config.dim, config.cond_dim, config.hidden, config.clamp, k % 2 == 1, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, layers })
    }

    pub fn from_layers(config: FlowConfig, layers: Vec<CouplingLayer>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.layers {
            return Err(Error::Dimension(format!(
                "{} layers for a {}-layer flow",
                layers.len(),
                config.layers
            )));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.is_flipped() != (k % 2 == 1) {
                return Err(Error::Dimension(format!("layer {k} has the wrong mask orientation")));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CouplingLayer] {
        &mut self.layers
    }

    /// All trainable tensors, layer by layer as `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .filter_map(CouplingLayer::subnet)
            .flat_map(|s| [s.w1.clone(), s.b1.clone(), s.w2.clone(), s.b2.clone()])
            .collect()
    }

    /// Replaces the parameters with `params` in [`params`](Self::params)
    /// order.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        let expected = self.params();
        if expected.len() != params.len() {
            return Err(Error::Dimension(format!(
                "{} parameter tensors for a model with {}",
                params.len(),
                expected.len()
            )));
        }
        for (i, (a, b)) in expected.iter().zip(&params).enumerate() {
            if a.dims() != b.dims() {
                return Err(Error::Dimension(format!(
                    "parameter {i}: dims {:?}, expected {:?}",
                    b.dims(),
                    a.dims()
                )));
            }
        }
        let mut it = params.into_iter();
        for subnet in self.layers.iter_mut().filter_map(CouplingLayer::subnet_mut) {
            *subnet = Subnet {
                w1: it.next().expect("counted"),
                b1: it.next().expect("counted"),
                w2: it.next().expect("counted"),
                b2: it.next().expect("counted"),
            };
        }
        Ok(())
    }

    /// Maps `n` rows of `x` to the base space. Returns `z` and each row's
    /// total log-determinant.
    pub fn forward(&self, x: &[f64], cond: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut z = x.to_vec();
        let mut logdet = vec![0f64; n];
        for layer in &self.layers {
            let ld = layer.forward_rows(&mut z, cond, n)?;
            logdet.iter_mut().zip(ld).for_each(|(a, b)| *a += b);
        }
        Ok((z, logdet))
    }

    pub fn inverse(&self, z: &[f64], cond: &[f64], n: usize) -> Result<Vec<f64>> {
        let mut x = z.to_vec();
        for layer in self.layers.iter().rev() {
            layer.inverse_rows(&mut x, cond, n)?;
        }
        Ok(x)
    }

    /// `log p(x) = −(d/2)·log 2π − ‖z‖²/2 + log|det J|` for each of `n` rows.
    pub fn log_likelihood_rows(&self, x: &[f64], cond: &[f64], n: usize) -> Result<Vec<f64>> {
        let (d, p) = (self.config.dim, self.config.cond_dim);
        if x.len() != n * d || cond.len() != n * p {
            return Err(Error::Dimension(format!(
                "{n} rows need {} features and {} condition values, got {} and {}",
                n * d,
                n * p,
                x.len(),
                cond.len()
            )));
        }
        let base = -(d as f64) / 2.0 * LOG_2PI;
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(ROW_CHUNK) {
            let end = (start + ROW_CHUNK).min(n);
            let (z, logdet) = self.forward(&x[start * d..end * d], &cond[start * p..end * p], end - start)?;
            out.extend(
                z.chunks(d)
                    .zip(logdet)
                    .map(|(row, ld)| base - row.iter().map(|v| v * v).sum::<f64>() / 2.0 + ld),
            );
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("log-likelihood of row {i} is {}", out[i])));
        }
        Ok(out)
    }

    /// Log-likelihood of a single feature vector.
    ///
    /// ```
    /// use rand::SeedableRng;
    /// use sliceflow::flow::{FlowConfig, FlowModel};
    ///
    /// let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    /// let mut cfg = FlowConfig::new(2);
    /// cfg.cond_dim = 4;
    /// let flow = FlowModel::new(cfg, &mut rng).unwrap();
    /// let lp = flow.log_likelihood(&[0.0, 0.0], &[0.0; 4]).unwrap();
    /// assert!((lp + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    /// ```
    pub fn log_likelihood(&self, x: &[f64], cond: &[f64]) -> Result<f64> {
        Ok(self.log_likelihood_rows(x, cond, 1)?[0])
    }

    /// Registers every parameter on `tape` in [`params`](Self::params) order.
    pub fn register(&self, tape: &mut Tape) -> Result<FlowNodes> {
        let layers = self
            .layers
            .iter()
            .map(|l| l.register(tape))
            .collect::<Result<_>>()?;
        Ok(FlowNodes { layers })
    }

    /// Records the log-likelihood of the `n × d` node `x` under condition
    /// `cond` (`n × P`). Returns an `n × 1` node.
    pub fn log_likelihood_on_tape(
        &self,
        tape: &mut Tape,
        nodes: &FlowNodes,
        x: NodeId,
        cond: NodeId,
    ) -> Result<NodeId> {
        let (rows, cols) = tape.shape(x);
        if cols != self.config.dim || tape.shape(cond) != (rows, self.config.cond_dim) {
            return Err(Error::Dimension(format!(
                "tape inputs {:?} and {:?} do not fit d={}, P={}",
                tape.shape(x),
                tape.shape(cond),
                self.config.dim,
                self.config.cond_dim
            )));
        }
        let mut z = x;
        let mut logdet: Option<NodeId> = None;
        for (layer, n) in self.layers.iter().zip(&nodes.layers) {
            let (next, ld) = layer.forward_on_tape(tape, *n, z, cond)?;
            z = next;
            logdet = match (logdet, ld) {
                (Some(a), Some(b)) => Some(tape.add(a, b)?),
                (a, b) => a.or(b),
            };
        }
        let sq = tape.square(z)?;
        let sq = tape.sum_cols(sq)?;
        let mut lp = tape.scale(sq, -0.5)?;
        lp = tape.offset(lp, -(self.config.dim as f64) / 2.0 * LOG_2PI)?;
        if let Some(ld) = logdet {
            lp = tape.add(lp, ld)?;
        }
        Ok(lp)
    }

    /// Perturbs every layer's output map so the model is no longer the
    /// identity. Used by tests and examples.
    pub fn randomize<R: Rng>(&mut self, rng: &mut R, std: f64) -> Result<()> {
        for layer in &mut self.layers {
            layer.randomize_output(rng, std)?;
        }
        Ok(())
    }
}
