//! Affine coupling with a soft-clamped log-scale.
//!
//! The channel vector is split at `d/2`. The passive half passes through
//! unchanged; together with the positional condition it feeds a
//! `linear → ReLU → linear` subnet whose output is split into a raw log-scale
//! and a shift for the active half:
//!
//! ```text
//! (raw, t) = subnet(x_passive ⊕ cond)
//! s        = s_max · tanh(raw / s_max)
//! y_active = x_active · exp(s) + t
//! log|det| = Σ s
//! ```

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    dim: usize,
    cond_dim: usize,
    clamp: f64,
    /// When set, the first half is active and the second passive.
    flipped: bool,
    /// `None` when the active half is empty (odd split with `d = 1`).
    subnet: Option<Subnet>,
}

/// `w1: in × hidden`, `b1: hidden`, `w2: hidden × 2·active`, `b2: 2·active`.
#[derive(Clone, Debug, PartialEq)]
pub struct Subnet {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Parameter nodes of one layer on a tape.
#[derive(Clone, Copy, Debug)]
pub struct SubnetNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl CouplingLayer {
    /// He-initialised first map, zero second map: the layer starts as the
    /// identity.
    pub fn new<R: Rng>(
        dim: usize,
        cond_dim: usize,
        hidden: usize,
        clamp: f64,
        flipped: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = Self {
            dim,
            cond_dim,
            clamp,
            flipped,
            subnet: None,
        };
        let (passive, active) = (layer.passive().len(), layer.active().len());
        if active == 0 {
            return Ok(layer);
        }
        let input = passive + cond_dim;
        if input == 0 || hidden == 0 {
            return Err(Error::Parameter(format!(
                "subnet needs inputs and hidden units (input {input}, hidden {hidden})"
            )));
        }
        let he = Normal::new(0.0, (2.0 / input as f64).sqrt()).expect("positive std");
        let w1: Vec<f32> = (0..input * hidden).map(|_| he.sample(rng) as f32).collect();
        layer.subnet = Some(Subnet {
            w1: Tensor::new(vec![input, hidden], w1)?,
            b1: Tensor::zeros(vec![hidden])?,
            w2: Tensor::zeros(vec![hidden, 2 * active])?,
            b2: Tensor::zeros(vec![2 * active])?,
        });
        Ok(layer)
    }

    pub fn from_parts(dim: usize, cond_dim: usize, clamp: f64, flipped: bool, subnet: Option<Subnet>) -> Result<Self> {
        let layer = Self {
            dim,
            cond_dim,
            clamp,
            flipped,
            subnet,
        };
        let (passive, active) = (layer.passive().len(), layer.active().len());
        match &layer.subnet {
            None if active == 0 => Ok(layer),
            None => Err(Error::Dimension("coupling layer is missing its subnet".into())),
            Some(_) if active == 0 => Err(Error::Dimension(
                "coupling layer with an empty active half cannot carry a subnet".into(),
            )),
            Some(s) => {
                let hidden = s.b1.len();
                let ok = s.w1.dims() == [passive + cond_dim, hidden]
                    && s.b1.dims() == [hidden]
                    && s.w2.dims() == [hidden, 2 * active]
                    && s.b2.dims() == [2 * active];
                if ok {
                    Ok(layer)
                } else {
                    Err(Error::Dimension(format!(
                        "subnet shapes {:?} {:?} {:?} {:?} do not fit d={dim}, P={cond_dim}",
                        s.w1.dims(),
                        s.b1.dims(),
                        s.w2.dims(),
                        s.b2.dims()
                    )))
                }
            }
        }
    }

    pub fn passive(&self) -> Range<usize> {
        let split = self.dim / 2;
        if self.flipped {
            split..self.dim
        } else {
            0..split
        }
    }

    pub fn active(&self) -> Range<usize> {
        let split = self.dim / 2;
        if self.flipped {
            0..split
        } else {
            split..self.dim
        }
    }

    pub fn is_flipped(&self) -> bool {
        self.flipped
    }

    pub fn subnet(&self) -> Option<&Subnet> {
        self.subnet.as_ref()
    }

    pub fn subnet_mut(&mut self) -> Option<&mut Subnet> {
        self.subnet.as_mut()
    }

    /// Log-scale and shift for each row: both `n × active`.
    fn scale_shift(&self, x: &[f64], cond: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let Some(net) = &self.subnet else {
            return Ok((Vec::new(), Vec::new()));
        };
        let passive = self.passive();
        let active = self.active().len();
        let input_dim = passive.len() + self.cond_dim;
        let hidden = net.b1.len();
        let w1 = net.w1.data();
        let b1 = net.b1.data();
        let w2 = net.w2.data();
        let b2 = net.b2.data();

        let mut s = Vec::with_capacity(n * active);
        let mut t = Vec::with_capacity(n * active);
        let mut input = vec![0f64; input_dim];
        let mut h = vec![0f64; hidden];
        let mut o = vec![0f64; 2 * active];
        for row in 0..n {
            let xr = &x[row * self.dim..(row + 1) * self.dim];
            input[..passive.len()].copy_from_slice(&xr[passive.clone()]);
            input[passive.len()..].copy_from_slice(&cond[row * self.cond_dim..(row + 1) * self.cond_dim]);

            h.iter_mut().zip(b1).for_each(|(a, &b)| *a = f64::from(b));
            for (k, &iv) in input.iter().enumerate() {
                if iv == 0.0 {
                    continue;
                }
                for (a, &wv) in h.iter_mut().zip(&w1[k * hidden..(k + 1) * hidden]) {
                    *a += iv * f64::from(wv);
                }
            }
            o.iter_mut().zip(b2).for_each(|(a, &b)| *a = f64::from(b));
            for (k, &hv) in h.iter().enumerate() {
                if hv <= 0.0 {
                    continue;
                }
                for (a, &wv) in o.iter_mut().zip(&w2[k * 2 * active..(k + 1) * 2 * active]) {
                    *a += hv * f64::from(wv);
                }
            }
            if let Some(bad) = o.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("subnet produced {bad} for row {row}")));
            }
            s.extend(o[..active].iter().map(|&r| self.clamp * (r / self.clamp).tanh()));
            t.extend_from_slice(&o[active..]);
        }
        Ok((s, t))
    }

    /// Transforms `n` rows of `x` (row-major `n × d`) in place and returns
    /// each row's log-determinant.
    pub fn forward_rows(&self, x: &mut [f64], cond: &[f64], n: usize) -> Result<Vec<f64>> {
        self.check(x, cond, n)?;
        let (s, t) = self.scale_shift(x, cond, n)?;
        let active = self.active();
        let a = active.len();
        let mut logdet = vec![0f64; n];
        for row in 0..n {
            let xr = &mut x[row * self.dim..(row + 1) * self.dim];
            for (k, j) in active.clone().enumerate() {
                let sk = s[row * a + k];
                xr[j] = xr[j] * sk.exp() + t[row * a + k];
                logdet[row] += sk;
            }
        }
        Ok(logdet)
    }

    /// Exact inverse of [`forward_rows`](Self::forward_rows), in place.
    pub fn inverse_rows(&self, y: &mut [f64], cond: &[f64], n: usize) -> Result<()> {
        self.check(y, cond, n)?;
        let (s, t) = self.scale_shift(y, cond, n)?;
        let active = self.active();
        let a = active.len();
        for row in 0..n {
            let yr = &mut y[row * self.dim..(row + 1) * self.dim];
            for (k, j) in active.clone().enumerate() {
                yr[j] = (yr[j] - t[row * a + k]) * (-s[row * a + k]).exp();
            }
        }
        Ok(())
    }

    fn check(&self, x: &[f64], cond: &[f64], n: usize) -> Result<()> {
        if x.len() != n * self.dim || cond.len() != n * self.cond_dim {
            return Err(Error::Dimension(format!(
                "{n} rows need {} features and {} condition values, got {} and {}",
                n * self.dim,
                n * self.cond_dim,
                x.len(),
                cond.len()
            )));
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape) -> Result<Option<SubnetNodes>> {
        let Some(net) = &self.subnet else { return Ok(None) };
        Ok(Some(SubnetNodes {
            w1: tape.param(&net.w1)?,
            b1: tape.param(&net.b1)?,
            w2: tape.param(&net.w2)?,
            b2: tape.param(&net.b2)?,
        }))
    }

    /// Records the layer on a tape. `x` is `n × d`, `cond` is `n × P`.
    /// Returns the transformed rows and the `n × 1` log-determinant (or
    /// `None` when the layer is the identity).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        nodes: Option<SubnetNodes>,
        x: NodeId,
        cond: NodeId,
    ) -> Result<(NodeId, Option<NodeId>)> {
        let (Some(_), Some(p)) = (&self.subnet, nodes) else {
            return Ok((x, None));
        };
        let passive = self.passive();
        let active = self.active();
        let x_passive = if passive.is_empty() {
            None
        } else {
            Some(tape.slice_cols(x, passive.start, passive.end)?)
        };
        let x_active = tape.slice_cols(x, active.start, active.end)?;
        let input = match x_passive {
            Some(xp) => tape.concat_cols(xp, cond)?,
            None => cond,
        };
        let hidden = tape.affine(input, p.w1, p.b1)?;
        let hidden = tape.relu(hidden)?;
        let out = tape.affine(hidden, p.w2, p.b2)?;
        let a = active.len();
        let raw = tape.slice_cols(out, 0, a)?;
        let shift = tape.slice_cols(out, a, 2 * a)?;
        let s = tape.scale(raw, 1.0 / self.clamp)?;
        let s = tape.tanh(s)?;
        let s = tape.scale(s, self.clamp)?;
        let e = tape.exp(s)?;
        let y_active = tape.mul(x_active, e)?;
        let y_active = tape.add(y_active, shift)?;
        let y = match (x_passive, self.flipped) {
            (None, _) => y_active,
            (Some(xp), false) => tape.concat_cols(xp, y_active)?,
            (Some(xp), true) => tape.concat_cols(y_active, xp)?,
        };
        let logdet = tape.sum_cols(s)?;
        Ok((y, Some(logdet)))
    }

    /// Overwrites the output map with Gaussian noise so the layer is no
    /// longer the identity.
    pub fn randomize_output<R: Rng>(&mut self, rng: &mut R, std: f64) -> Result<()> {
        let Some(net) = &mut self.subnet else { return Ok(()) };
        let normal = Normal::new(0.0, std).map_err(|e| Error::Parameter(e.to_string()))?;
        let mut draw = |t: &Tensor| -> Result<Tensor> {
            let data = (0..t.len()).map(|_| normal.sample(rng) as f32).collect();
            Tensor::new(t.dims().to_vec(), data)
        };
        net.w2 = draw(&net.w2)?;
        net.b2 = draw(&net.b2)?;
        net.b1 = draw(&net.b1)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = CouplingLayer::new(4, 4, 8, 1.9, false, &mut rng).unwrap();
        let mut x = vec![0.5, -1.0, 2.0, 0.25];
        let orig = x.clone();
        let ld = layer.forward_rows(&mut x, &[0.1, 0.2, 0.3, 0.4], 1).unwrap();
        assert_eq!(x, orig);
        assert_eq!(ld, vec![0.0]);
    }

    #[test]
    fn constant_log_scale_doubles_active_half() {
        // d = 2, active = second entry; choose b2 so that s = ln 2, t = 0.
        let clamp = 1.9f64;
        let raw = clamp * (2f64.ln() / clamp).atanh();
        let subnet = Subnet {
            w1: Tensor::zeros(vec![1 + 4, 3]).unwrap(),
            b1: Tensor::zeros(vec![3]).unwrap(),
            w2: Tensor::zeros(vec![3, 2]).unwrap(),
            b2: Tensor::new(vec![2], vec![raw as f32, 0.0]).unwrap(),
        };
        let layer = CouplingLayer::from_parts(2, 4, clamp, false, Some(subnet)).unwrap();
        let mut x = vec![3.0, 5.0];
        let ld = layer.forward_rows(&mut x, &[0.0; 4], 1).unwrap();
        assert_eq!(x[0], 3.0);
        assert!((x[1] - 10.0).abs() < 1e-5, "{}", x[1]);
        assert!((ld[0] - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn analytic_jacobian_of_two_active_entries() {
        // d = 4 with s = ln 2 on both active entries → logdet = 2 ln 2
        let clamp = 1.9f64;
        let raw = (clamp * (2f64.ln() / clamp).atanh()) as f32;
        let subnet = Subnet {
            w1: Tensor::zeros(vec![2 + 2, 3]).unwrap(),
            b1: Tensor::zeros(vec![3]).unwrap(),
            w2: Tensor::zeros(vec![3, 4]).unwrap(),
            b2: Tensor::new(vec![4], vec![raw, raw, 0.5, -0.5]).unwrap(),
        };
        let layer = CouplingLayer::from_parts(4, 2, clamp, false, Some(subnet)).unwrap();
        let mut x = vec![1.0, 2.0, 3.0, 4.0];
        let ld = layer.forward_rows(&mut x, &[0.0, 0.0], 1).unwrap();
        assert!((ld[0] - 1.3863).abs() < 1e-4);
        assert!((x[2] - 6.5).abs() < 1e-5 && (x[3] - 7.5).abs() < 1e-5);
    }

    #[test]
    fn inverse_undoes_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for flipped in [false, true] {
            let mut layer = CouplingLayer::new(6, 4, 10, 1.9, flipped, &mut rng).unwrap();
            layer.randomize_output(&mut rng, 0.5).unwrap();
            let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
            let cond: Vec<f64> = (0..8).map(|i| (i as f64 * 0.11).cos()).collect();
            let mut y = x.clone();
            layer.forward_rows(&mut y, &cond, 2).unwrap();
            assert!(y.iter().zip(&x).any(|(a, b)| (a - b).abs() > 1e-3));
            layer.inverse_rows(&mut y, &cond, 2).unwrap();
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn masks_alternate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = CouplingLayer::new(8, 4, 4, 1.9, false, &mut rng).unwrap();
        let b = CouplingLayer::new(8, 4, 4, 1.9, true, &mut rng).unwrap();
        assert_eq!((a.passive(), a.active()), (0..4, 4..8));
        assert_eq!((b.passive(), b.active()), (4..8, 0..4));
    }

    #[test]
    fn from_parts_checks_shapes() {
        let subnet = Subnet {
            w1: Tensor::zeros(vec![3, 3]).unwrap(),
            b1: Tensor::zeros(vec![3]).unwrap(),
            w2: Tensor::zeros(vec![3, 4]).unwrap(),
            b2: Tensor::zeros(vec![4]).unwrap(),
        };
        assert!(CouplingLayer::from_parts(4, 2, 1.9, false, Some(subnet)).is_err());
    }
}
