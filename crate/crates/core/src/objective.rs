//! Training objective: Gaussian negative log-likelihood on normal features
//! plus a semi-push-pull term that separates synthesized anomalies from the
//! normal log-likelihoods.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowModel, FlowNodes};
use crate::numerics::{NodeId, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SppVariant {
    /// Boundary-guided: normals above the β-th percentile `b`, anomalies
    /// below `b − τ`.
    BgSpp,
    Triplet,
    /// Pairwise ranking.
    Prl,
    None,
}

impl fmt::Display for SppVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SppVariant::BgSpp => "bgspp",
            SppVariant::Triplet => "triplet",
            SppVariant::Prl => "prl",
            SppVariant::None => "none",
        })
    }
}

impl FromStr for SppVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bgspp" => Ok(SppVariant::BgSpp),
            "triplet" => Ok(SppVariant::Triplet),
            "prl" => Ok(SppVariant::Prl),
            "none" => Ok(SppVariant::None),
            other => Err(Error::Config(format!(
                "unknown SPP variant {other:?} (expected bgspp, triplet, prl or none)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SppConfig {
    pub variant: SppVariant,
    /// Percentile of the normal log-likelihoods used as the boundary.
    pub beta: f64,
    pub tau: f64,
    /// Triplet and pairwise-ranking margin.
    pub margin: f64,
    /// Standard deviation of the anomaly noise.
    pub sigma: f64,
}

impl Default for SppConfig {
    fn default() -> Self {
        Self {
            variant: SppVariant::BgSpp,
            beta: 10.0,
            tau: 0.1,
            margin: 1.0,
            sigma: 0.06,
        }
    }
}

impl SppConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 100], got {}", self.beta)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be non-negative, got {}", self.margin)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// `features + ε` with `ε ~ N(0, σ²)` drawn entry by entry from a generator
/// seeded with `seed`.
///
/// ```
/// use sliceflow::numerics::Tensor;
/// use sliceflow::objective::synthesize_anomalies;
///
/// let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
/// assert_eq!(synthesize_anomalies(&x, 0.0, 1).unwrap(), x);
/// assert_eq!(
///     synthesize_anomalies(&x, 0.06, 5).unwrap(),
///     synthesize_anomalies(&x, 0.06, 5).unwrap(),
/// );
/// ```
pub fn synthesize_anomalies(features: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = features.to_f64();
    add_noise(&mut data, sigma, &mut rng)?;
    Tensor::from_f64(features.dims().to_vec(), &data)
}

/// In-place version used by the trainer.
pub fn add_noise<R: rand::Rng>(data: &mut [f64], sigma: f64, rng: &mut R) -> Result<()> {
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(format!("sigma {sigma}: {e}")))?;
    for v in data {
        *v += normal.sample(rng);
    }
    Ok(())
}

/// β-th percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], beta: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Parameter("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&beta) {
        return Err(Error::Parameter(format!("percentile {beta} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = beta / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64))
}

/// Mean negative log-likelihood of `n` rows.
pub fn nll_objective(model: &FlowModel, x: &[f64], cond: &[f64], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Parameter("empty batch".into()));
    }
    let lp = model.log_likelihood_rows(x, cond, n)?;
    let mut sum = 0.0;
    for (i, v) in lp.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("log-likelihood at batch index {i} is {v}")));
        }
        sum -= v;
    }
    Ok(sum / n as f64)
}

/// `Σ relu(b − lp_n) + Σ relu(lp_a − b + τ)` with `b` the β-th percentile of
/// the normal log-likelihoods.
///
/// ```
/// use sliceflow::objective::bg_spp_loss;
/// // b = −2; the anomaly sits on the boundary and is pushed by τ = 1.
/// assert_eq!(bg_spp_loss(&[-1.0, -2.0], &[-2.0], 0.0, 1.0).unwrap(), 1.0);
/// ```
pub fn bg_spp_loss(logp_normal: &[f64], logp_anom: &[f64], beta: f64, tau: f64) -> Result<f64> {
    let b = percentile(logp_normal, beta)?;
    Ok(bg_spp_with_boundary(logp_normal, logp_anom, b, tau))
}

/// BG-SPP with an externally fixed boundary.
pub fn bg_spp_with_boundary(logp_normal: &[f64], logp_anom: &[f64], boundary: f64, tau: f64) -> f64 {
    let pull: f64 = logp_normal.iter().map(|&l| (boundary - l).max(0.0)).sum();
    let push: f64 = logp_anom.iter().map(|&l| (l - boundary + tau).max(0.0)).sum();
    pull + push
}

/// Deterministic within-batch pairing for the triplet and ranking losses.
///
/// Each anomaly `j` (there are `M`) is paired with normal `anchor[j]` and,
/// for triplets, with a second normal `positive[j]`. Both index lists come
/// from seeded shuffles of the normal indices, cycled to length `M`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pairing {
    pub anchor: Vec<usize>,
    pub positive: Vec<usize>,
}

impl Pairing {
    pub fn new(normals: usize, anomalies: usize, seed: u64) -> Result<Self> {
        if normals == 0 || anomalies == 0 {
            return Err(Error::Parameter(format!(
                "pairing needs both sets non-empty ({normals} normals, {anomalies} anomalies)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            let mut p: Vec<usize> = (0..normals).collect();
            p.shuffle(&mut rng);
            (0..anomalies).map(|j| p[j % normals]).collect::<Vec<_>>()
        };
        let anchor = draw();
        let positive = draw();
        Ok(Self { anchor, positive })
    }

    pub(crate) fn check(&self, normals: usize, anomalies: usize) -> Result<()> {
        let ok = self.anchor.len() == anomalies
            && self.positive.len() == anomalies
            && self.anchor.iter().chain(&self.positive).all(|&i| i < normals);
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "pairing does not fit {normals} normals and {anomalies} anomalies"
            )))
        }
    }
}

/// Mean of `relu(|lp[a] − lp[p]| − (lp[a] − lp_anom) + m)` over the triples
/// of `pairing`.
///
/// ```
/// use sliceflow::objective::{triplet_loss, Pairing};
/// let pairing = Pairing::new(2, 1, 0).unwrap();
/// assert_eq!(triplet_loss(&[0.0, 0.0], &[-0.5], 1.0, &pairing).unwrap(), 0.5);
/// ```
pub fn triplet_loss(logp_normal: &[f64], logp_anom: &[f64], margin: f64, pairing: &Pairing) -> Result<f64> {
    pairing.check(logp_normal.len(), logp_anom.len())?;
    let sum: f64 = logp_anom
        .iter()
        .enumerate()
        .map(|(j, &la)| {
            let a = logp_normal[pairing.anchor[j]];
            let p = logp_normal[pairing.positive[j]];
            ((a - p).abs() - (a - la) + margin).max(0.0)
        })
        .sum();
    Ok(sum / logp_anom.len() as f64)
}

/// Mean of `relu(m − (lp[n] − lp_anom))` over the pairs of `pairing`.
pub fn pairwise_ranking_loss(
    logp_normal: &[f64],
    logp_anom: &[f64],
    margin: f64,
    pairing: &Pairing,
) -> Result<f64> {
    pairing.check(logp_normal.len(), logp_anom.len())?;
    let sum: f64 = logp_anom
        .iter()
        .enumerate()
        .map(|(j, &la)| (margin - (logp_normal[pairing.anchor[j]] - la)).max(0.0))
        .sum();
    Ok(sum / logp_anom.len() as f64)
}

/// Feature rows for one optimisation step, all row-major.
#[derive(Clone, Debug)]
pub struct Batch {
    pub normal: Vec<f64>,
    pub normal_cond: Vec<f64>,
    pub anomalous: Vec<f64>,
    pub anomalous_cond: Vec<f64>,
}

impl Batch {
    fn sizes(&self, model: &FlowModel) -> Result<(usize, usize)> {
        let (d, p) = (model.dim(), model.cond_dim());
        let n = self.normal.len() / d;
        let m = self.anomalous.len() / d;
        let ok = n > 0
            && self.normal.len() == n * d
            && self.anomalous.len() == m * d
            && self.normal_cond.len() == n * p
            && self.anomalous_cond.len() == m * p;
        if !ok {
            return Err(Error::Dimension(format!(
                "batch of {} normal / {} anomalous values does not fit d={d}, P={p}",
                self.normal.len(),
                self.anomalous.len()
            )));
        }
        Ok((n, m))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub nll: f64,
    pub spp: f64,
    pub total: f64,
    /// BG-SPP boundary used for this step.
    pub boundary: Option<f64>,
}

/// SPP term from log-likelihoods. `boundary` overrides the percentile for
/// BG-SPP.
pub fn spp_loss(
    logp_normal: &[f64],
    logp_anom: &[f64],
    cfg: &SppConfig,
    pairing: &Pairing,
    boundary: Option<f64>,
) -> Result<(f64, Option<f64>)> {
    if logp_anom.is_empty() && cfg.variant != SppVariant::None {
        return Err(Error::Parameter("SPP needs at least one anomalous sample".into()));
    }
    match cfg.variant {
        SppVariant::None => Ok((0.0, None)),
        SppVariant::BgSpp => {
            let b = match boundary {
                Some(b) => b,
                None => percentile(logp_normal, cfg.beta)?,
            };
            Ok((bg_spp_with_boundary(logp_normal, logp_anom, b, cfg.tau), Some(b)))
        }
        SppVariant::Triplet => Ok((triplet_loss(logp_normal, logp_anom, cfg.margin, pairing)?, None)),
        SppVariant::Prl => Ok((pairwise_ranking_loss(logp_normal, logp_anom, cfg.margin, pairing)?, None)),
    }
}

/// NLL of the normal rows plus the configured SPP term, evaluated directly.
pub fn total_loss(
    model: &FlowModel,
    batch: &Batch,
    cfg: &SppConfig,
    pairing: &Pairing,
    boundary: Option<f64>,
) -> Result<LossParts> {
    let (n, m) = batch.sizes(model)?;
    let lpn = model.log_likelihood_rows(&batch.normal, &batch.normal_cond, n)?;
    let nll = -lpn.iter().sum::<f64>() / n as f64;
    let (spp, boundary) = if cfg.variant == SppVariant::None {
        (0.0, None)
    } else {
        let lpa = model.log_likelihood_rows(&batch.anomalous, &batch.anomalous_cond, m)?;
        spp_loss(&lpn, &lpa, cfg, pairing, boundary)?
    };
    let total = nll + spp;
    if !total.is_finite() {
        return Err(Error::Numeric(format!("total loss is {total}")));
    }
    Ok(LossParts {
        nll,
        spp,
        total,
        boundary,
    })
}

/// Records [`total_loss`] on a tape. The BG-SPP boundary enters as a
/// constant. Returns the scalar loss node and the evaluated parts.
pub fn total_loss_on_tape(
    tape: &mut Tape,
    model: &FlowModel,
    nodes: &FlowNodes,
    batch: &Batch,
    cfg: &SppConfig,
    pairing: &Pairing,
) -> Result<(NodeId, LossParts)> {
    let (n, m) = batch.sizes(model)?;
    let (d, p) = (model.dim(), model.cond_dim());
    let xn = tape.constant_f64(n, d, batch.normal.clone())?;
    let cn = tape.constant_f64(n, p, batch.normal_cond.clone())?;
    let lpn = model.log_likelihood_on_tape(tape, nodes, xn, cn)?;
    let nll = tape.mean(lpn)?;
    let nll = tape.scale(nll, -1.0)?;
    let nll_value = tape.scalar(nll)?;
    if cfg.variant == SppVariant::None {
        return Ok((
            nll,
            LossParts {
                nll: nll_value,
                spp: 0.0,
                total: nll_value,
                boundary: None,
            },
        ));
    }
    if m == 0 {
        return Err(Error::Parameter("SPP needs at least one anomalous sample".into()));
    }
    pairing.check(n, m)?;
    let xa = tape.constant_f64(m, d, batch.anomalous.clone())?;
    let ca = tape.constant_f64(m, p, batch.anomalous_cond.clone())?;
    let lpa = model.log_likelihood_on_tape(tape, nodes, xa, ca)?;

    let mut boundary = None;
    let spp = match cfg.variant {
        SppVariant::BgSpp => {
            let b = percentile(tape.value(lpn), cfg.beta)?;
            boundary = Some(b);
            let pull = tape.scale(lpn, -1.0)?;
            let pull = tape.offset(pull, b)?;
            let pull = tape.relu(pull)?;
            let pull = tape.sum(pull)?;
            let push = tape.offset(lpa, cfg.tau - b)?;
            let push = tape.relu(push)?;
            let push = tape.sum(push)?;
            tape.add(pull, push)?
        }
        SppVariant::Triplet => {
            let a = tape.gather_rows(lpn, pairing.anchor.clone())?;
            let pos = tape.gather_rows(lpn, pairing.positive.clone())?;
            let spread = tape.sub(a, pos)?;
            let spread = tape.abs(spread)?;
            let gap = tape.sub(a, lpa)?;
            let h = tape.sub(spread, gap)?;
            let h = tape.offset(h, cfg.margin)?;
            let h = tape.relu(h)?;
            tape.mean(h)?
        }
        SppVariant::Prl => {
            let a = tape.gather_rows(lpn, pairing.anchor.clone())?;
            let gap = tape.sub(a, lpa)?;
            let h = tape.scale(gap, -1.0)?;
            let h = tape.offset(h, cfg.margin)?;
            let h = tape.relu(h)?;
            tape.mean(h)?
        }
        SppVariant::None => unreachable!(),
    };
    let spp_value = tape.scalar(spp)?;
    let loss = tape.add(nll, spp)?;
    Ok((
        loss,
        LossParts {
            nll: nll_value,
            spp: spp_value,
            total: tape.scalar(loss)?,
            boundary,
        },
    ))
}

/// Loss and its gradient for every flow parameter, in
/// [`FlowModel::params`] order.
///
/// The log-likelihoods are evaluated once without a tape to obtain
/// `∂loss/∂log p` for every row; the gradient is then accumulated from tapes
/// of at most `chunk` rows recording `Σ w_i · log p_i`. The result equals
/// backpropagating [`total_loss_on_tape`] through the whole batch.
pub fn loss_and_gradient(
    model: &FlowModel,
    batch: &Batch,
    cfg: &SppConfig,
    pairing: &Pairing,
    chunk: usize,
) -> Result<(LossParts, Vec<Tensor>)> {
    let (n, m) = batch.sizes(model)?;
    let lpn = model.log_likelihood_rows(&batch.normal, &batch.normal_cond, n)?;
    let lpa = if cfg.variant == SppVariant::None {
        Vec::new()
    } else {
        model.log_likelihood_rows(&batch.anomalous, &batch.anomalous_cond, m)?
    };
    let nll = -lpn.iter().sum::<f64>() / n as f64;
    let mut wn = vec![-1.0 / n as f64; n];
    let mut wa = vec![0.0; m];
    let (spp, boundary) = spp_loss(&lpn, &lpa, cfg, pairing, None)?;
    let relu_grad = |h: f64| if h > 0.0 { 1.0 } else { 0.0 };
    let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
    match cfg.variant {
        SppVariant::None => {}
        SppVariant::BgSpp => {
            let b = boundary.expect("BG-SPP reports its boundary");
            for (w, &l) in wn.iter_mut().zip(&lpn) {
                *w -= relu_grad(b - l);
            }
            for (w, &l) in wa.iter_mut().zip(&lpa) {
                *w += relu_grad(l - b + cfg.tau);
            }
        }
        SppVariant::Triplet => {
            pairing.check(n, m)?;
            let k = 1.0 / m as f64;
            for j in 0..m {
                let (ai, pi) = (pairing.anchor[j], pairing.positive[j]);
                let (a, p) = (lpn[ai], lpn[pi]);
                let g = k * relu_grad((a - p).abs() - (a - lpa[j]) + cfg.margin);
                let s = sign(a - p);
                wn[ai] += g * (s - 1.0);
                wn[pi] -= g * s;
                wa[j] += g;
            }
        }
        SppVariant::Prl => {
            pairing.check(n, m)?;
            let k = 1.0 / m as f64;
            for j in 0..m {
                let ai = pairing.anchor[j];
                let g = k * relu_grad(cfg.margin - (lpn[ai] - lpa[j]));
                wn[ai] -= g;
                wa[j] += g;
            }
        }
    }
    let total = nll + spp;
    if !total.is_finite() {
        return Err(Error::Numeric(format!("total loss is {total}")));
    }

    let (d, p) = (model.dim(), model.cond_dim());
    let chunk = chunk.max(1);
    let mut grads: Vec<Vec<f64>> = model.params().iter().map(|t| vec![0.0; t.len()]).collect();
    let sets = [
        (&batch.normal, &batch.normal_cond, &wn),
        (&batch.anomalous, &batch.anomalous_cond, &wa),
    ];
    for (x, c, w) in sets {
        for start in (0..w.len()).step_by(chunk) {
            let end = (start + chunk).min(w.len());
            if w[start..end].iter().all(|&v| v == 0.0) {
                continue;
            }
            let rows = end - start;
            let mut tape = Tape::new();
            let nodes = model.register(&mut tape)?;
            let xn = tape.constant_f64(rows, d, x[start * d..end * d].to_vec())?;
            let cn = tape.constant_f64(rows, p, c[start * p..end * p].to_vec())?;
            let lp = model.log_likelihood_on_tape(&mut tape, &nodes, xn, cn)?;
            let wn = tape.constant_f64(rows, 1, w[start..end].to_vec())?;
            let weighted = tape.mul(lp, wn)?;
            let loss = tape.sum(weighted)?;
            let g = crate::numerics::backprop(&tape, loss)?;
            for (acc, id) in grads.iter_mut().zip(nodes.ids()) {
                let gi = g.get_f64(id).expect("registered parameter");
                acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
            }
        }
    }
    let params = model.params();
    let grads = params
        .iter()
        .zip(grads)
        .map(|(t, g)| Tensor::from_f64(t.dims().to_vec(), &g))
        .collect::<Result<_>>()?;
    Ok((
        LossParts {
            nll,
            spp,
            total,
            boundary,
        },
        grads,
    ))
}
