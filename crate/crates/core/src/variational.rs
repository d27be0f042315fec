//! Mean-field Gaussian variational dense layers.
//!
//! Each weight has a posterior `N(mu, sigma^2)` with `sigma = softplus(rho)`
//! and a zero-mean Gaussian prior of scale `sigma_p`. Training minimizes the
//! minibatch negative ELBO
//!
//! ```text
//! total = nll + kl / M
//! ```
//!
//! where `nll` is the batch-mean cross-entropy under one sampled weight set
//! and `M` is the number of minibatches per epoch, so summing `kl / M` over an
//! epoch recovers the full KL term.
//!
//! Random draw order for one variational dense layer on a batch of `n`:
//! kernel noise `E` (`in x out`, row-major standard normals), bias noise
//! (`out` standard normals), then for Flipout only the input signs `S`
//! (`n x in`, row-major) and output signs `R` (`n x out`). Layers draw in
//! forward order. This order is part of the reproducibility contract.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{self, Tape, Var};
use crate::layers::{Batch, BoundModel, Model, WeightMode};
use crate::rng::{rademacher, Stream};
use crate::tensor::Tensor;

/// `log(1 + e^rho)`, overflow-safe.
pub fn softplus_sigma(rho: f64) -> f64 {
    grad::softplus(rho)
}

/// Posterior means and pre-scales for one array of weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianVariationalParams {
    pub mu: Tensor,
    pub rho: Tensor,
}

impl GaussianVariationalParams {
    pub fn new(mu: Tensor, rho: Tensor) -> Result<Self> {
        if mu.shape() != rho.shape() {
            return Err(Error::dim(format!(
                "mu {:?} and rho {:?} differ in shape",
                mu.shape(),
                rho.shape()
            )));
        }
        Ok(Self { mu, rho })
    }

    pub fn sigma(&self) -> Tensor {
        self.rho.map(softplus_sigma)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    sigma: f64,
}

impl GaussianPrior {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(Self { sigma })
        } else {
            Err(Error::domain(format!("prior scale {sigma} must be positive")))
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn log_density(&self, w: f64) -> f64 {
        let z = w / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

impl Default for GaussianPrior {
    fn default() -> Self {
        Self { sigma: 1.0 }
    }
}

/// Closed-form `KL(q || p)` summed over all weights.
pub fn kl_gaussian_diag(params: &GaussianVariationalParams, prior: &GaussianPrior) -> Result<f64> {
    if params.mu.shape() != params.rho.shape() {
        return Err(Error::dim("mu and rho differ in shape"));
    }
    let sp = prior.sigma;
    let sp2 = 2.0 * sp * sp;
    Ok(params
        .mu
        .data()
        .iter()
        .zip(params.rho.data())
        .map(|(&mu, &rho)| {
            let s = softplus_sigma(rho);
            (sp / s).ln() + (s * s + mu * mu) / sp2 - 0.5
        })
        .sum())
}

/// Differentiable version of [`kl_gaussian_diag`].
pub fn kl_gaussian_diag_var(
    tape: &mut Tape,
    mu: Var,
    rho: Var,
    prior: &GaussianPrior,
) -> Result<Var> {
    let n = tape.value(mu).len() as f64;
    let sp = prior.sigma;
    let sigma = tape.softplus(rho)?;
    let log_sigma = tape.log(sigma)?;
    let s2 = tape.multiply(sigma, sigma)?;
    let m2 = tape.multiply(mu, mu)?;
    let quad = tape.add(s2, m2)?;
    let quad = tape.sum(quad)?;
    let quad = tape.scale(quad, 1.0 / (2.0 * sp * sp))?;
    let log_sum = tape.sum(log_sigma)?;
    let kl = tape.sub(quad, log_sum)?;
    tape.offset(kl, n * (sp.ln() - 0.5))
}

fn normals(shape: &[usize], rng: &mut Stream) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.sample(StandardNormal);
    }
    t
}

fn signs(shape: &[usize], rng: &mut Stream) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rademacher(rng);
    }
    t
}

/// `w = mu + sigma * eps`, `eps ~ N(0, I)`.
pub fn sample_weights_reparam(params: &GaussianVariationalParams, rng: &mut Stream) -> Tensor {
    let eps = normals(params.mu.shape(), rng);
    let mut w = params.mu.clone();
    for ((w, rho), e) in w.data_mut().iter_mut().zip(params.rho.data()).zip(eps.data()) {
        *w += softplus_sigma(*rho) * e;
    }
    w
}

/// [`sample_weights_reparam`] on the tape, differentiable in `mu` and `rho`.
pub fn sample_reparam_var(tape: &mut Tape, mu: Var, rho: Var, rng: &mut Stream) -> Result<Var> {
    let eps = normals(tape.value(mu).shape(), rng);
    reparam_with_noise(tape, mu, rho, eps)
}

fn reparam_with_noise(tape: &mut Tape, mu: Var, rho: Var, eps: Tensor) -> Result<Var> {
    let eps = tape.constant(eps);
    let sigma = tape.softplus(rho)?;
    let delta = tape.multiply(sigma, eps)?;
    tape.add(mu, delta)
}

/// Variational parameters of one dense layer, bound on a tape.
#[derive(Clone, Copy, Debug)]
pub struct VariationalDenseVars {
    pub kernel_mu: Var,
    pub kernel_rho: Var,
    pub bias_mu: Var,
    pub bias_rho: Var,
}

impl VariationalDenseVars {
    pub fn bind(
        tape: &mut Tape,
        prefix: &str,
        kernel: &GaussianVariationalParams,
        bias: &GaussianVariationalParams,
    ) -> Self {
        Self {
            kernel_mu: tape.param(format!("{prefix}.kernel.mu"), kernel.mu.clone()),
            kernel_rho: tape.param(format!("{prefix}.kernel.rho"), kernel.rho.clone()),
            bias_mu: tape.param(format!("{prefix}.bias.mu"), bias.mu.clone()),
            bias_rho: tape.param(format!("{prefix}.bias.rho"), bias.rho.clone()),
        }
    }

    fn dims(&self, tape: &Tape) -> Result<(usize, usize)> {
        tape.value(self.kernel_mu).dims2()
    }
}

/// Noise for one Flipout forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct FlipoutNoise {
    /// `[in x out]`, shared by every example.
    pub kernel_eps: Tensor,
    /// `[out]`
    pub bias_eps: Tensor,
    /// `[n x in]` Rademacher signs.
    pub in_signs: Tensor,
    /// `[n x out]` Rademacher signs.
    pub out_signs: Tensor,
}

impl FlipoutNoise {
    pub fn draw(n: usize, inputs: usize, outputs: usize, rng: &mut Stream) -> Self {
        let kernel_eps = normals(&[inputs, outputs], rng);
        let bias_eps = normals(&[outputs], rng);
        let in_signs = signs(&[n, inputs], rng);
        let out_signs = signs(&[n, outputs], rng);
        Self {
            kernel_eps,
            bias_eps,
            in_signs,
            out_signs,
        }
    }
}

/// `Y = X mu + ((X * S) (sigma * E)) * R + (b_mu + b_sigma * e_b)` with the
/// given noise.
pub fn flipout_apply(
    tape: &mut Tape,
    x: Var,
    layer: &VariationalDenseVars,
    noise: &FlipoutNoise,
) -> Result<Var> {
    let (inputs, outputs) = layer.dims(tape)?;
    let n = tape.value(x).rows();
    if n == 0 {
        return Err(Error::domain("flipout on an empty batch"));
    }
    if noise.kernel_eps.shape() != [inputs, outputs]
        || noise.in_signs.shape() != [n, inputs]
        || noise.out_signs.shape() != [n, outputs]
        || noise.bias_eps.shape() != [outputs]
    {
        return Err(Error::dim(format!(
            "flipout noise does not fit a {n}-example batch through a {inputs}x{outputs} layer"
        )));
    }
    let mean = tape.matmul(x, layer.kernel_mu)?;
    let sigma = tape.softplus(layer.kernel_rho)?;
    let e = tape.constant(noise.kernel_eps.clone());
    let delta_w = tape.multiply(sigma, e)?;
    let s = tape.constant(noise.in_signs.clone());
    let xs = tape.multiply(x, s)?;
    let pert = tape.matmul(xs, delta_w)?;
    let r = tape.constant(noise.out_signs.clone());
    let pert = tape.multiply(pert, r)?;
    let y = tape.add(mean, pert)?;
    let b = reparam_with_noise(tape, layer.bias_mu, layer.bias_rho, noise.bias_eps.clone())?;
    tape.add(y, b)
}

/// Flipout forward pass with fresh noise from `rng`.
pub fn flipout_forward(
    tape: &mut Tape,
    x: Var,
    layer: &VariationalDenseVars,
    rng: &mut Stream,
) -> Result<Var> {
    let (inputs, outputs) = layer.dims(tape)?;
    let n = tape.value(x).rows();
    if n == 0 {
        return Err(Error::domain("flipout on an empty batch"));
    }
    let noise = FlipoutNoise::draw(n, inputs, outputs, rng);
    flipout_apply(tape, x, layer, &noise)
}

/// One reparameterized weight draw applied to the whole batch.
pub fn shared_forward(
    tape: &mut Tape,
    x: Var,
    layer: &VariationalDenseVars,
    rng: &mut Stream,
) -> Result<Var> {
    if tape.value(x).rows() == 0 {
        return Err(Error::domain("forward on an empty batch"));
    }
    let w = sample_reparam_var(tape, layer.kernel_mu, layer.kernel_rho, rng)?;
    let b = sample_reparam_var(tape, layer.bias_mu, layer.bias_rho, rng)?;
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

pub fn mean_forward(tape: &mut Tape, x: Var, layer: &VariationalDenseVars) -> Result<Var> {
    let y = tape.matmul(x, layer.kernel_mu)?;
    tape.add(y, layer.bias_mu)
}

pub(crate) fn dense_forward(
    tape: &mut Tape,
    x: Var,
    layer: &VariationalDenseVars,
    mode: &mut WeightMode<'_>,
) -> Result<Var> {
    match mode {
        WeightMode::Mean => mean_forward(tape, x, layer),
        WeightMode::Flipout(rng) => flipout_forward(tape, x, layer, rng),
        WeightMode::Shared(rng) => shared_forward(tape, x, layer, rng),
    }
}

/// Names of the variational arrays of a model, as `(mu, rho)` pairs.
pub fn variational_pairs(model: &Model) -> Vec<(String, String)> {
    model
        .params
        .keys()
        .filter_map(|k| k.strip_suffix(".mu"))
        .map(|base| (format!("{base}.mu"), format!("{base}.rho")))
        .collect()
}

/// Full-model `KL(q || p)` from parameter values.
pub fn model_kl(model: &Model, prior: &GaussianPrior) -> Result<f64> {
    let mut kl = 0.0;
    for (mu, rho) in variational_pairs(model) {
        let p = GaussianVariationalParams::new(model.params[&mu].clone(), model.params[&rho].clone())?;
        kl += kl_gaussian_diag(&p, prior)?;
    }
    Ok(kl)
}

/// Per-minibatch loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Batch-mean cross-entropy under the sampled weights.
    pub nll: f64,
    /// Full-model `KL(q || p)`.
    pub kl: f64,
    /// `1 / M` for `M` minibatches per epoch.
    pub kl_weight: f64,
    /// `nll + kl_weight * kl`.
    pub total: f64,
}

/// Tape handles and values of one minibatch objective.
#[derive(Clone, Copy, Debug)]
pub struct MinibatchObjective {
    /// Scalar `nll + kl_weight * kl`, the node to differentiate.
    pub total: Var,
    /// `[n x 2]` logits of the batch.
    pub logits: Var,
    pub report: LossReport,
}

/// Records the minibatch objective on `tape` and returns the scalar total
/// with its breakdown. Variational heads use `mode` for the weight draw;
/// deterministic heads require [`WeightMode::Mean`] and contribute no KL.
pub fn elbo_minibatch(
    tape: &mut Tape,
    model: &Model,
    bound: &BoundModel,
    batch: &Batch,
    num_batches: usize,
    prior: &GaussianPrior,
    mode: &mut WeightMode<'_>,
) -> Result<MinibatchObjective> {
    if batch.is_empty() {
        return Err(Error::domain("empty minibatch"));
    }
    if num_batches == 0 {
        return Err(Error::domain("number of minibatches must be at least 1"));
    }
    let x = tape.constant(batch.x.clone());
    let logits = model.forward_batch(tape, bound, x, mode)?;
    let logp = tape.log_softmax_rows(logits)?;
    let onehot = tape.constant(batch.one_hot());
    let picked = tape.multiply(logp, onehot)?;
    let ll = tape.sum(picked)?;
    let nll = tape.scale(ll, -1.0 / batch.len() as f64)?;
    let nll_value = tape.value(nll).item()?;

    let kl_weight = 1.0 / num_batches as f64;
    if !model.spec.head.is_variational() {
        return Ok(MinibatchObjective {
            total: nll,
            logits,
            report: LossReport {
                nll: nll_value,
                kl: 0.0,
                kl_weight,
                total: nll_value,
            },
        });
    }

    let mut kl_terms = Vec::new();
    for (mu, rho) in variational_pairs(model) {
        let term = kl_gaussian_diag_var(tape, bound.var(&mu)?, bound.var(&rho)?, prior)?;
        kl_terms.push(term);
    }
    let stacked = tape.concat_cols(&kl_terms)?;
    let kl = tape.sum(stacked)?;
    let kl_value = tape.value(kl).item()?;
    let weighted = tape.scale(kl, kl_weight)?;
    let total = tape.add(nll, weighted)?;
    let total_value = tape.value(total).item()?;
    Ok(MinibatchObjective {
        total,
        logits,
        report: LossReport {
            nll: nll_value,
            kl: kl_value,
            kl_weight,
            total: total_value,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn softplus_asymptotes() {
        assert!((softplus_sigma(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus_sigma(40.0) - 40.0).abs() < 1e-12);
        let tiny = softplus_sigma(-40.0);
        assert!(tiny > 0.0 && (tiny - (-40f64).exp()).abs() < 1e-30);
        assert!(softplus_sigma(1000.0).is_finite());
    }

    #[test]
    fn kl_closed_form_cases() {
        let prior = GaussianPrior::new(1.0).unwrap();
        let rho_one = 1f64.exp_m1().ln();
        let p = GaussianVariationalParams::new(Tensor::vector(vec![1.0]), Tensor::vector(vec![rho_one])).unwrap();
        assert!((kl_gaussian_diag(&p, &prior).unwrap() - 0.5).abs() < 1e-12);

        let prior = GaussianPrior::new(0.3).unwrap();
        let rho = 0.3f64.exp_m1().ln();
        let p = GaussianVariationalParams::new(Tensor::zeros(&[2, 3]), Tensor::filled(&[2, 3], rho)).unwrap();
        assert!(kl_gaussian_diag(&p, &prior).unwrap().abs() < 1e-12);
    }

    #[test]
    fn prior_scale_must_be_positive() {
        assert!(matches!(GaussianPrior::new(0.0), Err(Error::Domain(_))));
        assert!(matches!(GaussianPrior::new(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn kl_on_tape_matches_closed_form() {
        let mut rng = stream(5, 0, 0);
        let mu = Tensor::vector((0..7).map(|_| rng.random::<f64>() - 0.5).collect());
        let rho = Tensor::vector((0..7).map(|_| rng.random::<f64>() * 2.0 - 3.0).collect());
        let prior = GaussianPrior::new(0.7).unwrap();
        let closed = kl_gaussian_diag(&GaussianVariationalParams::new(mu.clone(), rho.clone()).unwrap(), &prior).unwrap();
        let mut tape = Tape::new();
        let m = tape.param("mu", mu);
        let r = tape.param("rho", rho);
        let kl = kl_gaussian_diag_var(&mut tape, m, r, &prior).unwrap();
        assert!((tape.value(kl).item().unwrap() - closed).abs() < 1e-12);
    }

    #[test]
    fn reparam_collapses_to_mean() {
        let p = GaussianVariationalParams::new(
            Tensor::vector(vec![0.25, -1.5, 3.0]),
            Tensor::filled(&[3], -40.0),
        )
        .unwrap();
        let w = sample_weights_reparam(&p, &mut stream(1, 0, 0));
        for (a, b) in w.data().iter().zip(p.mu.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn reparam_is_seed_deterministic() {
        let p = GaussianVariationalParams::new(Tensor::zeros(&[4]), Tensor::zeros(&[4])).unwrap();
        let a = sample_weights_reparam(&p, &mut stream(11, 0, 0));
        let b = sample_weights_reparam(&p, &mut stream(11, 0, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn flipout_rejects_empty_batch() {
        let mut tape = Tape::new();
        let k = GaussianVariationalParams::new(Tensor::zeros(&[2, 1]), Tensor::zeros(&[2, 1])).unwrap();
        let b = GaussianVariationalParams::new(Tensor::zeros(&[1]), Tensor::zeros(&[1])).unwrap();
        let layer = VariationalDenseVars::bind(&mut tape, "d", &k, &b);
        let x = tape.constant(Tensor::zeros(&[0, 2]));
        assert!(matches!(
            flipout_forward(&mut tape, x, &layer, &mut stream(1, 0, 0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn flipout_with_zero_sigma_is_mean() {
        let mut tape = Tape::new();
        let k = GaussianVariationalParams::new(
            Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25], vec![-0.75, 1.5]]).unwrap(),
            Tensor::filled(&[3, 2], -40.0),
        )
        .unwrap();
        let b = GaussianVariationalParams::new(Tensor::vector(vec![0.1, -0.2]), Tensor::filled(&[2], -40.0)).unwrap();
        let layer = VariationalDenseVars::bind(&mut tape, "d", &k, &b);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]).unwrap());
        let y = flipout_forward(&mut tape, x, &layer, &mut stream(4, 0, 0)).unwrap();
        let m = mean_forward(&mut tape, x, &layer).unwrap();
        assert_eq!(tape.value(y), tape.value(m));
    }
}
