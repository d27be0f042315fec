#![allow(dead_code)]

use std::collections::BTreeMap;

use bayescall::grad::{grad_check, OpKind, Tape, Var};
use bayescall::layers::{Batch, BoundModel, HeadKind, Model, ModelSpec, WeightMode};
use bayescall::pileup::{encode, simulate_dataset, SimulatorConfig};
use bayescall::rng::{stream, Stream};
use bayescall::variational::{elbo_minibatch, GaussianPrior};
use bayescall::Tensor;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Stream) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = lo + (hi - lo) * rng.random::<f64>();
    }
    t
}

/// Scalar loss `sum(op(inputs) * w)` with a fixed random weighting `w`.
fn weighted_loss(tape: &mut Tape, kind: &OpKind, vars: &[Var], seed: u64) -> bayescall::Result<Var> {
    let y = tape.apply(kind.clone(), vars)?;
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(uniform(&shape, -1.0, 1.0, &mut stream(seed, 99, 0)));
    let p = tape.multiply(y, w)?;
    tape.sum(p)
}

/// One finite-difference case per primitive: `(label, op, inputs)`.
pub fn primitive_cases(seed: u64) -> Vec<(String, OpKind, Vec<Tensor>)> {
    let mut r = stream(seed, 98, 0);
    let mut u = |shape: &[usize]| uniform(shape, -1.5, 1.5, &mut r);
    let pos = uniform(&[3, 4], 0.5, 2.0, &mut stream(seed, 97, 0));
    vec![
        ("matmul".into(), OpKind::Matmul, vec![u(&[3, 4]), u(&[4, 2])]),
        ("add".into(), OpKind::Add, vec![u(&[3, 4]), u(&[3, 4])]),
        ("add-broadcast".into(), OpKind::Add, vec![u(&[3, 4]), u(&[4])]),
        ("sub".into(), OpKind::Sub, vec![u(&[3, 4]), u(&[3, 4])]),
        ("sub-broadcast".into(), OpKind::Sub, vec![u(&[3, 4]), u(&[1, 4])]),
        ("multiply".into(), OpKind::Multiply, vec![u(&[3, 4]), u(&[3, 4])]),
        ("scale".into(), OpKind::Scale(-2.5), vec![u(&[3, 4])]),
        ("offset".into(), OpKind::Offset(0.75), vec![u(&[3, 4])]),
        ("concat-cols".into(), OpKind::ConcatCols, vec![u(&[3, 2]), u(&[3, 4])]),
        ("concat-rows".into(), OpKind::ConcatRows, vec![u(&[1, 4]), u(&[3, 4])]),
        ("slice-rows".into(), OpKind::SliceRows { start: 1, end: 3 }, vec![u(&[4, 3])]),
        ("slice-cols".into(), OpKind::SliceCols { start: 0, end: 2 }, vec![u(&[4, 3])]),
        ("sigmoid".into(), OpKind::Sigmoid, vec![u(&[3, 4])]),
        ("tanh".into(), OpKind::Tanh, vec![u(&[3, 4])]),
        ("softplus".into(), OpKind::Softplus, vec![u(&[3, 4])]),
        ("softmax-rows".into(), OpKind::SoftmaxRows, vec![u(&[3, 4])]),
        ("log-softmax-rows".into(), OpKind::LogSoftmaxRows, vec![u(&[3, 4])]),
        ("log".into(), OpKind::Log, vec![pos]),
        ("sum".into(), OpKind::Sum, vec![u(&[3, 4])]),
        ("mean".into(), OpKind::Mean, vec![u(&[3, 4])]),
        ("reshape".into(), OpKind::Reshape(vec![2, 6]), vec![u(&[3, 4])]),
    ]
}

pub fn primitive_grad_error(kind: &OpKind, inputs: &[Tensor], seed: u64) -> f64 {
    let params: Vec<(String, Tensor)> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("x{i}"), t.clone()))
        .collect();
    grad_check(|tape, vars| weighted_loss(tape, kind, vars, seed), &params, FD_STEP).unwrap()
}

/// The 4-step, 18-feature toy model (`d = 4`, `w = 3`).
pub fn toy_model(head: HeadKind, seed: u64) -> Model {
    let spec = ModelSpec::new(4, 3, 3, 2, 3, head).unwrap();
    let mut m = Model::init(spec, &mut stream(seed, 1, 0)).unwrap();
    // Larger sigmas make the noise path visible in the gradients.
    for (name, t) in m.params.iter_mut() {
        if name.ends_with(".rho") {
            *t = uniform(t.shape(), -1.5, 0.0, &mut stream(seed, 2, 0));
        }
    }
    m
}

pub fn toy_batch(seed: u64, n: usize) -> Batch {
    let cfg = SimulatorConfig {
        depth: 4,
        width: 3,
        coverage: 3.0,
        seed,
        ..SimulatorConfig::default()
    };
    let ds = simulate_dataset(&cfg, n).unwrap();
    let xs: Vec<Tensor> = ds.examples.iter().map(|e| encode(&e.matrix)).collect();
    let refs: Vec<&Tensor> = xs.iter().collect();
    let labels: Vec<u8> = ds.examples.iter().map(|e| e.label).collect();
    Batch::from_sequences(&refs, &labels).unwrap()
}

/// Full-model objective gradient error with the noise stream frozen.
pub fn full_model_grad_error(head: HeadKind, seed: u64) -> f64 {
    let model = toy_model(head, seed);
    let batch = toy_batch(seed, 3);
    let names: Vec<String> = model.params.keys().cloned().collect();
    let params: Vec<(String, Tensor)> = model.params.clone().into_iter().collect();
    let prior = GaussianPrior::new(0.8).unwrap();
    let f = |tape: &mut Tape, vars: &[Var]| {
        let map: BTreeMap<String, Var> = names.iter().cloned().zip(vars.iter().copied()).collect();
        let bound = BoundModel::from_vars(map);
        let mut noise = stream(seed, 3, 0);
        let mut mode = if head.is_variational() {
            WeightMode::Flipout(&mut noise)
        } else {
            WeightMode::Mean
        };
        Ok(elbo_minibatch(tape, &model, &bound, &batch, 4, &prior, &mut mode)?.total)
    };
    grad_check(f, &params, FD_STEP).unwrap()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// A small trained-shape Bayesian model with posterior scales around 0.3
/// and a batch of 32 matching inputs.
pub fn estimator_setup(seed: u64) -> (Model, Batch) {
    let spec = ModelSpec::new(20, 4, 8, 8, 16, HeadKind::VariationalFlipout).unwrap();
    let mut model = Model::init(spec, &mut stream(seed, 1, 0)).unwrap();
    for (name, t) in model.params.iter_mut() {
        if name.ends_with(".rho") {
            *t = uniform(t.shape(), -1.6, -0.8, &mut stream(seed, 2, 0));
        }
    }
    let cfg = SimulatorConfig {
        depth: 20,
        width: 4,
        coverage: 18.0,
        seed,
        ..SimulatorConfig::default()
    };
    let ds = simulate_dataset(&cfg, 32).unwrap();
    let xs: Vec<Tensor> = ds.examples.iter().map(|e| encode(&e.matrix)).collect();
    let refs: Vec<&Tensor> = xs.iter().collect();
    let labels: Vec<u8> = ds.examples.iter().map(|e| e.label).collect();
    (model, Batch::from_sequences(&refs, &labels).unwrap())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Flipout,
    Shared,
}

/// One sampled minibatch objective and, if asked, its gradient with
/// respect to every posterior mean, flattened in name order.
pub fn sample_objective(
    model: &Model,
    batch: &Batch,
    estimator: Estimator,
    rng: &mut Stream,
    with_grad: bool,
) -> (f64, Vec<f64>) {
    let prior = GaussianPrior::default();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut mode = match estimator {
        Estimator::Flipout => WeightMode::Flipout(rng),
        Estimator::Shared => WeightMode::Shared(rng),
    };
    let obj = elbo_minibatch(&mut tape, model, &bound, batch, 10, &prior, &mut mode).unwrap();
    if !with_grad {
        return (obj.report.total, Vec::new());
    }
    let grads = tape.backward(obj.total).unwrap();
    let mut g = Vec::new();
    for name in model.params.keys().filter(|n| n.ends_with(".mu")) {
        g.extend_from_slice(grads.param(name).unwrap().data());
    }
    (obj.report.total, g)
}

/// Elementwise sample variance of `draws` gradient vectors, summarized by
/// the median over entries.
pub fn median_gradient_variance(
    model: &Model,
    batch: &Batch,
    estimator: Estimator,
    draws: usize,
    seed: u64,
) -> f64 {
    let samples: Vec<Vec<f64>> = (0..draws)
        .map(|i| sample_objective(model, batch, estimator, &mut stream(seed, 5, i as u64), true).1)
        .collect();
    let k = samples[0].len();
    let vars = (0..k)
        .map(|j| {
            let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let (_, se) = mean_and_se(&col);
            se * se * draws as f64
        })
        .collect();
    median(vars)
}
