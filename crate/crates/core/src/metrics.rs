//! Monte-Carlo predictive distributions and evaluation reports.
//!
//! The predictive probability of class `y` is the average of the softmax
//! outputs over `n_mc` weight draws from the variational posterior. Because
//! the LSTM stack is deterministic, its features are computed once per input
//! and only the dense head is re-run per draw.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tape;
use crate::layers::{Batch, Model, WeightMode, NUM_CLASSES};
use crate::pileup::{apply_mask, encode, Dataset};
use crate::rng::{self, purpose, Stream};
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 20;
/// Interval whose histogram mass measures "undecided" outputs.
pub const MID_INTERVAL: (f64, f64) = (0.4, 0.6);

const FEATURE_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDistribution {
    /// Mean of `draws`.
    pub probs: [f64; NUM_CLASSES],
    pub draws: Vec<[f64; NUM_CLASSES]>,
}

impl PredictiveDistribution {
    pub fn from_draws(draws: Vec<[f64; NUM_CLASSES]>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::domain("predictive distribution needs at least one draw"));
        }
        let n = draws.len() as f64;
        let mut probs = [0.0; NUM_CLASSES];
        for d in &draws {
            for (p, x) in probs.iter_mut().zip(d) {
                *p += x;
            }
        }
        for p in &mut probs {
            *p /= n;
        }
        Ok(Self { probs, draws })
    }

    pub fn n_mc(&self) -> usize {
        self.draws.len()
    }

    pub fn predicted_class(&self) -> u8 {
        u8::from(self.probs[1] > self.probs[0])
    }

    /// `-sum p log p` in nats, with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum::<f64>()
        .max(0.0)
}

fn softmax2(logits: &[f64]) -> [f64; NUM_CLASSES] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// LSTM features (`[n x 2h2]`) for encoded inputs, in input order.
fn features_for(model: &Model, xs: &[&Tensor]) -> Result<Tensor> {
    let labels = vec![0; xs.len()];
    let batch = Batch::from_sequences(xs, &labels)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let x = tape.constant(batch.x);
    let f = model.features(&mut tape, &bound, x)?;
    Ok(tape.value(f).clone())
}

/// Runs the dense head `n_mc` times on one feature row.
fn mc_from_features(
    model: &Model,
    feature_row: &[f64],
    n_mc: usize,
    rng: &mut Stream,
) -> Result<PredictiveDistribution> {
    if n_mc == 0 {
        return Err(Error::domain("n_mc must be at least 1"));
    }
    let mut tape = Tape::new();
    let bound = model.bind_head(&mut tape);
    let f = tape.constant(Tensor::matrix(1, feature_row.len(), feature_row.to_vec())?);
    let mut draws = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let mut mode = if model.spec.head.is_variational() {
            WeightMode::Flipout(rng)
        } else {
            WeightMode::Mean
        };
        let logits = model.head(&mut tape, &bound, f, &mut mode)?;
        draws.push(softmax2(tape.value(logits).data()));
    }
    PredictiveDistribution::from_draws(draws)
}

/// Predictive distribution of one encoded input `[d x f]` from `n_mc`
/// posterior draws. Deterministic heads repeat the same output.
pub fn mc_predict(
    model: &Model,
    x: &Tensor,
    n_mc: usize,
    rng: &mut Stream,
) -> Result<PredictiveDistribution> {
    if n_mc == 0 {
        return Err(Error::domain("n_mc must be at least 1"));
    }
    let f = features_for(model, &[x])?;
    mc_from_features(model, f.data(), n_mc, rng)
}

/// Predictions for many inputs. Input `i` draws its noise from the stream
/// `(seed, EVAL_NOISE, i)`; chunks run in parallel with identical results.
pub fn predict_all(
    model: &Model,
    xs: &[Tensor],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<PredictiveDistribution>> {
    if n_mc == 0 {
        return Err(Error::domain("n_mc must be at least 1"));
    }
    let chunks: Vec<Result<Vec<PredictiveDistribution>>> = xs
        .par_chunks(FEATURE_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let feats = features_for(model, &refs)?;
            (0..chunk.len())
                .map(|j| {
                    let i = c * FEATURE_CHUNK + j;
                    let mut r = rng::stream(seed, purpose::EVAL_NOISE, i as u64);
                    mc_from_features(model, feats.row(j), n_mc, &mut r)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(xs.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub bin_counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    /// `bins` equal-width bins on `[0, 1]`; the last bin is closed.
    pub fn uniform(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::domain("histogram needs at least one bin"));
        }
        Ok(Self {
            bin_edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
            bin_counts: vec![0; bins],
            total: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.bin_counts.len()
    }

    pub fn add(&mut self, v: f64) {
        let bins = self.bins();
        let idx = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        self.bin_counts[idx] += 1;
        self.total += 1;
    }

    /// Fraction of the total in bins lying entirely inside `[lo, hi]`.
    pub fn mass_in(&self, lo: f64, hi: f64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let tol = 1e-12;
        let inside: u64 = self
            .bin_counts
            .iter()
            .enumerate()
            .filter(|(i, _)| self.bin_edges[*i] >= lo - tol && self.bin_edges[i + 1] <= hi + tol)
            .map(|(_, c)| c)
            .sum();
        inside as f64 / self.total as f64
    }

    pub fn mid_mass(&self) -> f64 {
        self.mass_in(MID_INTERVAL.0, MID_INTERVAL.1)
    }

    /// Mass in `[0, 0.1] ∪ [0.9, 1]`.
    pub fn tail_mass(&self) -> f64 {
        self.mass_in(0.0, 0.1) + self.mass_in(0.9, 1.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.bin_counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.bin_edges[i], self.bin_edges[i + 1], c));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("bin_lo,bin_hi,count") {
            return Err(Error::format(0, "missing histogram CSV header"));
        }
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in lines.enumerate() {
            let bad = || Error::format(i as u64 + 1, format!("bad histogram row `{line}`"));
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            let lo: f64 = parts[0].parse().map_err(|_| bad())?;
            let hi: f64 = parts[1].parse().map_err(|_| bad())?;
            let c: u64 = parts[2].parse().map_err(|_| bad())?;
            if edges.is_empty() {
                edges.push(lo);
            } else if *edges.last().expect("non-empty") != lo {
                return Err(bad());
            }
            edges.push(hi);
            counts.push(c);
        }
        let total = counts.iter().sum();
        Ok(Self {
            bin_edges: edges,
            bin_counts: counts,
            total,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub n_mc: usize,
    pub tau: f64,
    pub accuracy: f64,
    /// Mean predictive entropy in nats.
    pub mean_entropy: f64,
    /// Share of samples whose largest class probability is at most `tau`.
    pub uncertain_fraction: f64,
    /// Histogram of the somatic-class probability.
    #[serde(flatten)]
    pub histogram: Histogram,
}

impl EvalReport {
    pub fn from_predictions(
        preds: &[PredictiveDistribution],
        labels: &[u8],
        tau: f64,
        bins: usize,
    ) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::domain("cannot evaluate on an empty dataset"));
        }
        if preds.len() != labels.len() {
            return Err(Error::dim("predictions and labels differ in count"));
        }
        let n_mc = preds[0].n_mc();
        let mut hist = Histogram::uniform(bins)?;
        let mut correct = 0usize;
        let mut uncertain = 0usize;
        let mut entropy_sum = 0.0;
        for (p, &y) in preds.iter().zip(labels) {
            if p.predicted_class() == y {
                correct += 1;
            }
            if p.max_prob() <= tau {
                uncertain += 1;
            }
            entropy_sum += p.entropy();
            hist.add(p.probs[1]);
        }
        let n = preds.len() as f64;
        Ok(Self {
            count: preds.len(),
            n_mc,
            tau,
            accuracy: correct as f64 / n,
            mean_entropy: entropy_sum / n,
            uncertain_fraction: uncertain as f64 / n,
            histogram: hist,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Evaluates `model` on encoded inputs, returning the report and every
/// per-sample predictive distribution.
pub fn evaluate(
    model: &Model,
    xs: &[Tensor],
    labels: &[u8],
    n_mc: usize,
    tau: f64,
    seed: u64,
) -> Result<(EvalReport, Vec<PredictiveDistribution>)> {
    if xs.is_empty() {
        return Err(Error::domain("cannot evaluate on an empty dataset"));
    }
    let preds = predict_all(model, xs, n_mc, seed)?;
    let report = EvalReport::from_predictions(&preds, labels, tau, DEFAULT_BINS)?;
    Ok((report, preds))
}

/// Encodes a dataset, optionally blacking out 1-based rows `mask`.
pub fn encode_dataset(ds: &Dataset, mask: Option<RangeInclusive<usize>>) -> Result<Vec<Tensor>> {
    ds.examples
        .iter()
        .map(|e| {
            let x = encode(&e.matrix);
            match &mask {
                Some(rows) => apply_mask(&x, rows.clone()),
                None => Ok(x),
            }
        })
        .collect()
}

pub fn evaluate_dataset(
    model: &Model,
    ds: &Dataset,
    mask: Option<RangeInclusive<usize>>,
    n_mc: usize,
    tau: f64,
    seed: u64,
) -> Result<(EvalReport, Vec<PredictiveDistribution>)> {
    let xs = encode_dataset(ds, mask)?;
    let labels: Vec<u8> = ds.examples.iter().map(|e| e.label).collect();
    evaluate(model, &xs, &labels, n_mc, tau, seed)
}

/// Masked-minus-unmasked comparison of two evaluation reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodSummary {
    pub n_mc: usize,
    pub tau: f64,
    pub accuracy_in: f64,
    pub accuracy_masked: f64,
    pub mean_entropy_in: f64,
    pub mean_entropy_masked: f64,
    pub entropy_delta: f64,
    pub uncertain_fraction_in: f64,
    pub uncertain_fraction_masked: f64,
    pub uncertain_fraction_delta: f64,
    pub mid_mass_in: f64,
    pub mid_mass_masked: f64,
    pub tail_mass_in: f64,
    pub tail_mass_masked: f64,
}

impl OodSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn ood_report(in_dist: &EvalReport, masked: &EvalReport) -> Result<OodSummary> {
    if in_dist.n_mc != masked.n_mc || in_dist.tau != masked.tau {
        return Err(Error::contract(format!(
            "reports differ in settings: n_mc {} vs {}, tau {} vs {}",
            in_dist.n_mc, masked.n_mc, in_dist.tau, masked.tau
        )));
    }
    if in_dist.histogram.bin_edges != masked.histogram.bin_edges {
        return Err(Error::contract("reports use different histogram bins"));
    }
    Ok(OodSummary {
        n_mc: in_dist.n_mc,
        tau: in_dist.tau,
        accuracy_in: in_dist.accuracy,
        accuracy_masked: masked.accuracy,
        mean_entropy_in: in_dist.mean_entropy,
        mean_entropy_masked: masked.mean_entropy,
        entropy_delta: masked.mean_entropy - in_dist.mean_entropy,
        uncertain_fraction_in: in_dist.uncertain_fraction,
        uncertain_fraction_masked: masked.uncertain_fraction,
        uncertain_fraction_delta: masked.uncertain_fraction - in_dist.uncertain_fraction,
        mid_mass_in: in_dist.histogram.mid_mass(),
        mid_mass_masked: masked.histogram.mid_mass(),
        tail_mass_in: in_dist.histogram.tail_mass(),
        tail_mass_masked: masked.histogram.tail_mass(),
    })
}
