//! Tumor/normal pair matrices, the synthetic read simulator, and the binary
//! dataset format.
//!
//! A pair matrix is a `depth x 2*width` grid of base codes. Columns
//! `0..width` are normal reads, columns `width..2*width` tumor reads over the
//! same reference loci; the candidate locus is column `width / 2` of each
//! half. Rows are reads; rows past the sampled coverage are PAD and sit at
//! the bottom.
//!
//! Dataset file layout (all integers little-endian):
//!
//! ```text
//! "BVCD" | version u32 | depth u32 | width u32 | count u32
//! count x ( label u8 | depth*2*width base-code bytes, row-major )
//! ```

use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::CHANNELS;
use crate::rng::{self, bernoulli, purpose, Stream};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"BVCD";
pub const DATASET_VERSION: u32 = 1;
pub const DATASET_HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum BaseCode {
    Pad = 0,
    A = 1,
    C = 2,
    G = 3,
    T = 4,
    Other = 5,
}

impl BaseCode {
    pub const NUCLEOTIDES: [BaseCode; 4] = [BaseCode::A, BaseCode::C, BaseCode::G, BaseCode::T];
    pub const ALL: [BaseCode; 6] = [
        BaseCode::Pad,
        BaseCode::A,
        BaseCode::C,
        BaseCode::G,
        BaseCode::T,
        BaseCode::Other,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    /// Three-channel color of the code. PAD is black.
    pub fn channels(self) -> [f64; CHANNELS] {
        match self {
            BaseCode::Pad => [0.0, 0.0, 0.0],
            BaseCode::A => [1.0, 0.0, 0.0],
            BaseCode::C => [0.0, 1.0, 0.0],
            BaseCode::G => [0.0, 0.0, 1.0],
            BaseCode::T => [1.0, 1.0, 0.0],
            BaseCode::Other => [1.0, 0.0, 1.0],
        }
    }

    /// Inverse of [`BaseCode::channels`].
    pub fn from_channels(c: [f64; CHANNELS]) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.channels() == c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairMatrix {
    depth: usize,
    width: usize,
    codes: Vec<BaseCode>,
}

impl PairMatrix {
    pub fn new(depth: usize, width: usize, codes: Vec<BaseCode>) -> Result<Self> {
        if codes.len() != depth * 2 * width {
            return Err(Error::dim(format!(
                "{} codes for a {depth}x{} pair matrix",
                codes.len(),
                2 * width
            )));
        }
        Ok(Self {
            depth,
            width,
            codes,
        })
    }

    pub fn padded(depth: usize, width: usize) -> Self {
        Self {
            depth,
            width,
            codes: vec![BaseCode::Pad; depth * 2 * width],
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn codes(&self) -> &[BaseCode] {
        &self.codes
    }

    pub fn get(&self, row: usize, col: usize) -> BaseCode {
        self.codes[row * 2 * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, code: BaseCode) {
        self.codes[row * 2 * self.width + col] = code;
    }

    /// Candidate column index within one half.
    pub fn candidate(&self) -> usize {
        self.width / 2
    }

    pub fn normal_column(&self, locus: usize) -> Vec<BaseCode> {
        (0..self.depth).map(|r| self.get(r, locus)).collect()
    }

    pub fn tumor_column(&self, locus: usize) -> Vec<BaseCode> {
        (0..self.depth).map(|r| self.get(r, self.width + locus)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub matrix: PairMatrix,
    /// 1 when a somatic variant sits at the candidate locus.
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    pub depth: usize,
    pub width: usize,
    /// Per-cell probability of replacing a base with a different random base.
    pub error_rate: f64,
    /// Per-locus probability of a heterozygous germline variant.
    pub germline_het_prob: f64,
    pub vaf_lo: f64,
    pub vaf_hi: f64,
    /// Probability that an example is a somatic positive, before balancing.
    pub positive_fraction: f64,
    /// Mean number of non-PAD reads per half; at most `depth`.
    pub coverage: f64,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            depth: 100,
            width: 10,
            error_rate: 0.01,
            germline_het_prob: 0.01,
            vaf_lo: 0.1,
            vaf_hi: 0.9,
            positive_fraction: 0.5,
            coverage: 90.0,
            seed: 42,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        if self.depth == 0 || self.width == 0 {
            return bad("depth", "depth and width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.error_rate) {
            return bad("error_rate", format!("{} not in [0, 1)", self.error_rate));
        }
        if !(0.0..=1.0).contains(&self.germline_het_prob) {
            return bad("germline_het_prob", format!("{} not in [0, 1]", self.germline_het_prob));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad("positive_fraction", format!("{} not in [0, 1]", self.positive_fraction));
        }
        if !(self.vaf_lo > 0.0 && self.vaf_lo <= self.vaf_hi && self.vaf_hi <= 1.0) {
            return bad(
                "vaf_lo",
                format!("need 0 < vaf_lo <= vaf_hi <= 1, got [{}, {}]", self.vaf_lo, self.vaf_hi),
            );
        }
        if !(self.coverage >= 0.0 && self.coverage <= self.depth as f64) {
            return bad("coverage", format!("{} not in [0, depth]", self.coverage));
        }
        Ok(())
    }
}

fn other_base(rng: &mut Stream, exclude: &[BaseCode]) -> BaseCode {
    let choices: Vec<BaseCode> = BaseCode::NUCLEOTIDES
        .into_iter()
        .filter(|b| !exclude.contains(b))
        .collect();
    choices[rng.random_range(0..choices.len())]
}

/// Draws one labeled pair matrix.
///
/// Draw order: label; per locus reference base, het flag, het alt base;
/// for positives the somatic alt base and VAF; then the normal half and the
/// tumor half, each as a coverage count from `depth` Bernoulli trials
/// followed by per-read, per-locus allele and error draws.
pub fn simulate_example(cfg: &SimulatorConfig, rng: &mut Stream) -> LabeledExample {
    let (d, w) = (cfg.depth, cfg.width);
    let cand = w / 2;
    let label = bernoulli(rng, cfg.positive_fraction);

    let mut reference = Vec::with_capacity(w);
    let mut het_alt = Vec::with_capacity(w);
    for _ in 0..w {
        let r = BaseCode::NUCLEOTIDES[rng.random_range(0..4)];
        reference.push(r);
        het_alt.push(bernoulli(rng, cfg.germline_het_prob).then(|| other_base(rng, &[r])));
    }
    let somatic = label.then(|| {
        let mut exclude = vec![reference[cand]];
        exclude.extend(het_alt[cand]);
        let alt = other_base(rng, &exclude);
        let vaf = cfg.vaf_lo + (cfg.vaf_hi - cfg.vaf_lo) * rng.random::<f64>();
        (alt, vaf)
    });

    let mut m = PairMatrix::padded(d, w);
    let p_cover = cfg.coverage / d as f64;
    for (half, offset) in [(0, 0), (1, w)] {
        let covered = (0..d).filter(|_| bernoulli(rng, p_cover)).count();
        for row in 0..covered {
            for locus in 0..w {
                let mut base = reference[locus];
                if let Some(alt) = het_alt[locus] {
                    if bernoulli(rng, 0.5) {
                        base = alt;
                    }
                }
                if half == 1 && locus == cand {
                    if let Some((alt, vaf)) = somatic {
                        if bernoulli(rng, vaf) {
                            base = alt;
                        }
                    }
                }
                if bernoulli(rng, cfg.error_rate) {
                    base = other_base(rng, &[base]);
                }
                m.set(row, offset + locus, base);
            }
        }
    }
    LabeledExample {
        matrix: m,
        label: u8::from(label),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub depth: usize,
    pub width: usize,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn new(depth: usize, width: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            if ex.matrix.depth() != depth || ex.matrix.width() != width {
                return Err(Error::dim(format!(
                    "example {i} is {}x{}, dataset is {depth}x{width}",
                    ex.matrix.depth(),
                    ex.matrix.width()
                )));
            }
            if ex.label > 1 {
                return Err(Error::domain(format!("example {i} has label {}", ex.label)));
            }
        }
        Ok(Self {
            depth,
            width,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `(negatives, positives)`
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.examples.iter().filter(|e| e.label == 1).count();
        (self.len() - pos, pos)
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            depth: self.depth,
            width: self.width,
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }
}

/// `n` examples; example `i` uses its own stream keyed by `(cfg.seed, i)`, so
/// the result does not depend on thread scheduling.
pub fn simulate_dataset(cfg: &SimulatorConfig, n: usize) -> Result<Dataset> {
    cfg.validate()?;
    let examples = (0..n)
        .into_par_iter()
        .map(|i| simulate_example(cfg, &mut rng::stream(cfg.seed, purpose::SIMULATE, i as u64)))
        .collect();
    Dataset::new(cfg.depth, cfg.width, examples)
}

/// `[depth x 2*width*3]` features: each code's color triple, laid out row by
/// row with the three channels of a cell adjacent.
pub fn encode(m: &PairMatrix) -> Tensor {
    let cols = 2 * m.width * CHANNELS;
    let mut data = Vec::with_capacity(m.depth * cols);
    for code in &m.codes {
        data.extend_from_slice(&code.channels());
    }
    Tensor::matrix(m.depth, cols, data).expect("encoded length matches shape")
}

/// Inverse of [`encode`] for tensors holding only valid color triples.
pub fn decode(x: &Tensor, width: usize) -> Result<PairMatrix> {
    let (depth, cols) = x.dims2()?;
    if cols != 2 * width * CHANNELS {
        return Err(Error::dim(format!("{cols} features for width {width}")));
    }
    let codes = x
        .data()
        .chunks_exact(CHANNELS)
        .map(|c| {
            BaseCode::from_channels([c[0], c[1], c[2]])
                .ok_or_else(|| Error::domain(format!("{c:?} is not a base color")))
        })
        .collect::<Result<Vec<_>>>()?;
    PairMatrix::new(depth, width, codes)
}

/// Zeros (blacks out) 1-based inclusive rows `rows` of `x`.
pub fn apply_mask(x: &Tensor, rows: RangeInclusive<usize>) -> Result<Tensor> {
    let (d, f) = x.dims2()?;
    let (lo, hi) = (*rows.start(), *rows.end());
    if lo == 0 || lo > hi || hi > d {
        return Err(Error::domain(format!(
            "mask rows {lo}..{hi} not a non-empty range within 1..{d}"
        )));
    }
    let mut out = x.clone();
    out.data_mut()[(lo - 1) * f..hi * f].fill(0.0);
    Ok(out)
}

/// Drops random majority-class examples until both classes have the
/// minority count, then shuffles.
pub fn undersample(ds: &Dataset, rng: &mut Stream) -> Result<Dataset> {
    let mut neg: Vec<usize> = Vec::new();
    let mut pos: Vec<usize> = Vec::new();
    for (i, e) in ds.examples.iter().enumerate() {
        if e.label == 1 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::Balance(format!(
            "cannot balance counts ({}, {}): a class is absent",
            neg.len(),
            pos.len()
        )));
    }
    let keep = neg.len().min(pos.len());
    neg.shuffle(rng);
    pos.shuffle(rng);
    let mut idx: Vec<usize> = neg[..keep].iter().chain(&pos[..keep]).copied().collect();
    idx.shuffle(rng);
    Ok(ds.subset(&idx))
}

/// The first `per_class` examples of each class, in their original order.
pub fn take_per_class(ds: &Dataset, per_class: usize) -> Result<Dataset> {
    let mut taken = [0usize; 2];
    let mut idx = Vec::with_capacity(2 * per_class);
    for (i, e) in ds.examples.iter().enumerate() {
        let c = &mut taken[e.label as usize];
        if *c < per_class {
            *c += 1;
            idx.push(i);
        }
    }
    if taken != [per_class; 2] {
        return Err(Error::Balance(format!(
            "wanted {per_class} per class, have ({}, {})",
            taken[0], taken[1]
        )));
    }
    Ok(ds.subset(&idx))
}

/// Shuffled disjoint partition with `round(fraction * n)` training examples,
/// rounding halves up.
pub fn split(ds: &Dataset, train_fraction: f64, rng: &mut Stream) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::domain(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    if ds.is_empty() {
        return Err(Error::domain("cannot split an empty dataset"));
    }
    let n_train = (train_fraction * ds.len() as f64 + 0.5).floor() as usize;
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(rng);
    Ok((ds.subset(&idx[..n_train]), ds.subset(&idx[n_train..])))
}

pub fn dataset_to_bytes(ds: &Dataset) -> Vec<u8> {
    let cells = ds.depth * 2 * ds.width;
    let mut out = Vec::with_capacity(DATASET_HEADER_LEN + ds.len() * (cells + 1));
    out.extend_from_slice(DATASET_MAGIC);
    for v in [DATASET_VERSION, ds.depth as u32, ds.width as u32, ds.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for e in &ds.examples {
        out.push(e.label);
        out.extend(e.matrix.codes.iter().map(|&c| c as u8));
    }
    out
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < DATASET_HEADER_LEN {
        return Err(Error::format(
            bytes.len() as u64,
            format!("header needs {DATASET_HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(Error::format(0, "bad magic, expected BVCD"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != DATASET_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let (depth, width, count) = (word(8) as usize, word(12) as usize, word(16) as usize);
    let cells = depth * 2 * width;
    let record = cells + 1;
    let expected = DATASET_HEADER_LEN + count * record;
    if bytes.len() < expected {
        let complete = (bytes.len() - DATASET_HEADER_LEN) / record;
        let offset = DATASET_HEADER_LEN + complete * record;
        return Err(Error::format(
            offset as u64,
            format!("truncated: {count} examples declared, {complete} complete"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(expected as u64, "trailing bytes after last example"));
    }
    let mut examples = Vec::with_capacity(count);
    for k in 0..count {
        let start = DATASET_HEADER_LEN + k * record;
        let label = bytes[start];
        if label > 1 {
            return Err(Error::format(start as u64, format!("label byte {label}")));
        }
        let codes = bytes[start + 1..start + record]
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                BaseCode::from_u8(b).ok_or_else(|| {
                    Error::format((start + 1 + j) as u64, format!("invalid base code {b}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        examples.push(LabeledExample {
            matrix: PairMatrix {
                depth,
                width,
                codes,
            },
            label,
        });
    }
    Ok(Dataset {
        depth,
        width,
        examples,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&dataset_to_bytes(ds))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn quiet_cfg() -> SimulatorConfig {
        SimulatorConfig {
            depth: 50,
            width: 5,
            error_rate: 0.0,
            germline_het_prob: 0.0,
            vaf_lo: 1.0,
            vaf_hi: 1.0,
            positive_fraction: 1.0,
            coverage: 50.0,
            seed: 3,
        }
    }

    #[test]
    fn noiseless_homozygous_somatic_column() {
        let cfg = quiet_cfg();
        let ex = simulate_example(&cfg, &mut stream(1, 0, 0));
        assert_eq!(ex.label, 1);
        let m = &ex.matrix;
        let c = m.candidate();
        let normal = m.normal_column(c);
        let tumor = m.tumor_column(c);
        let reference = normal[0];
        assert!(normal.iter().all(|&b| b == reference));
        let alt = tumor[0];
        assert_ne!(alt, reference);
        assert!(tumor.iter().all(|&b| b == alt));
    }

    #[test]
    fn zero_positive_fraction_gives_negatives() {
        let cfg = SimulatorConfig {
            positive_fraction: 0.0,
            ..SimulatorConfig::default()
        };
        let ds = simulate_dataset(&cfg, 200).unwrap();
        assert_eq!(ds.class_counts(), (200, 0));
    }

    #[test]
    fn negatives_without_noise_show_only_reference() {
        let cfg = SimulatorConfig {
            error_rate: 0.0,
            germline_het_prob: 0.0,
            positive_fraction: 0.0,
            ..SimulatorConfig::default()
        };
        for ex in simulate_dataset(&cfg, 50).unwrap().examples {
            let m = &ex.matrix;
            let c = m.candidate();
            let reference = m.normal_column(c)[0];
            assert!(m
                .tumor_column(c)
                .iter()
                .all(|&b| b == reference || b == BaseCode::Pad));
        }
    }

    #[test]
    fn pad_rows_are_at_the_bottom() {
        let ds = simulate_dataset(&SimulatorConfig::default(), 20).unwrap();
        for ex in &ds.examples {
            let m = &ex.matrix;
            for half in [0, m.width()] {
                let col: Vec<BaseCode> = (0..m.depth()).map(|r| m.get(r, half)).collect();
                let first_pad = col.iter().position(|&b| b == BaseCode::Pad).unwrap_or(col.len());
                assert!(col[first_pad..].iter().all(|&b| b == BaseCode::Pad));
            }
        }
    }

    #[test]
    fn invalid_config_names_key() {
        let cfg = SimulatorConfig {
            vaf_lo: 0.8,
            vaf_hi: 0.2,
            ..SimulatorConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "vaf_lo"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn encode_single_a() {
        let mut m = PairMatrix::padded(3, 2);
        m.set(0, 0, BaseCode::A);
        let x = encode(&m);
        assert_eq!(x.shape(), &[3, 12]);
        assert_eq!(&x.data()[..3], &[1.0, 0.0, 0.0]);
        assert_eq!(x.sum(), 1.0);
        assert_eq!(encode(&PairMatrix::padded(3, 2)).sum(), 0.0);
    }

    #[test]
    fn encode_decode_all_codes() {
        let m = PairMatrix::new(1, 3, BaseCode::ALL.to_vec()).unwrap();
        assert_eq!(decode(&encode(&m), 3).unwrap(), m);
    }

    #[test]
    fn mask_ranges() {
        let x = Tensor::filled(&[4, 3], 1.0);
        assert_eq!(apply_mask(&x, 1..=4).unwrap().sum(), 0.0);
        let one = apply_mask(&x, 1..=1).unwrap();
        assert_eq!(one.row(0), &[0.0; 3]);
        assert_eq!(one.row(1), &[1.0; 3]);
        assert_eq!(apply_mask(&one, 1..=1).unwrap(), one);
        assert!(matches!(apply_mask(&x, 0..=2), Err(Error::Domain(_))));
        assert!(matches!(apply_mask(&x, 2..=5), Err(Error::Domain(_))));
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 3..=2;
        assert!(matches!(apply_mask(&x, empty), Err(Error::Domain(_))));
    }

    fn labeled(labels: &[u8]) -> Dataset {
        let examples = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let mut m = PairMatrix::padded(2, 1);
                m.set(0, 0, BaseCode::ALL[i % 6]);
                m.set(1, 1, BaseCode::ALL[(i / 6) % 6]);
                LabeledExample { matrix: m, label }
            })
            .collect();
        Dataset::new(2, 1, examples).unwrap()
    }

    #[test]
    fn undersample_counts() {
        let mut labels = vec![1u8; 100];
        labels.extend(vec![0u8; 300]);
        let ds = labeled(&labels);
        let out = undersample(&ds, &mut stream(1, 0, 0)).unwrap();
        assert_eq!(out.class_counts(), (100, 100));
        assert!(matches!(
            undersample(&labeled(&[0, 0, 0]), &mut stream(1, 0, 0)),
            Err(Error::Balance(_))
        ));
    }

    #[test]
    fn split_sizes_and_rounding() {
        let ds = labeled(&[0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        let (tr, te) = split(&ds, 0.8, &mut stream(2, 0, 0)).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr, te) = split(&labeled(&[0, 1, 0]), 0.5, &mut stream(2, 0, 0)).unwrap();
        assert_eq!((tr.len(), te.len()), (2, 1));
        assert!(matches!(
            split(&labeled(&[]), 0.5, &mut stream(2, 0, 0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(split(&ds, 1.0, &mut stream(2, 0, 0)), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_dataset_file_is_header_only() {
        let ds = Dataset::new(100, 10, Vec::new()).unwrap();
        let bytes = dataset_to_bytes(&ds);
        assert_eq!(bytes.len(), DATASET_HEADER_LEN);
        assert_eq!(dataset_from_bytes(&bytes).unwrap(), ds);
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let ds = labeled(&[0, 1, 1]);
        let bytes = dataset_to_bytes(&ds);
        let record = 2 * 2 + 1;
        match dataset_from_bytes(&bytes[..bytes.len() - 1]) {
            Err(Error::Format { offset, .. }) => {
                assert_eq!(offset as usize, DATASET_HEADER_LEN + 2 * record)
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(dataset_from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(dataset_from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
        let mut bad = bytes;
        bad[DATASET_HEADER_LEN + 1] = 6;
        assert!(matches!(
            dataset_from_bytes(&bad),
            Err(Error::Format { offset, .. }) if offset as usize == DATASET_HEADER_LEN + 1
        ));
    }
}
