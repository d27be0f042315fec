//! The four pipeline stages behind the `bayescall` binary.
//!
//! Every command is a pure function of its configuration and input files:
//! rerunning with the same seed rewrites the same bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::{self, CHECKPOINT_VERSION};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::layers::{HeadKind, Model};
use crate::metrics::{evaluate_dataset, ood_report, EvalReport, OodSummary};
use crate::pileup::{load_dataset, save_dataset, simulate_dataset, undersample, Dataset};
use crate::rng::{self, purpose};
use crate::train::{log_to_csv, train_model, train_test_split, EpochLog};

pub const REPORT_FILE: &str = "report.json";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const CONFIG_ECHO_FILE: &str = "config.txt";
pub const OOD_SUMMARY_FILE: &str = "ood_summary.json";

/// Class counts `(germline, somatic)` before and after balancing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimulateSummary {
    pub before: (usize, usize),
    pub after: (usize, usize),
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<SimulateSummary> {
    cfg.validate()?;
    let ds = simulate_dataset(&cfg.sim, cfg.n_examples)?;
    let before = ds.class_counts();
    let ds = if cfg.balance {
        undersample(&ds, &mut rng::stream(cfg.seed(), purpose::BALANCE, 0))?
    } else {
        ds
    };
    save_dataset(&ds, out)?;
    Ok(SimulateSummary {
        before,
        after: ds.class_counts(),
    })
}

/// `M.bvc1` logs to `M.log.csv`.
pub fn log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.csv")
}

pub fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    head: HeadKind,
    out: &Path,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let ds = load_dataset(data)?;
    let spec = cfg.model_spec(head)?;
    let (train, _) = train_test_split(&ds, cfg.train.train_fraction, cfg.seed())?;
    let (model, log) = train_model(spec, &train, &cfg.train, on_epoch)?;
    checkpoint::save(&model, out)?;
    fs::write(log_path(out), log_to_csv(&log))?;
    Ok(log)
}

fn load_for_eval(cfg: &RunConfig, model: &Path, data: &Path) -> Result<(Model, Dataset)> {
    cfg.validate()?;
    let model = checkpoint::load(model)?;
    let ds = load_dataset(data)?;
    if model.spec.depth != ds.depth || model.spec.width != ds.width {
        return Err(Error::Format {
            offset: 12,
            message: format!(
                "checkpoint version {CHECKPOINT_VERSION} expects {}x{} pair matrices, dataset has {}x{}",
                model.spec.depth, model.spec.width, ds.depth, ds.width
            ),
        });
    }
    let (_, test) = train_test_split(&ds, cfg.train.train_fraction, cfg.seed())?;
    Ok((model, test))
}

fn n_mc_for(cfg: &RunConfig, model: &Model) -> usize {
    if model.spec.head.is_variational() {
        cfg.eval.n_mc
    } else {
        1
    }
}

fn write_report(dir: &Path, prefix: &str, report: &EvalReport) -> Result<()> {
    fs::write(dir.join(format!("{prefix}{REPORT_FILE}")), report.to_json()?)?;
    fs::write(
        dir.join(format!("{prefix}{HISTOGRAM_FILE}")),
        report.histogram.to_csv(),
    )?;
    Ok(())
}

/// Evaluates on the test partition; writes `report.json`, `histogram.csv`
/// and the resolved `config.txt` into `out_dir`.
pub fn cmd_eval(cfg: &RunConfig, model: &Path, data: &Path, out_dir: &Path) -> Result<EvalReport> {
    let (model, test) = load_for_eval(cfg, model, data)?;
    let (report, _) = evaluate_dataset(
        &model,
        &test,
        None,
        n_mc_for(cfg, &model),
        cfg.eval.tau,
        cfg.seed(),
    )?;
    fs::create_dir_all(out_dir)?;
    write_report(out_dir, "", &report)?;
    fs::write(out_dir.join(CONFIG_ECHO_FILE), cfg.to_text())?;
    Ok(report)
}

/// Outputs of [`cmd_mask_eval`].
#[derive(Clone, Debug, PartialEq)]
pub struct MaskEvalOutput {
    pub in_dist: EvalReport,
    pub masked: EvalReport,
    pub summary: OodSummary,
}

/// Evaluates the test partition unmasked and with `cfg.eval.mask_rows`
/// blacked out. Writes `in_dist_*`, `masked_*`, `ood_summary.json` and
/// `config.txt`.
pub fn cmd_mask_eval(
    cfg: &RunConfig,
    model: &Path,
    data: &Path,
    out_dir: &Path,
) -> Result<MaskEvalOutput> {
    let (model, test) = load_for_eval(cfg, model, data)?;
    let n_mc = n_mc_for(cfg, &model);
    let (in_dist, _) = evaluate_dataset(&model, &test, None, n_mc, cfg.eval.tau, cfg.seed())?;
    let (masked, _) = evaluate_dataset(
        &model,
        &test,
        Some(cfg.eval.mask_range()),
        n_mc,
        cfg.eval.tau,
        cfg.seed(),
    )?;
    let summary = ood_report(&in_dist, &masked)?;
    fs::create_dir_all(out_dir)?;
    write_report(out_dir, "in_dist_", &in_dist)?;
    write_report(out_dir, "masked_", &masked)?;
    fs::write(out_dir.join(OOD_SUMMARY_FILE), summary.to_json()?)?;
    fs::write(out_dir.join(CONFIG_ECHO_FILE), cfg.to_text())?;
    Ok(MaskEvalOutput {
        in_dist,
        masked,
        summary,
    })
}
