//! `eval` subcommand: computes detection error rates from a scores file, or by
//! scoring a manifest dataset with a checkpointed model first.

use std::path::Path;

use cdcn::io::csvio::read_scores;
use cdcn::metrics::{apcer_bpcer_acer, auc, eer, hter, ScoreSet};
use cdcn::train::score_dataset;
use cdcn::{Error, Result};

use crate::config::{ConfigSpec, RunConfig};
use crate::data::load_dataset;
use crate::output::print_metric_table;
use crate::CliArgs;

const SPEC: ConfigSpec = ConfigSpec {
    defaults: &[
        ("scores_path", ""),
        ("checkpoint_path", ""),
        ("manifest_path", ""),
        ("dev_scores_path", ""),
        ("dev_manifest_path", ""),
        ("metric_mode", "fixed_threshold"),
        ("threshold", "0.5"),
        ("batch_size", "16"),
        ("out_dir", "eval_out"),
    ],
    presets: &[],
};

/// Scores a manifest dataset with the checkpointed model.
fn score_manifest(cfg: &RunConfig, manifest: &str) -> Result<ScoreSet> {
    let ck_path = cfg.required("checkpoint_path")?;
    let mut model = super::load_model(Path::new(ck_path))?;
    let data = load_dataset(Path::new(manifest))?;
    score_dataset(&mut model, &data, cfg.usize_value("batch_size")?)
}

fn resolve_test_scores(cfg: &RunConfig) -> Result<ScoreSet> {
    let scores_path = cfg.str_value("scores_path")?;
    let manifest_path = cfg.str_value("manifest_path")?;
    match (scores_path.is_empty(), manifest_path.is_empty()) {
        (false, true) => read_scores(Path::new(scores_path)),
        (true, false) => score_manifest(cfg, manifest_path),
        (false, false) => Err(Error::Config(
            "give scores_path or manifest_path, not both".to_string(),
        )),
        (true, true) => Err(Error::Config(
            "one of scores_path or manifest_path (with checkpoint_path) is required".to_string(),
        )),
    }
}

fn resolve_dev_scores(cfg: &RunConfig) -> Result<Option<ScoreSet>> {
    let scores_path = cfg.str_value("dev_scores_path")?;
    let manifest_path = cfg.str_value("dev_manifest_path")?;
    match (scores_path.is_empty(), manifest_path.is_empty()) {
        (false, true) => Ok(Some(read_scores(Path::new(scores_path))?)),
        (true, false) => Ok(Some(score_manifest(cfg, manifest_path)?)),
        (false, false) => Err(Error::Config(
            "give dev_scores_path or dev_manifest_path, not both".to_string(),
        )),
        (true, true) => Ok(None),
    }
}

pub fn run(cli: &CliArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&SPEC, cli.config_path.as_deref(), &cli.flags)?;

    let test = resolve_test_scores(&cfg)?;
    let dev = resolve_dev_scores(&cfg)?;

    let threshold = match cfg.required("metric_mode")? {
        "fixed_threshold" => cfg.f64_value("threshold")?,
        "dev_eer" => {
            let dev = dev.as_ref().ok_or_else(|| {
                Error::Config(
                    "metric_mode dev_eer needs a development set (dev_scores_path or dev_manifest_path)"
                        .to_string(),
                )
            })?;
            eer(dev)?.threshold
        }
        other => {
            return Err(Error::Config(format!(
                "metric_mode must be fixed_threshold or dev_eer, got {other:?}"
            )))
        }
    };

    let at_threshold = apcer_bpcer_acer(&test, threshold)?;
    let test_eer = eer(&test)?;
    let test_auc = auc(&test)?;

    let mut rows: Vec<(String, f64)> = vec![("threshold".to_string(), at_threshold.threshold)];
    for (attack_type, rate) in &at_threshold.apcer_per_type {
        rows.push((format!("apcer_{attack_type}"), *rate));
    }
    rows.push(("apcer".to_string(), at_threshold.apcer));
    rows.push(("bpcer".to_string(), at_threshold.bpcer));
    rows.push(("acer".to_string(), at_threshold.acer));
    rows.push(("eer".to_string(), test_eer.eer));
    rows.push(("eer_threshold".to_string(), test_eer.threshold));
    rows.push(("auc".to_string(), test_auc));
    if let Some(dev) = &dev {
        let cross = hter(dev, &test)?;
        rows.push(("hter".to_string(), cross.hter));
        rows.push(("hter_threshold".to_string(), cross.threshold));
        rows.push(("hter_far".to_string(), cross.far));
        rows.push(("hter_frr".to_string(), cross.frr));
    }

    let out_dir = super::prepare_out_dir(&cfg)?;
    let mut csv = String::from("metric,value\n");
    for (name, value) in &rows {
        csv.push_str(&format!("{name},{value}\n"));
    }
    let csv_path = out_dir.join("metrics.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io_at(&csv_path, e))?;
    cfg.write_resolved(&out_dir)?;

    print_metric_table(cli.json, &rows);
    Ok(())
}
