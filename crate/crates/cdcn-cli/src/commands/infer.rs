//! `infer` subcommand: runs a checkpointed model over a manifest dataset,
//! writing per-sample liveness scores and the predicted depth maps.

use std::path::Path;

use cdcn::io::csvio::write_scores;
use cdcn::io::netpbm::save_pgm;
use cdcn::metrics::{ScoreEntry, ScoreSet};
use cdcn::model::depth_to_scores;
use cdcn::tape::Tape;
use cdcn::{Error, Result};

use crate::config::{ConfigSpec, RunConfig};
use crate::data::load_dataset;
use crate::output::print_row;
use crate::CliArgs;

const SPEC: ConfigSpec = ConfigSpec {
    defaults: &[
        ("checkpoint_path", ""),
        ("manifest_path", ""),
        ("out_dir", "infer_out"),
    ],
    presets: &[],
};

pub fn run(cli: &CliArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&SPEC, cli.config_path.as_deref(), &cli.flags)?;

    let mut model = super::load_model(Path::new(cfg.required("checkpoint_path")?))?;
    let data = load_dataset(Path::new(cfg.required("manifest_path")?))?;
    if data.input_size() != model.input_size() {
        return Err(Error::Config(format!(
            "dataset images are {0}x{0} but the model expects {1}x{1}",
            data.input_size(),
            model.input_size()
        )));
    }
    model.set_training(false);

    let out_dir = super::prepare_out_dir(&cfg)?;
    let depth_dir = out_dir.join("depth");
    std::fs::create_dir_all(&depth_dir).map_err(|e| Error::io_at(&depth_dir, e))?;

    let mut entries = Vec::with_capacity(data.len());
    for sample in data.samples() {
        let mut tape = Tape::inference();
        let pred = model.forward(&mut tape, &sample.image)?;
        let score = depth_to_scores(&pred)?[0];
        save_pgm(depth_dir.join(format!("{}.pgm", sample.id)), &pred)?;
        entries.push(ScoreEntry {
            sample_id: sample.id.clone(),
            score,
            label: sample.label.clone(),
        });
    }
    let scores = ScoreSet::new(entries)?;
    let scores_path = out_dir.join("scores.csv");
    write_scores(&scores_path, &scores)?;
    cfg.write_resolved(&out_dir)?;

    print_row(
        cli.json,
        &[
            ("scored", serde_json::json!(scores.len())),
            ("scores", serde_json::json!(scores_path.display().to_string())),
        ],
    );
    Ok(())
}
