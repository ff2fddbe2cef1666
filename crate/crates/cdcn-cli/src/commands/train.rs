//! `train` subcommand: fits a depth-regression model on a manifest dataset and
//! writes the loss curve plus a checkpoint.

use cdcn::io::checkpoint::{save_checkpoint, snapshot, ModelMeta};
use cdcn::io::csvio::write_loss_curve;
use cdcn::model::{build_cdcn, build_cdcnpp, CdcnConfig, Model};
use cdcn::nas::Genotype;
use cdcn::train::{train_model, TrainConfig};
use cdcn::{Error, Result};

use crate::config::{ConfigSpec, RunConfig};
use crate::data::load_dataset;
use crate::output::print_row;
use crate::CliArgs;

const SPEC: ConfigSpec = ConfigSpec {
    defaults: &[
        ("preset", "desk"),
        ("model", "cdcn"),
        ("input_size", "64"),
        ("channel_scale", "1/4"),
        ("theta_mode", "fixed"),
        ("theta", "0.7"),
        ("use_mafm", "false"),
        ("genotype_path", ""),
        ("epochs", "6"),
        ("batch_size", "8"),
        ("lr", "1e-3"),
        ("weight_decay", "5e-5"),
        ("seed", "7"),
        ("train_manifest", ""),
        ("out_dir", "train_out"),
    ],
    presets: &[
        ("desk", &[]),
        (
            "full",
            &[
                ("input_size", "256"),
                ("channel_scale", "1"),
                ("epochs", "50"),
                ("batch_size", "8"),
                ("lr", "1e-4"),
            ],
        ),
    ],
};

fn build_model(cfg: &RunConfig) -> Result<Model<f32>> {
    let theta = cfg.theta_value()?;
    let seed = cfg.u64_value("seed")?;
    let model_kind = cfg.required("model")?;
    match model_kind {
        "cdcn" => {
            let config = CdcnConfig {
                input_size: cfg.usize_value("input_size")?,
                channel_scale: cfg.scale_value("channel_scale")?,
                theta,
                use_mafm: cfg.bool_value("use_mafm")?,
            };
            Ok(Model::Cdcn(build_cdcn(&config, seed)?))
        }
        "cdcnpp" => {
            let path = cfg.required("genotype_path")?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
            let genotype = Genotype::parse(&text)?;
            let config = CdcnConfig {
                input_size: cfg.usize_value("input_size")?,
                channel_scale: cfg.scale_value("channel_scale")?,
                theta,
                use_mafm: cfg.bool_value("use_mafm")?,
            };
            Ok(Model::CdcnPp(build_cdcnpp(&genotype, &config, seed)?))
        }
        other => Err(Error::Config(format!(
            "model must be cdcn or cdcnpp, got {other:?}"
        ))),
    }
}

pub fn run(cli: &CliArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&SPEC, cli.config_path.as_deref(), &cli.flags)?;

    let dataset = load_dataset(std::path::Path::new(cfg.required("train_manifest")?))?;
    let mut model = build_model(&cfg)?;
    if dataset.input_size() != model.input_size() {
        return Err(Error::Config(format!(
            "dataset images are {0}x{0} but the model expects {1}x{1}",
            dataset.input_size(),
            model.input_size()
        )));
    }

    let train_cfg = TrainConfig {
        epochs: cfg.usize_value("epochs")?,
        batch_size: cfg.usize_value("batch_size")?,
        lr: cfg.f64_value("lr")?,
        weight_decay: cfg.f64_value("weight_decay")?,
        seed: cfg.u64_value("seed")?,
    };
    let stats = train_model(&mut model, &dataset, &train_cfg)?;
    for row in &stats {
        print_row(
            cli.json,
            &[
                ("epoch", serde_json::json!(row.epoch)),
                ("mean_loss", serde_json::json!(row.mean_loss)),
                ("lr", serde_json::json!(row.lr)),
            ],
        );
    }

    let out_dir = super::prepare_out_dir(&cfg)?;
    write_loss_curve(&out_dir.join("loss.csv"), &stats)?;

    let meta = ModelMeta::describe(&model);
    let entries = snapshot(&model.tensors_mut());
    let ck_path = out_dir.join("model.cdck");
    save_checkpoint(&ck_path, &meta.to_json(), &entries)?;
    cfg.write_resolved(&out_dir)?;

    print_row(
        cli.json,
        &[
            ("trained_epochs", serde_json::json!(stats.len())),
            (
                "final_loss",
                serde_json::json!(stats.last().map(|s| s.mean_loss)),
            ),
            (
                "checkpoint",
                serde_json::json!(ck_path.display().to_string()),
            ),
        ],
    );
    Ok(())
}
