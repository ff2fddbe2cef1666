//! `search` subcommand: bilevel architecture search over the shared supernet.
//! Writes the optimization trace and an architecture checkpoint holding the
//! mixing logits; `derive` turns that checkpoint into a discrete genotype.

use cdcn::io::checkpoint::{save_checkpoint, snapshot, ModelMeta, SupernetMeta};
use cdcn::io::csvio::write_trace;
use cdcn::nas::{
    build_supernet, default_warmup, run_search, OpCatalog, SearchConfig, SearchPlan, SharingMode,
    SupernetConfig,
};
use cdcn::{Error, Result};

use crate::config::{ConfigSpec, RunConfig};
use crate::data::load_dataset;
use crate::output::print_row;
use crate::CliArgs;

const SPEC: ConfigSpec = ConfigSpec {
    defaults: &[
        ("preset", "desk"),
        ("input_size", "24"),
        ("plan", "desk"),
        ("n_intermediate", "4"),
        ("sharing", "varied"),
        ("node_attention", "false"),
        ("theta_mode", "fixed"),
        ("theta", "0.7"),
        ("epochs", "30"),
        ("warmup_epochs", "auto"),
        ("batch_size", "4"),
        ("lr_weights", "1e-4"),
        ("wd_weights", "5e-5"),
        ("lr_arch", "6e-4"),
        ("wd_arch", "1e-3"),
        ("seed", "7"),
        ("train_manifest", ""),
        ("val_manifest", ""),
        ("out_dir", "search_out"),
    ],
    presets: &[("desk", &[])],
};

pub fn run(cli: &CliArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&SPEC, cli.config_path.as_deref(), &cli.flags)?;

    let plan = match cfg.required("plan")? {
        "desk" => SearchPlan::desk(),
        "default" => SearchPlan::search_default(),
        other => {
            return Err(Error::Config(format!(
                "plan must be desk or default, got {other:?}"
            )))
        }
    };
    let sharing = match cfg.required("sharing")? {
        "varied" => SharingMode::Varied,
        "shared" => SharingMode::Shared,
        other => {
            return Err(Error::Config(format!(
                "sharing must be varied or shared, got {other:?}"
            )))
        }
    };
    let net_config = SupernetConfig {
        input_size: cfg.usize_value("input_size")?,
        plan,
        n_intermediate: cfg.usize_value("n_intermediate")?,
        theta: cfg.theta_value()?,
        sharing,
        node_attention: cfg.bool_value("node_attention")?,
    };

    let epochs = cfg.usize_value("epochs")?;
    let warmup_epochs = match cfg.required("warmup_epochs")? {
        "auto" => default_warmup(epochs),
        text => text
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("warmup_epochs must be auto or an integer, got {text:?}")))?,
    };
    let search_cfg = SearchConfig {
        epochs,
        warmup_epochs,
        batch_size: cfg.usize_value("batch_size")?,
        lr_weights: cfg.f64_value("lr_weights")?,
        wd_weights: cfg.f64_value("wd_weights")?,
        lr_arch: cfg.f64_value("lr_arch")?,
        wd_arch: cfg.f64_value("wd_arch")?,
        seed: cfg.u64_value("seed")?,
    };

    let train = load_dataset(std::path::Path::new(cfg.required("train_manifest")?))?;
    let val = load_dataset(std::path::Path::new(cfg.required("val_manifest")?))?;
    let catalog = OpCatalog::standard();
    let mut net = build_supernet(&net_config, &catalog, search_cfg.seed)?;
    let run = run_search(&mut net, &train, &val, &search_cfg)?;

    for row in &run.trace {
        print_row(
            cli.json,
            &[
                ("epoch", serde_json::json!(row.epoch)),
                ("train_loss", serde_json::json!(row.train_loss)),
                ("val_loss", serde_json::json!(row.val_loss)),
            ],
        );
    }

    let out_dir = super::prepare_out_dir(&cfg)?;
    write_trace(&out_dir.join("trace.csv"), &run.trace)?;

    let meta = ModelMeta {
        kind: "supernet".to_string(),
        cdcn: None,
        cdcnpp: None,
        supernet: Some(SupernetMeta {
            config: net_config,
            ops: catalog.ops().iter().map(|op| op.name()).collect(),
        }),
    };
    let entries = snapshot(&net.arch_tensors_mut());
    let arch_path = out_dir.join("arch.cdck");
    save_checkpoint(&arch_path, &meta.to_json(), &entries)?;
    cfg.write_resolved(&out_dir)?;

    print_row(
        cli.json,
        &[
            ("epochs", serde_json::json!(run.trace.len())),
            (
                "final_val_loss",
                serde_json::json!(run.trace.last().map(|r| r.val_loss)),
            ),
            (
                "arch_checkpoint",
                serde_json::json!(arch_path.display().to_string()),
            ),
        ],
    );
    Ok(())
}
