//! `derive` subcommand: turns a stored supernet architecture checkpoint into a
//! discrete genotype by picking the strongest operation on every edge.

use cdcn::io::checkpoint::{load_checkpoint, Checkpoint, ModelMeta};
use cdcn::nas::{build_supernet, derive_genotype, OpCatalog, OpKind};
use cdcn::{Error, Result};

use crate::config::{ConfigSpec, RunConfig};
use crate::output::print_row;
use crate::CliArgs;

const SPEC: ConfigSpec = ConfigSpec {
    defaults: &[("arch_path", ""), ("out_dir", "derive_out")],
    presets: &[],
};

pub fn run(cli: &CliArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&SPEC, cli.config_path.as_deref(), &cli.flags)?;

    let arch_path = cfg.required("arch_path")?;
    let ck: Checkpoint<f32> = load_checkpoint(std::path::Path::new(arch_path))?;
    let meta = ModelMeta::parse(&ck.meta)?;
    if meta.kind != "supernet" {
        return Err(Error::Data(format!(
            "expected a supernet architecture checkpoint, metadata kind is {:?}",
            meta.kind
        )));
    }
    let sup = meta.supernet.as_ref().ok_or_else(|| {
        Error::Data("metadata kind is supernet but the supernet block is missing".to_string())
    })?;
    let ops = sup
        .ops
        .iter()
        .map(|name| OpKind::parse(name))
        .collect::<Result<Vec<_>>>()?;
    let catalog = OpCatalog::custom(ops)?;

    let mut net = build_supernet::<f32>(&sup.config, &catalog, 0)?;
    ck.apply_to(&mut net.arch_tensors_mut())?;
    let genotype = derive_genotype(net.arch(), &catalog, sup.config.node_attention)?;
    let text = genotype.emit();

    let out_dir = super::prepare_out_dir(&cfg)?;
    let genotype_path = out_dir.join("genotype.txt");
    std::fs::write(&genotype_path, &text).map_err(|e| Error::io_at(&genotype_path, e))?;
    cfg.write_resolved(&out_dir)?;

    if cli.json {
        print_row(true, &[("genotype", serde_json::json!(text))]);
    } else {
        print!("{text}");
    }
    Ok(())
}
