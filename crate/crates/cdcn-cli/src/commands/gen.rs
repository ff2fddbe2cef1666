//! `gen` subcommand: writes a synthetic dataset (images, depth maps, manifest)
//! to a directory.

use cdcn::synth::{generate, DomainSpec, SynthConfig};
use cdcn::Result;

use crate::config::{ConfigSpec, RunConfig};
use crate::data::write_dataset;
use crate::output::print_row;
use crate::CliArgs;

const SPEC: ConfigSpec = ConfigSpec {
    defaults: &[
        ("seed", "7"),
        ("image_size", "64"),
        ("live", "32"),
        ("print_lattice", "16"),
        ("replay_moire", "16"),
        ("domain_tag", "base"),
        ("brightness_lo", "0"),
        ("brightness_hi", "0"),
        ("noise_sigma", "0"),
        ("color_cast_r", "0"),
        ("color_cast_g", "0"),
        ("color_cast_b", "0"),
        ("out_dir", "gen_out"),
    ],
    presets: &[],
};

pub fn run(cli: &CliArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&SPEC, cli.config_path.as_deref(), &cli.flags)?;

    let domain = DomainSpec {
        tag: cfg.required("domain_tag")?.to_string(),
        brightness_lo: cfg.f64_value("brightness_lo")?,
        brightness_hi: cfg.f64_value("brightness_hi")?,
        noise_sigma: cfg.f64_value("noise_sigma")?,
        color_cast: [
            cfg.f64_value("color_cast_r")?,
            cfg.f64_value("color_cast_g")?,
            cfg.f64_value("color_cast_b")?,
        ],
    };
    let synth = SynthConfig {
        seed: cfg.u64_value("seed")?,
        image_size: cfg.usize_value("image_size")?,
        live: cfg.usize_value("live")?,
        print_lattice: cfg.usize_value("print_lattice")?,
        replay_moire: cfg.usize_value("replay_moire")?,
        domain,
    };

    let samples = generate::<f32>(&synth)?;
    let out_dir = super::prepare_out_dir(&cfg)?;
    write_dataset(&out_dir, &samples)?;
    cfg.write_resolved(&out_dir)?;

    print_row(
        cli.json,
        &[
            ("written", serde_json::json!(samples.len())),
            ("out_dir", serde_json::json!(out_dir.display().to_string())),
        ],
    );
    Ok(())
}
