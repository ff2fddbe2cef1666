//! Bridges between on-disk datasets (netpbm images plus a manifest) and the
//! in-memory `Dataset` the training code consumes. Manifest paths are
//! relative to the manifest file's directory, so a dataset directory can be
//! moved as a unit.

use std::path::Path;

use cdcn::io::netpbm::{load_pgm, load_ppm, save_pgm, save_ppm};
use cdcn::io::{read_manifest, write_manifest, ManifestRow};
use cdcn::train::{Dataset, Sample};
use cdcn::{Error, Result};

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset<f32>> {
    let rows = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::with_capacity(rows.len());
    for row in rows {
        samples.push(Sample {
            image: load_ppm(base.join(&row.image_path))?,
            depth: load_pgm(base.join(&row.depth_path))?,
            id: row.sample_id,
            label: row.label,
            domain: row.domain_tag,
        });
    }
    Dataset::new(samples)
}

/// Writes images under `images/`, depth targets under `depth/`, and a
/// `manifest.csv` that ties them together.
pub fn write_dataset(out_dir: &Path, samples: &[Sample<f32>]) -> Result<()> {
    let images_dir = out_dir.join("images");
    let depth_dir = out_dir.join("depth");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io_at(&images_dir, e))?;
    std::fs::create_dir_all(&depth_dir).map_err(|e| Error::io_at(&depth_dir, e))?;
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let image_path = format!("images/{}.ppm", s.id);
        let depth_path = format!("depth/{}.pgm", s.id);
        save_ppm(out_dir.join(&image_path), &s.image)?;
        save_pgm(out_dir.join(&depth_path), &s.depth)?;
        rows.push(ManifestRow {
            sample_id: s.id.clone(),
            image_path,
            depth_path,
            label: s.label.clone(),
            domain_tag: s.domain.clone(),
        });
    }
    write_manifest(out_dir.join("manifest.csv"), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cdcn::synth::{generate, SynthConfig};

    #[test]
    fn dataset_survives_the_disk_round_trip() {
        let dir = std::env::temp_dir().join(format!("data_tests_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = SynthConfig {
            seed: 3,
            image_size: 24,
            live: 2,
            print_lattice: 1,
            replay_moire: 1,
            domain: Default::default(),
        };
        let samples = generate::<f32>(&cfg).unwrap();
        write_dataset(&dir, &samples).unwrap();
        let loaded = load_dataset(&dir.join("manifest.csv")).unwrap();
        assert_eq!(loaded.len(), 4);
        assert_eq!(loaded.input_size(), 24);
        for (mem, disk) in samples.iter().zip(loaded.samples()) {
            assert_eq!(mem.id, disk.id);
            assert_eq!(mem.label, disk.label);
            assert_eq!(mem.domain, disk.domain);
            let diff = mem.image.max_abs_diff(&disk.image);
            assert!(diff <= 0.5 / 255.0 + 1e-6, "image quantization error {diff}");
        }
    }
}
