//! CSV files: detector scores, dataset manifests, training loss curves, and
//! search traces. Floating-point columns print through Rust's shortest
//! round-trip formatting, so writing and re-reading a file reproduces every
//! value bit-exactly. Free-text fields must not contain commas or line
//! breaks; writers reject them instead of quoting.

use std::path::Path;

use crate::metrics::{Label, ScoreEntry, ScoreSet};
use crate::nas::TraceRow;
use crate::train::EpochStats;
use crate::{Error, Result};

/// One dataset sample on disk: where its image and depth target live, plus
/// its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub sample_id: String,
    pub image_path: String,
    pub depth_path: String,
    pub label: Label,
    pub domain_tag: String,
}

fn check_field(what: &str, value: &str) -> Result<()> {
    if value.is_empty() {
        return Err(Error::Data(format!("{what} must not be empty")));
    }
    if value.contains(',') || value.contains('\n') || value.contains('\r') {
        return Err(Error::Data(format!(
            "{what} {value:?} contains a comma or line break, which CSV fields here must not"
        )));
    }
    Ok(())
}

fn bad_line(path: &str, line_no: usize, what: String) -> Error {
    Error::Format {
        path: path.to_string(),
        offset: None,
        what: format!("line {line_no}: {what}"),
    }
}

/// Splits CSV text into lines, checks the header, and hands each data line
/// to the row parser with its line number.
fn read_rows<T>(
    path: &Path,
    header: &str,
    mut parse: impl FnMut(usize, &str) -> Result<T>,
) -> Result<Vec<T>> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == header => {}
        Some((_, first)) => {
            return Err(bad_line(
                &name,
                1,
                format!("expected header {header:?}, got {first:?}"),
            ))
        }
        None => return Err(bad_line(&name, 1, "file is empty".to_string())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        rows.push(parse(i + 1, line)?);
    }
    Ok(rows)
}

fn split_fields<'a>(
    path: &str,
    line_no: usize,
    line: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(bad_line(
            path,
            line_no,
            format!("expected {expected} comma-separated fields, got {}", fields.len()),
        ));
    }
    Ok(fields)
}

fn parse_float(path: &str, line_no: usize, what: &str, text: &str) -> Result<f64> {
    text.parse::<f64>()
        .map_err(|_| bad_line(path, line_no, format!("{what} {text:?} is not a number")))
}

pub const SCORES_HEADER: &str = "sample_id,score,label";

pub fn write_scores(path: impl AsRef<Path>, set: &ScoreSet) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for entry in set.entries() {
        check_field("sample_id", &entry.sample_id)?;
        check_field("label", &entry.label.to_string())?;
        out.push_str(&format!("{},{},{}\n", entry.sample_id, entry.score, entry.label));
    }
    std::fs::write(path, out).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let entries = read_rows(path, SCORES_HEADER, |line_no, line| {
        let fields = split_fields(&name, line_no, line, 3)?;
        Ok(ScoreEntry {
            sample_id: fields[0].to_string(),
            score: parse_float(&name, line_no, "score", fields[1])?,
            label: Label::parse(fields[2]).map_err(|e| bad_line(&name, line_no, e.to_string()))?,
        })
    })?;
    ScoreSet::new(entries)
}

pub const MANIFEST_HEADER: &str = "sample_id,image_path,depth_path,label,domain_tag";

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for row in rows {
        check_field("sample_id", &row.sample_id)?;
        check_field("image_path", &row.image_path)?;
        check_field("depth_path", &row.depth_path)?;
        check_field("label", &row.label.to_string())?;
        check_field("domain_tag", &row.domain_tag)?;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.sample_id, row.image_path, row.depth_path, row.label, row.domain_tag
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    read_rows(path, MANIFEST_HEADER, |line_no, line| {
        let fields = split_fields(&name, line_no, line, 5)?;
        Ok(ManifestRow {
            sample_id: fields[0].to_string(),
            image_path: fields[1].to_string(),
            depth_path: fields[2].to_string(),
            label: Label::parse(fields[3]).map_err(|e| bad_line(&name, line_no, e.to_string()))?,
            domain_tag: fields[4].to_string(),
        })
    })
}

/// Writes per-epoch training statistics as `epoch,mean_loss,lr`.
pub fn write_loss_curve(path: impl AsRef<Path>, rows: &[EpochStats]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,mean_loss,lr\n");
    for row in rows {
        out.push_str(&format!("{},{},{}\n", row.epoch, row.mean_loss, row.lr));
    }
    std::fs::write(path, out).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

/// Writes a search trace as `epoch,train_loss,val_loss,entropy_cell1,...`.
/// Every row must report the same number of cells.
pub fn write_trace(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let path = path.as_ref();
    let cells = rows.first().map(|r| r.eta_entropy.len()).unwrap_or(0);
    let mut out = String::from("epoch,train_loss,val_loss");
    for c in 0..cells {
        out.push_str(&format!(",entropy_cell{}", c + 1));
    }
    out.push('\n');
    for row in rows {
        if row.eta_entropy.len() != cells {
            return Err(Error::Data(format!(
                "trace row for epoch {} reports {} cells, the first row reports {cells}",
                row.epoch,
                row.eta_entropy.len()
            )));
        }
        out.push_str(&format!("{},{},{}", row.epoch, row.train_loss, row.val_loss));
        for e in &row.eta_entropy {
            out.push_str(&format!(",{e}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("csvio_tests_{}", std::process::id()));
        std::fs::create_dir_all(&dir).expect("create temp dir");
        dir.join(name)
    }

    fn awkward_scores() -> ScoreSet {
        ScoreSet::new(vec![
            ScoreEntry {
                sample_id: "live_0000".into(),
                score: 0.1 + 0.2,
                label: Label::Live,
            },
            ScoreEntry {
                sample_id: "print_0000".into(),
                score: 1e-17,
                label: Label::Attack("print_lattice".into()),
            },
            ScoreEntry {
                sample_id: "replay_0000".into(),
                score: -0.0,
                label: Label::Attack("replay_moire".into()),
            },
        ])
        .unwrap()
    }

    #[test]
    fn scores_round_trip_bit_exactly() {
        let set = awkward_scores();
        let path = tmp("scores.csv");
        write_scores(&path, &set).unwrap();
        let back = read_scores(&path).unwrap();
        assert_eq!(back.len(), set.len());
        for (a, b) in set.entries().iter().zip(back.entries()) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.label, b.label);
            assert_eq!(
                a.score.to_bits(),
                b.score.to_bits(),
                "score {} must survive the text round trip exactly",
                a.score
            );
        }
        let second = tmp("scores2.csv");
        write_scores(&second, &back).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&second).unwrap(),
            "re-writing a read file reproduces it byte for byte"
        );
    }

    #[test]
    fn manifest_round_trips_and_keeps_order() {
        let rows = vec![
            ManifestRow {
                sample_id: "live_0000".into(),
                image_path: "images/live_0000.ppm".into(),
                depth_path: "depth/live_0000.pgm".into(),
                label: Label::Live,
                domain_tag: "base".into(),
            },
            ManifestRow {
                sample_id: "print_0000".into(),
                image_path: "images/print_0000.ppm".into(),
                depth_path: "depth/print_0000.pgm".into(),
                label: Label::Attack("print_lattice".into()),
                domain_tag: "shifted".into(),
            },
        ];
        let path = tmp("manifest.csv");
        write_manifest(&path, &rows).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn free_text_fields_reject_csv_metacharacters() {
        let rows = vec![ManifestRow {
            sample_id: "a,b".into(),
            image_path: "x.ppm".into(),
            depth_path: "x.pgm".into(),
            label: Label::Live,
            domain_tag: "base".into(),
        }];
        match write_manifest(tmp("bad.csv"), &rows) {
            Ok(_) => panic!("comma in sample_id should be rejected"),
            Err(Error::Data(msg)) => assert!(msg.contains("comma"), "got {msg:?}"),
            Err(e) => panic!("expected a data error, got {e}"),
        }
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let path = tmp("malformed.csv");
        std::fs::write(&path, "sample_id,score,label\nok,0.5,live\nbad,NOPE,live\n").unwrap();
        match read_scores(&path) {
            Ok(_) => panic!("bad score should fail"),
            Err(Error::Format { what, .. }) => {
                assert!(what.contains("line 3"), "got {what:?}");
                assert!(what.contains("NOPE"), "got {what:?}");
            }
            Err(e) => panic!("expected a format error, got {e}"),
        }
        std::fs::write(&path, "wrong,header\n").unwrap();
        match read_scores(&path) {
            Ok(_) => panic!("wrong header should fail"),
            Err(Error::Format { what, .. }) => assert!(what.contains("header"), "got {what:?}"),
            Err(e) => panic!("expected a format error, got {e}"),
        }
    }

    #[test]
    fn curve_files_have_stable_layouts() {
        let loss_path = tmp("loss.csv");
        write_loss_curve(
            &loss_path,
            &[
                EpochStats { epoch: 1, mean_loss: 0.5, lr: 0.0001 },
                EpochStats { epoch: 2, mean_loss: 0.25, lr: 0.0001 },
            ],
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&loss_path).unwrap(),
            "epoch,mean_loss,lr\n1,0.5,0.0001\n2,0.25,0.0001\n"
        );

        let trace_path = tmp("trace.csv");
        write_trace(
            &trace_path,
            &[
                TraceRow { epoch: 1, train_loss: 1.5, val_loss: 1.25, eta_entropy: vec![0.69, 0.6] },
                TraceRow { epoch: 2, train_loss: 1.0, val_loss: 0.75, eta_entropy: vec![0.5, 0.4] },
            ],
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&trace_path).unwrap(),
            "epoch,train_loss,val_loss,entropy_cell1,entropy_cell2\n1,1.5,1.25,0.69,0.6\n2,1,0.75,0.5,0.4\n"
        );

        let ragged = write_trace(
            tmp("ragged.csv"),
            &[
                TraceRow { epoch: 1, train_loss: 1.0, val_loss: 1.0, eta_entropy: vec![0.5] },
                TraceRow { epoch: 2, train_loss: 1.0, val_loss: 1.0, eta_entropy: vec![0.5, 0.5] },
            ],
        );
        assert!(ragged.is_err(), "ragged entropy columns are rejected");
    }
}
