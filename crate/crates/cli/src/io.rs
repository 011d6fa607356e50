//! File formats: numeric CSV, binary PGM/PPM images, checkpoint files,
//! and metric serialization.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use diffcollage_core::eval::MetricReport;
use diffcollage_core::scoremodel::{load_checkpoint, save_checkpoint, MlpScoreModel};

/// Writes rows of `f64` as CSV with an optional header line. Values use the
/// shortest round-trip decimal form, so output is byte-stable.
pub fn write_csv(path: &Path, header: Option<&str>, rows: &[Vec<f64>]) -> anyhow::Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(h);
        out.push('\n');
    }
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Reads a numeric CSV, skipping a header line when the first field of the
/// first line is not parseable as a number. Errors carry the row number.
pub fn read_csv(path: &Path) -> anyhow::Result<Vec<Vec<f64>>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        let mut parse_failed = false;
        for field in line.split(',') {
            match field.trim().parse::<f64>() {
                Ok(v) => row.push(v),
                Err(_) => {
                    parse_failed = true;
                    break;
                }
            }
        }
        if parse_failed {
            if lineno == 0 {
                continue; // header
            }
            bail!(
                "{}: row {} has a non-numeric field",
                path.display(),
                lineno + 1
            );
        }
        rows.push(row);
    }
    if let Some(width) = rows.first().map(|r| r.len()) {
        if let Some(bad) = rows.iter().position(|r| r.len() != width) {
            bail!(
                "{}: row {} has {} fields, expected {width}",
                path.display(),
                bad + 1,
                rows[bad].len()
            );
        }
    }
    Ok(rows)
}

fn normalize_to_bytes(values: &[f64]) -> Vec<u8> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    values
        .iter()
        .map(|&v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Binary PGM (P5), values affinely mapped onto 0..255.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> anyhow::Result<()> {
    if values.len() != width * height {
        bail!("pgm needs {}x{} = {} values, got {}", width, height, width * height, values.len());
    }
    let mut file =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write!(file, "P5\n{width} {height}\n255\n")?;
    file.write_all(&normalize_to_bytes(values))?;
    Ok(())
}

/// Binary PPM (P6) from per-pixel RGB triples in 0..255.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> anyhow::Result<()> {
    if rgb.len() != 3 * width * height {
        bail!("ppm needs {} bytes, got {}", 3 * width * height, rgb.len());
    }
    let mut file =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write!(file, "P6\n{width} {height}\n255\n")?;
    file.write_all(rgb)?;
    Ok(())
}

pub fn save_checkpoint_file(path: &Path, model: &MlpScoreModel) -> anyhow::Result<()> {
    std::fs::write(path, save_checkpoint(model))
        .with_context(|| format!("writing checkpoint {}", path.display()))?;
    Ok(())
}

pub fn load_checkpoint_file(path: &Path) -> anyhow::Result<MlpScoreModel> {
    let blob =
        std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let model =
        load_checkpoint(&blob).with_context(|| format!("decoding checkpoint {}", path.display()))?;
    Ok(model)
}

/// Serializes metric reports as `name,value,details-json` rows.
pub fn write_metric_csv(path: &Path, reports: &[MetricReport]) -> anyhow::Result<()> {
    let mut out = String::from("name,value,details\n");
    for r in reports {
        let details = serde_json::to_string(&r.details)?;
        out.push_str(&format!("{},{},{}\n", r.name, r.value, escape_csv(&details)));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn escape_csv(field: &str) -> String {
    if field.contains(',') || field.contains('"') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Pretty-printed JSON to disk.
pub fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Metric reports as a JSON array (name, value, details).
pub fn reports_to_json(reports: &[MetricReport]) -> serde_json::Value {
    serde_json::Value::Array(
        reports
            .iter()
            .map(|r| {
                serde_json::json!({
                    "name": r.name,
                    "value": r.value,
                    "details": r.details,
                })
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![vec![1.5, -2.25], vec![0.1, 3.0]];
        write_csv(&path, Some("a,b"), &rows).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn csv_reports_bad_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1.0,2.0\n3.0,oops\n").unwrap();
        let err = read_csv(&path).unwrap_err();
        assert!(format!("{err}").contains("row 2"), "{err}");
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        std::fs::write(&path, "1.0,2.0\n3.0\n").unwrap();
        assert!(read_csv(&path).is_err());
    }

    #[test]
    fn pgm_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        write_pgm(&path, 2, 2, &[0.0, 1.0, 0.5, 1.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0u8, 255, 128, 255]);
    }
}
