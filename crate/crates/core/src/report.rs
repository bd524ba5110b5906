//! Output files: atomic writes, frequency-stamped names, JSON and CSV.

use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename, so readers never see a partial file and a failed
/// write leaves any previous file intact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `{stem}_{hz}Hz_{mode}.{ext}` with the frequency written as an integer
/// number of hertz when it is one, and in full precision otherwise.
pub fn stamped(dir: &Path, stem: &str, hz: f64, mode: &str, ext: &str) -> PathBuf {
    let hz = crate::scene::tidy_hz(hz);
    let f = if hz.fract() == 0.0 && hz.abs() < 1e18 { format!("{}", hz as i64) } else { format!("{hz}") };
    dir.join(format!("{stem}_{f}Hz_{mode}.{ext}"))
}

/// Renders a header and rows of already formatted fields as CSV.
pub fn csv_string<H: AsRef<[u8]>>(header: &[H], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    // writing into memory cannot fail
    w.write_record(header).expect("in-memory CSV");
    for r in rows {
        w.write_record(&r).expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV fields are UTF-8")
}

/// Full-precision field for a float.
pub fn field(x: f64) -> String {
    format!("{x:.17e}")
}

/// Capacity curves as CSV: one row per SNR, one column per mode.
pub fn capacity_csv(snr_db: &[f64], columns: &[(String, Vec<f64>)]) -> String {
    let header: Vec<&str> = std::iter::once("snr_db").chain(columns.iter().map(|(n, _)| n.as_str())).collect();
    let rows = snr_db.iter().enumerate().map(|(i, s)| std::iter::once(format!("{s}")).chain(columns.iter().map(|(_, v)| field(v[i]))).collect());
    csv_string(&header, rows)
}

/// SNR grid in dB, `lo..=hi` in steps of `step`.
pub fn snr_grid_db(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn names_embed_frequency_and_mode() {
        let p = stamped(Path::new("out"), "H", 1.0e8, "full", "csv");
        assert_eq!(p, Path::new("out/H_100000000Hz_full.csv"));
        assert!(stamped(Path::new("."), "H", 1.5e-3, "decoupled", "csv").to_string_lossy().contains("0.0015Hz_decoupled"));
    }

    #[test]
    fn capacity_csv_layout() {
        let csv = capacity_csv(&[0.0, 10.0], &[("full".into(), vec![1.0, 2.0])]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "snr_db,full");
        assert!(lines[2].starts_with("10,2.0"));
    }

    #[test]
    fn snr_grid_is_inclusive() {
        assert_eq!(snr_grid_db(-10.0, 30.0, 5.0).len(), 9);
        assert!((db_to_linear(10.0) - 10.0).abs() < 1e-12);
    }
}
