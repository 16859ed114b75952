use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::experiment::{read_summary, Summary};

/// Config keys that must agree for two runs to be comparable.
fn dataset_key(s: &Summary) -> Vec<(&str, &str)> {
    s.config
        .iter()
        .filter(|(k, _)| {
            k.as_str() == "dataset" || k.starts_with("data.") || k.as_str() == "num_clients"
        })
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect()
}

fn delta(base: f64, x: f64) -> String {
    if base == 0.0 {
        if x == 0.0 {
            "+0.0%".into()
        } else {
            "n/a".into()
        }
    } else {
        format!("{:+.1}%", 100.0 * (x - base) / base)
    }
}

/// Side-by-side table of completed runs with deltas against the first one.
pub fn compare(dirs: &[PathBuf]) -> Result<String> {
    if dirs.len() < 2 {
        return Err(CliError::Compare(
            "need at least two run directories".into(),
        ));
    }
    let runs: Vec<Summary> = dirs
        .iter()
        .map(|d| read_summary(d))
        .collect::<Result<_>>()?;
    let base_key = dataset_key(&runs[0]);
    for (dir, run) in dirs.iter().zip(&runs).skip(1) {
        if dataset_key(run) != base_key {
            return Err(CliError::Compare(format!(
                "{} used a different dataset than {}",
                dir.display(),
                dirs[0].display()
            )));
        }
    }
    Ok(render(dirs, &runs))
}

fn label(dir: &Path, s: &Summary) -> String {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    format!("{name} ({})", s.method)
}

fn render(dirs: &[PathBuf], runs: &[Summary]) -> String {
    type Getter = fn(&Summary) -> f64;
    let rows: [(&str, Getter, bool); 6] = [
        ("final f1 mean", |s| s.final_f1.mean, false),
        ("final f1 std", |s| s.final_f1.std, false),
        ("bytes sent", |s| s.bytes.sent as f64, true),
        ("energy kWh", |s| s.energy_kwh.total, false),
        ("e_comm kWh", |s| s.energy_kwh.comm, false),
        ("work units", |s| s.work_units as f64, true),
    ];
    let mut table: Vec<Vec<String>> = vec![];
    let mut header = vec!["metric".to_string()];
    header.extend(dirs.iter().zip(runs).map(|(d, s)| label(d, s)));
    table.push(header);
    for (name, get, integer) in rows {
        let base = get(&runs[0]);
        let mut row = vec![name.to_string()];
        for (i, run) in runs.iter().enumerate() {
            let x = get(run);
            let v = if integer {
                format!("{}", x as u64)
            } else {
                format!("{x:.4e}")
            };
            let v = if name.starts_with("final f1") {
                format!("{x:.4}")
            } else {
                v
            };
            row.push(if i == 0 {
                v
            } else {
                format!("{v} ({})", delta(base, x))
            });
        }
        table.push(row);
    }
    let cols = table[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                if c == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
