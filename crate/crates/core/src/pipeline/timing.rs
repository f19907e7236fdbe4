use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_json, PipelineError, Stage, TIMINGS};

/// Wall-clock seconds per stage of one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub config_hash: String,
    pub fraction: f64,
    pub workers: usize,
    pub seconds: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub run: PathBuf,
    pub fraction: f64,
    pub workers: usize,
    pub seconds: BTreeMap<String, f64>,
    pub total: f64,
    /// Total relative to the run with the largest sample fraction.
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

/// Collects `timings.json` from each run directory, sorted by decreasing
/// sample fraction.
pub fn report_timings(run_dirs: &[impl AsRef<Path>]) -> Result<TimingReport, PipelineError> {
    let mut rows = Vec::new();
    for dir in run_dirs {
        let t: StageTimings = read_json(&dir.as_ref().join(TIMINGS))?;
        rows.push(TimingRow {
            run: dir.as_ref().to_path_buf(),
            fraction: t.fraction,
            workers: t.workers,
            total: t.seconds.values().sum(),
            seconds: t.seconds,
            ratio: 1.0,
        });
    }
    rows.sort_by(|a, b| b.fraction.total_cmp(&a.fraction));
    if let Some(reference) = rows.first().map(|r| r.total) {
        for r in &mut rows {
            r.ratio = r.total / reference;
        }
    }
    Ok(TimingReport { rows })
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run\tfraction\tworkers")?;
        for s in Stage::ALL {
            write!(f, "\t{s}")?;
        }
        writeln!(f, "\ttotal\tratio")?;
        for r in &self.rows {
            write!(f, "{}\t{}\t{}", r.run.display(), r.fraction, r.workers)?;
            for s in Stage::ALL {
                match r.seconds.get(s.name()) {
                    Some(v) => write!(f, "\t{v:.3}")?,
                    None => write!(f, "\t-")?,
                }
            }
            writeln!(f, "\t{:.3}\t{:.3}", r.total, r.ratio)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_has_header_only() {
        let none: [&Path; 0] = [];
        let r = report_timings(&none).unwrap();
        let s = r.to_string();
        assert_eq!(s.lines().count(), 1);
        assert!(s.starts_with("run\tfraction"));
    }
}
