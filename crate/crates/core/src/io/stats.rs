//! Aggregation and export of the regulation weights observed on a dataset,
//! grouped e.g. per dataset or per object-size class.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::network::Diagnostics;

#[derive(Debug, Clone, Serialize)]
pub struct WeightStat {
    pub group: String,
    pub name: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Accumulates per-image weight values keyed by (group, weight name).
#[derive(Default)]
pub struct StatsCollector {
    values: BTreeMap<(String, String), Vec<f64>>,
}

impl StatsCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, group: &str, diag: &Diagnostics) {
        for rec in &diag.weights {
            self.values
                .entry((group.to_string(), rec.name.clone()))
                .or_default()
                .extend_from_slice(&rec.per_item);
        }
    }

    pub fn finish(self) -> Vec<WeightStat> {
        self.values
            .into_iter()
            .map(|((group, name), v)| {
                let n = v.len();
                let mean = v.iter().sum::<f64>() / n as f64;
                let std = if n > 1 {
                    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
                } else {
                    0.0
                };
                WeightStat {
                    group,
                    name,
                    count: n,
                    mean,
                    std,
                    min: v.iter().copied().fold(f64::INFINITY, f64::min),
                    max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect()
    }
}

/// Schema tag embedded in both export headers.
pub const STATS_SCHEMA: &str = "weight-stats/1";

pub fn write_csv(path: &Path, stats: &[WeightStat]) -> Result<()> {
    let mut out = format!("# {STATS_SCHEMA}\ngroup,name,count,mean,std,min,max\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.group, s.name, s.count, s.mean, s.std, s.min, s.max
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_json(path: &Path, stats: &[WeightStat]) -> Result<()> {
    let doc = serde_json::json!({ "schema": STATS_SCHEMA, "stats": stats });
    let text = serde_json::to_string_pretty(&doc).expect("stats always serialize");
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::WeightRecord;

    fn diag(name: &str, vals: &[f64]) -> Diagnostics {
        Diagnostics {
            weights: vec![WeightRecord {
                name: name.to_string(),
                per_item: vals.to_vec(),
            }],
        }
    }

    #[test]
    fn statistics_are_correct_and_grouped() {
        let mut c = StatsCollector::new();
        c.add("large", &diag("decoder.i1", &[1.0, 2.0]));
        c.add("large", &diag("decoder.i1", &[3.0]));
        c.add("small", &diag("decoder.i1", &[5.0]));
        let stats = c.finish();
        assert_eq!(stats.len(), 2);
        let l = stats.iter().find(|s| s.group == "large").unwrap();
        assert_eq!(l.count, 3);
        assert_eq!(l.mean, 2.0);
        assert_eq!(l.std, 1.0);
        assert_eq!((l.min, l.max), (1.0, 3.0));
        let s = stats.iter().find(|s| s.group == "small").unwrap();
        assert_eq!((s.count, s.mean, s.std), (1, 5.0, 0.0));
    }

    #[test]
    fn csv_and_json_exports() {
        let mut c = StatsCollector::new();
        c.add("all", &diag("decoder.d5", &[0.5, 1.5]));
        let stats = c.finish();
        let dir = std::env::temp_dir().join("stats_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let csv = dir.join("w.csv");
        let json = dir.join("w.json");
        write_csv(&csv, &stats).unwrap();
        write_json(&json, &stats).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("# weight-stats/1\ngroup,name,count,mean,std,min,max\n"));
        assert!(text.contains("all,decoder.d5,2,1,"));
        let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(parsed["schema"], "weight-stats/1");
        assert_eq!(parsed["stats"][0]["mean"], 1.0);
    }
}
