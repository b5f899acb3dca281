use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::{ResultsBundle, StageFailure, BUNDLE_SCHEMA_VERSION};
use crate::error::Result;
use crate::metrics::Spread;
use crate::store::write_atomic;

pub const TABLE_CSV: &str = "table.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const EDIT_STATS_CSV: &str = "edit_stats.csv";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub family: String,
    pub n_seeds: usize,
    pub concept_auroc: Option<Spread>,
    pub concept_aupr: Option<Spread>,
    pub concept_brier: Option<Spread>,
    pub target_auroc: Spread,
    pub target_aupr: Spread,
    pub target_brier: Spread,
    pub intervenability: Spread,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub label: String,
    pub family: String,
    pub k: usize,
    pub n_seeds: usize,
    pub auroc: Spread,
    pub aupr: Spread,
    pub brier: Spread,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditStatSummary {
    pub label: String,
    pub n_seeds: usize,
    pub median_concept_loss: Spread,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub config_hash: String,
    pub kind: String,
    pub partial: bool,
    pub seeds: Vec<u64>,
    pub failures: Vec<StageFailure>,
    pub table: Vec<TableSummary>,
    pub curves: Vec<CurveSummary>,
    pub edit_stats: Vec<EditStatSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub table: PathBuf,
    pub curves: PathBuf,
    pub edit_stats: PathBuf,
    pub summary: PathBuf,
}

fn spread(values: &[f64]) -> Spread {
    Spread::of(values).expect("grouped rows are non-empty")
}

/// Medians and IQRs across seeds, grouped in a stable order.
pub fn summarize(bundle: &ResultsBundle) -> Summary {
    let mut tables: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for r in &bundle.table {
        tables.entry(r.family.as_str()).or_default().push(r);
    }
    let table = tables
        .into_iter()
        .map(|(family, rows)| {
            let pick = |f: &dyn Fn(&super::pipeline::TableRow) -> f64| spread(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let concept = |f: fn(&super::pipeline::Scores) -> f64| {
                let v: Vec<f64> = rows.iter().filter_map(|r| r.concept.as_ref().map(f)).collect();
                (!v.is_empty()).then(|| spread(&v))
            };
            TableSummary {
                family: family.into(),
                n_seeds: rows.len(),
                concept_auroc: concept(|s| s.auroc),
                concept_aupr: concept(|s| s.aupr),
                concept_brier: concept(|s| s.brier),
                target_auroc: pick(&|r| r.target.auroc),
                target_aupr: pick(&|r| r.target.aupr),
                target_brier: pick(&|r| r.target.brier),
                intervenability: pick(&|r| r.intervenability),
            }
        })
        .collect();

    let mut curves: BTreeMap<(&str, &str, usize), Vec<_>> = BTreeMap::new();
    for r in &bundle.curves {
        curves.entry((r.label.as_str(), r.family.as_str(), r.k)).or_default().push(r);
    }
    let curves = curves
        .into_iter()
        .map(|((label, family, k), rows)| CurveSummary {
            label: label.into(),
            family: family.into(),
            k,
            n_seeds: rows.len(),
            auroc: spread(&rows.iter().map(|r| r.auroc).collect::<Vec<_>>()),
            aupr: spread(&rows.iter().map(|r| r.aupr).collect::<Vec<_>>()),
            brier: spread(&rows.iter().map(|r| r.brier).collect::<Vec<_>>()),
        })
        .collect();

    let mut stats: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in &bundle.edit_stats {
        stats.entry(s.label.as_str()).or_default().push(s.median_concept_loss);
    }
    let edit_stats = stats
        .into_iter()
        .map(|(label, v)| EditStatSummary {
            label: label.into(),
            n_seeds: v.len(),
            median_concept_loss: spread(&v),
        })
        .collect();

    Summary {
        schema_version: BUNDLE_SCHEMA_VERSION,
        config_hash: bundle.config_hash.clone(),
        kind: bundle.kind.clone(),
        partial: bundle.is_partial(),
        seeds: bundle.seeds.clone(),
        failures: bundle.failures.clone(),
        table,
        curves,
        edit_stats,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
}

/// Writes `table.csv`, `curves.csv` (one row per seed, k and metric),
/// `edit_stats.csv` and `summary.json` into `dir`.
pub fn emit_report(bundle: &ResultsBundle, dir: &Path) -> Result<ReportFiles> {
    let v = BUNDLE_SCHEMA_VERSION.to_string();
    let files = ReportFiles {
        table: dir.join(TABLE_CSV),
        curves: dir.join(CURVES_CSV),
        edit_stats: dir.join(EDIT_STATS_CSV),
        summary: dir.join(SUMMARY_JSON),
    };
    let table = csv_bytes(
        &[
            "schema_version",
            "seed",
            "family",
            "concept_auroc",
            "concept_aupr",
            "concept_brier",
            "target_auroc",
            "target_aupr",
            "target_brier",
            "intervenability",
        ],
        bundle.table.iter().map(|r| {
            vec![
                v.clone(),
                r.seed.to_string(),
                r.family.clone(),
                opt(r.concept.map(|c| c.auroc)),
                opt(r.concept.map(|c| c.aupr)),
                opt(r.concept.map(|c| c.brier)),
                r.target.auroc.to_string(),
                r.target.aupr.to_string(),
                r.target.brier.to_string(),
                r.intervenability.to_string(),
            ]
        }),
    )?;
    let curves = csv_bytes(
        &["schema_version", "label", "family", "seed", "k", "metric", "value"],
        bundle.curves.iter().flat_map(|r| {
            [("auroc", r.auroc), ("aupr", r.aupr), ("brier", r.brier)].map(|(m, x)| {
                vec![
                    v.clone(),
                    r.label.clone(),
                    r.family.clone(),
                    r.seed.to_string(),
                    r.k.to_string(),
                    m.to_string(),
                    x.to_string(),
                ]
            })
        }),
    )?;
    let stats = csv_bytes(
        &["schema_version", "label", "seed", "median_concept_loss"],
        bundle
            .edit_stats
            .iter()
            .map(|s| vec![v.clone(), s.label.clone(), s.seed.to_string(), s.median_concept_loss.to_string()]),
    )?;
    write_atomic(&files.table, &table)?;
    write_atomic(&files.curves, &curves)?;
    write_atomic(&files.edit_stats, &stats)?;
    write_atomic(&files.summary, &serde_json::to_vec_pretty(&summarize(bundle))?)?;
    Ok(files)
}

/// Writes the bundle itself, for later reporting.
pub fn save_bundle(bundle: &ResultsBundle, path: &Path) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(bundle)?)
}

pub fn load_bundle(path: &Path) -> Result<ResultsBundle> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::pipeline::{CurveRow, Scores, TableRow};

    fn row(seed: u64, k: usize, auroc: f64) -> CurveRow {
        CurveRow {
            label: "default".into(),
            family: "black_box".into(),
            seed,
            k,
            auroc,
            aupr: 0.5,
            brier: 0.25,
        }
    }

    #[test]
    fn empty_bundle_gives_header_only_csvs() {
        let tmp = tempfile::tempdir().unwrap();
        let files = emit_report(&ResultsBundle::empty("pipeline", "abc"), tmp.path()).unwrap();
        for p in [&files.table, &files.curves, &files.edit_stats] {
            let text = std::fs::read_to_string(p).unwrap();
            assert_eq!(text.lines().count(), 1, "{}", p.display());
            assert!(text.starts_with("schema_version,"));
        }
        let s: Summary = serde_json::from_slice(&std::fs::read(&files.summary).unwrap()).unwrap();
        assert_eq!(s.schema_version, BUNDLE_SCHEMA_VERSION);
        assert!(!s.partial && s.curves.is_empty());
    }

    #[test]
    fn summary_medians_match_rows() {
        let mut b = ResultsBundle::empty("pipeline", "abc");
        b.curves = vec![row(0, 0, 0.6), row(1, 0, 0.7), row(2, 0, 0.65), row(0, 2, 0.9)];
        b.table = (0..3)
            .map(|s| TableRow {
                seed: s,
                family: "cbm_joint".into(),
                concept: None,
                target: Scores {
                    auroc: 0.7 + s as f64 / 100.0,
                    aupr: 0.6,
                    brier: 0.2,
                },
                intervenability: 0.0,
            })
            .collect();
        let s = summarize(&b);
        assert_eq!(s.curves.len(), 2);
        assert_eq!(s.curves[0].k, 0);
        assert_eq!(s.curves[0].n_seeds, 3);
        assert_eq!(s.curves[0].auroc.median, 0.65);
        assert_eq!(s.table[0].target_auroc.median, 0.71);
        assert!(s.table[0].concept_auroc.is_none());
    }
}
