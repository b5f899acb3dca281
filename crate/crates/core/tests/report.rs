use std::collections::BTreeMap;

use intervene_core::harness::{emit_report, CurveRow, ResultsBundle, Summary, BUNDLE_SCHEMA_VERSION};
use proptest::prelude::*;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rows() -> impl Strategy<Value = Vec<CurveRow>> {
    prop::collection::vec((0u64..5, 0usize..4, 0usize..3, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 0..60).prop_map(|v| {
        let mut seen = std::collections::BTreeSet::new();
        v.into_iter()
            .filter(|&(s, k, f, ..)| seen.insert((s, k, f)))
            .map(|(seed, k, f, auroc, aupr, brier)| CurveRow {
                label: "default".into(),
                family: ["black_box", "cbm_joint", "finetuned_intervenability"][f].into(),
                seed,
                k,
                auroc,
                aupr,
                brier,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn json_medians_match_csv_rows(curves in rows()) {
        let tmp = tempfile::tempdir().unwrap();
        let mut bundle = ResultsBundle::empty("pipeline", "h");
        bundle.curves = curves;
        let files = emit_report(&bundle, tmp.path()).unwrap();

        let mut groups: BTreeMap<(String, String, usize, String), Vec<f64>> = BTreeMap::new();
        let mut reader = csv::Reader::from_path(&files.curves).unwrap();
        let mut n = 0;
        let version = BUNDLE_SCHEMA_VERSION.to_string();
        for rec in reader.records() {
            let rec = rec.unwrap();
            prop_assert_eq!(&rec[0], version.as_str());
            let key = (rec[1].to_string(), rec[2].to_string(), rec[4].parse().unwrap(), rec[5].to_string());
            groups.entry(key).or_default().push(rec[6].parse().unwrap());
            n += 1;
        }
        prop_assert_eq!(n, 3 * bundle.curves.len());

        let summary: Summary = serde_json::from_slice(&std::fs::read(&files.summary).unwrap()).unwrap();
        prop_assert_eq!(summary.schema_version, BUNDLE_SCHEMA_VERSION);
        prop_assert_eq!(summary.curves.len() * 3, groups.len());
        for c in &summary.curves {
            for (metric, spread) in [("auroc", c.auroc), ("aupr", c.aupr), ("brier", c.brier)] {
                let v = groups[&(c.label.clone(), c.family.clone(), c.k, metric.to_string())].clone();
                prop_assert_eq!(v.len(), c.n_seeds);
                prop_assert!((median(v) - spread.median).abs() < 1e-12);
            }
        }
    }
}
