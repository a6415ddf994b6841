use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LabelTaxonomy;
use crate::error::{Error, Result};

/// Everything known about one test sample after hierarchical prediction.
/// Indices are positions in the taxonomy's (sorted) lists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub true_section: usize,
    pub true_class: usize,
    pub pred_section: usize,
    /// Class from the L2 model of `pred_section`; an index into that section's list.
    pub routed_class: usize,
    /// Class from the L2 model of `true_section`.
    pub conditional_class: usize,
}

impl Outcome {
    pub fn end_to_end_correct(&self) -> bool {
        self.pred_section == self.true_section && self.routed_class == self.true_class
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalMetrics {
    pub n_test: usize,
    pub acc_l1: f64,
    /// Per section, over test samples whose true section it is.
    pub acc_l2: BTreeMap<String, f64>,
    /// `N_j / M` from test-set counts.
    pub weights: BTreeMap<String, f64>,
    pub acc_l2_avg: f64,
    /// `acc_l1 · acc_l2_avg`.
    pub acc_estimated: f64,
    /// Routed section and class both correct.
    pub acc_empirical: f64,
    /// `[true][predicted]` section counts.
    pub l1_confusion: Vec<Vec<usize>>,
    /// Per section, `[true][predicted]` class counts of its own L2 model.
    pub l2_confusion: BTreeMap<String, Vec<Vec<usize>>>,
}

/// Weighted per-section accuracy and its product with the L1 accuracy:
/// `avg = Σ_j (N_j / M) · acc_j`, `estimate = acc_l1 · avg`, with `M = Σ_j N_j`.
/// Entries of `acc_l2` without a count (or with a zero count) do not contribute.
pub fn weighted_accuracy(acc_l1: f64, acc_l2: &BTreeMap<String, f64>, counts: &BTreeMap<String, usize>) -> (f64, f64) {
    let m: usize = counts.values().sum();
    if m == 0 {
        return (0.0, 0.0);
    }
    let avg: f64 = counts
        .iter()
        .filter_map(|(s, &n)| acc_l2.get(s).map(|a| n as f64 / m as f64 * a))
        .sum();
    (avg, acc_l1 * avg)
}

/// Metrics from per-sample outcomes. Sections without test samples get no
/// L2 accuracy and no weight.
pub fn metrics_from_outcomes(taxonomy: &LabelTaxonomy, outcomes: &[Outcome]) -> Result<HierarchicalMetrics> {
    if outcomes.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let ns = taxonomy.n_sections();
    let mut l1_confusion = vec![vec![0usize; ns]; ns];
    let mut l2_confusion: BTreeMap<String, Vec<Vec<usize>>> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let (mut l1_ok, mut e2e_ok) = (0usize, 0usize);
    for o in outcomes {
        let sec = taxonomy.section_at(o.true_section);
        let nc = taxonomy.classes(sec).len();
        if o.pred_section >= ns || o.true_class >= nc || o.conditional_class >= nc {
            return Err(Error::InvalidConfig(format!("outcome {o:?} is outside the taxonomy")));
        }
        l1_confusion[o.true_section][o.pred_section] += 1;
        let key = sec.to_string();
        l2_confusion.entry(key.clone()).or_insert_with(|| vec![vec![0; nc]; nc])[o.true_class][o.conditional_class] += 1;
        *counts.entry(key).or_insert(0) += 1;
        l1_ok += (o.pred_section == o.true_section) as usize;
        e2e_ok += o.end_to_end_correct() as usize;
    }
    let n = outcomes.len() as f64;
    let acc_l2: BTreeMap<String, f64> = l2_confusion
        .iter()
        .map(|(s, m)| {
            let total: usize = m.iter().flatten().sum();
            let diag: usize = (0..m.len()).map(|i| m[i][i]).sum();
            (s.clone(), diag as f64 / total as f64)
        })
        .collect();
    let weights = counts.iter().map(|(s, &c)| (s.clone(), c as f64 / n)).collect();
    let acc_l1 = l1_ok as f64 / n;
    let (acc_l2_avg, acc_estimated) = weighted_accuracy(acc_l1, &acc_l2, &counts);
    Ok(HierarchicalMetrics {
        n_test: outcomes.len(),
        acc_l1,
        acc_l2,
        weights,
        acc_l2_avg,
        acc_estimated,
        acc_empirical: e2e_ok as f64 / n,
        l1_confusion,
        l2_confusion,
    })
}

impl HierarchicalMetrics {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub const CSV_HEADER: &'static str = "run,n_test,acc_l1,acc_l2_avg,acc_estimated,acc_empirical";

    pub fn csv_row(&self, run: &str) -> String {
        format!(
            "{run},{},{},{},{},{}",
            self.n_test, self.acc_l1, self.acc_l2_avg, self.acc_estimated, self.acc_empirical
        )
    }

    /// Writes the header and one summary row.
    pub fn save_csv(&self, path: &Path, run: &str) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "{}\n{}", Self::CSV_HEADER, self.csv_row(run)).map_err(|e| Error::io(path, e))
    }
}
