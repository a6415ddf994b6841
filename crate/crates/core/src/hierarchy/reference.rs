//! Published dataset census and result rows (percentages as printed).

use std::collections::BTreeMap;

use serde::Serialize;

use super::metrics::weighted_accuracy;

/// Section, number of classes, number of records.
pub const TABLE1: [(char, usize, usize); 8] = [
    ('A', 16, 327_537),
    ('B', 38, 664_602),
    ('C', 21, 201_984),
    ('D', 9, 37_673),
    ('E', 8, 155_250),
    ('F', 18, 252_325),
    ('G', 14, 378_874),
    ('H', 6, 299_456),
];

pub const TABLE1_TOTAL_CLASSES: usize = 130;
pub const TABLE1_TOTAL_RECORDS: usize = 2_317_701;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Table2Row {
    pub model: &'static str,
    pub acc_l1: f64,
    /// Sections A–H.
    pub acc_l2: [f64; 8],
    pub acc_l2_avg: f64,
    /// Printed overall accuracy (the column headed "Acc(L2_max)").
    pub acc_overall: f64,
}

pub const TABLE2: [Table2Row; 3] = [
    Table2Row {
        model: "RNN",
        acc_l1: 80.9,
        acc_l2: [91.8, 79.5, 89.2, 84.7, 88.1, 88.6, 90.2, 92.4],
        acc_l2_avg: 86.3,
        acc_overall: 69.8,
    },
    Table2Row {
        model: "CNN",
        acc_l1: 81.7,
        acc_l2: [92.4, 78.0, 87.5, 85.3, 87.3, 88.7, 85.9, 91.3],
        acc_l2_avg: 85.8,
        acc_overall: 70.1,
    },
    Table2Row {
        model: "BERT-CNN",
        acc_l1: 90.5,
        acc_l2: [96.5, 89.6, 94.1, 92.7, 95.2, 93.8, 92.3, 95.7],
        acc_l2_avg: 93.1,
        acc_overall: 84.3,
    },
];

pub fn bert_cnn_row() -> &'static Table2Row {
    &TABLE2[2]
}

/// Recomputed weighted figures for one published row, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Table2Check {
    pub model: &'static str,
    pub acc_l2_avg: f64,
    pub acc_estimated: f64,
    /// `acc_l1 ×` the weighted average after rounding it to one decimal.
    pub acc_estimated_from_rounded_avg: f64,
    pub printed_avg: f64,
    pub printed_overall: f64,
}

pub fn table1_counts() -> BTreeMap<String, usize> {
    TABLE1.iter().map(|&(s, _, n)| (s.to_string(), n)).collect()
}

pub fn table2_check(row: &Table2Row) -> Table2Check {
    let acc: BTreeMap<String, f64> = TABLE1
        .iter()
        .zip(row.acc_l2)
        .map(|(&(s, _, _), a)| (s.to_string(), a / 100.0))
        .collect();
    let (avg, est) = weighted_accuracy(row.acc_l1 / 100.0, &acc, &table1_counts());
    let rounded = (avg * 1000.0).round() / 10.0;
    Table2Check {
        model: row.model,
        acc_l2_avg: avg * 100.0,
        acc_estimated: est * 100.0,
        acc_estimated_from_rounded_avg: row.acc_l1 * rounded / 100.0,
        printed_avg: row.acc_l2_avg,
        printed_overall: row.acc_overall,
    }
}
