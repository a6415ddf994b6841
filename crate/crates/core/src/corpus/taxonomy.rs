use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PatentRecord;
use crate::error::{Error, Result};

/// Two-level label tree: sections and, per section, their classes.
///
/// Classes are stored as two-digit class numbers within their section, so
/// `B65` is section `B`, class `"65"`. All lists are sorted ascending and
/// the position in a list is the label index used by classifiers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTaxonomy {
    sections: Vec<char>,
    classes_by_section: BTreeMap<char, Vec<String>>,
    section_counts: BTreeMap<char, usize>,
    class_counts: BTreeMap<String, usize>,
    total: usize,
}

impl LabelTaxonomy {
    pub fn build(records: &[PatentRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut classes_by_section: BTreeMap<char, Vec<String>> = BTreeMap::new();
        let mut section_counts = BTreeMap::new();
        let mut class_counts = BTreeMap::new();
        for r in records {
            let sec = r.ipc.section();
            *section_counts.entry(sec).or_insert(0) += 1;
            *class_counts.entry(r.ipc.level2()).or_insert(0) += 1;
            let list = classes_by_section.entry(sec).or_default();
            let class = r.ipc.class_num().to_string();
            if let Err(pos) = list.binary_search(&class) {
                list.insert(pos, class);
            }
        }
        Ok(LabelTaxonomy {
            sections: classes_by_section.keys().copied().collect(),
            classes_by_section,
            section_counts,
            class_counts,
            total: records.len(),
        })
    }

    pub fn sections(&self) -> &[char] {
        &self.sections
    }

    pub fn n_sections(&self) -> usize {
        self.sections.len()
    }

    pub fn n_classes(&self) -> usize {
        self.classes_by_section.values().map(Vec::len).sum()
    }

    /// Class numbers of `section`, sorted.
    pub fn classes(&self, section: char) -> &[String] {
        self.classes_by_section.get(&section).map_or(&[], Vec::as_slice)
    }

    pub fn section_index(&self, section: char) -> Option<usize> {
        self.sections.binary_search(&section).ok()
    }

    pub fn class_index(&self, section: char, class_num: &str) -> Option<usize> {
        self.classes(section).binary_search_by(|c| c.as_str().cmp(class_num)).ok()
    }

    pub fn section_at(&self, index: usize) -> char {
        self.sections[index]
    }

    pub fn class_at(&self, section: char, index: usize) -> &str {
        &self.classes(section)[index]
    }

    /// Number of records in `section` (N_j).
    pub fn section_count(&self, section: char) -> usize {
        self.section_counts.get(&section).copied().unwrap_or(0)
    }

    /// Number of records with level-2 label such as `"B65"`.
    pub fn class_count(&self, level2: &str) -> usize {
        self.class_counts.get(level2).copied().unwrap_or(0)
    }

    /// Total record count (M).
    pub fn total(&self) -> usize {
        self.total
    }

    /// `(section index, class index)` of a record's label.
    pub fn label_of(&self, record: &PatentRecord) -> Result<(usize, usize)> {
        let sec = record.ipc.section();
        let si = self
            .section_index(sec)
            .ok_or_else(|| Error::UnknownLabel(record.ipc.level2()))?;
        let ci = self
            .class_index(sec, record.ipc.class_num())
            .ok_or_else(|| Error::UnknownLabel(record.ipc.level2()))?;
        Ok((si, ci))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, parse_ipc, SyntheticSpec};
    use proptest::prelude::*;

    fn rec(code: &str) -> PatentRecord {
        PatentRecord {
            id: code.to_string(),
            abstract_text: "x".to_string(),
            ipc: parse_ipc(code).unwrap(),
        }
    }

    #[test]
    fn single_record() {
        let tax = LabelTaxonomy::build(&[rec("A01D42/04")]).unwrap();
        assert_eq!(tax.sections(), &['A']);
        assert_eq!(tax.n_classes(), 1);
        assert_eq!(tax.total(), 1);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(LabelTaxonomy::build(&[]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn sorted_and_indexed() {
        let recs = ["H04", "B65", "B01", "B65G", "A23"].map(rec);
        let tax = LabelTaxonomy::build(&recs).unwrap();
        assert_eq!(tax.sections(), &['A', 'B', 'H']);
        assert_eq!(tax.classes('B'), &["01", "65"]);
        assert_eq!(tax.class_index('B', "65"), Some(1));
        assert_eq!(tax.section_count('B'), 3);
        assert_eq!(tax.class_count("B65"), 2);
        assert_eq!(tax.label_of(&recs[0]).unwrap(), (2, 0));
    }

    #[test]
    fn synthetic_census() {
        let spec = SyntheticSpec {
            sections: 8,
            classes_per_section: 3,
            docs_per_class: 2,
            doc_len: 6,
            vocab_overlap: 0.0,
        };
        let tax = LabelTaxonomy::build(&generate_synthetic(&spec, 1).unwrap()).unwrap();
        assert_eq!(tax.n_sections(), 8);
        assert_eq!(tax.n_classes(), 24);
    }

    proptest! {
        #[test]
        fn counts_are_consistent(codes in proptest::collection::vec(("[A-H]", 0u8..12), 1..80)) {
            let recs: Vec<_> = codes.iter().map(|(s, c)| rec(&format!("{s}{c:02}"))).collect();
            let tax = LabelTaxonomy::build(&recs).unwrap();
            let section_sum: usize = tax.sections().iter().map(|&s| tax.section_count(s)).sum();
            prop_assert_eq!(section_sum, tax.total());
            for r in &recs {
                let (si, ci) = tax.label_of(r).unwrap();
                prop_assert_eq!(tax.section_at(si), r.ipc.section());
                prop_assert_eq!(tax.class_at(r.ipc.section(), ci), r.ipc.class_num());
            }
            for (i, &s) in tax.sections().iter().enumerate() {
                prop_assert_eq!(tax.section_index(s), Some(i));
                for (j, c) in tax.classes(s).iter().enumerate() {
                    prop_assert_eq!(tax.class_index(s, c), Some(j));
                }
            }
        }
    }
}
