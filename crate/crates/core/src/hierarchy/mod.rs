//! Two-level stacked classification: sections first, then classes within
//! the chosen section.

mod metrics;
pub mod reference;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{metrics_from_outcomes, weighted_accuracy, HierarchicalMetrics, Outcome};

use crate::classifier::{AnyClassifier, ClassifierFactory, ConstantClassifier, TextClassifier};
use crate::corpus::{LabelTaxonomy, PatentRecord};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::train::EpochMetrics;

#[derive(Clone, Debug)]
pub struct HierarchicalModel {
    pub taxonomy: LabelTaxonomy,
    pub l1: AnyClassifier,
    /// Keyed by section letter.
    pub l2: BTreeMap<char, AnyClassifier>,
}

/// Training curves of every level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HierarchyTraining {
    pub l1: Vec<EpochMetrics>,
    pub l2: BTreeMap<String, Vec<EpochMetrics>>,
}

/// The data-transform step: records grouped by their true section, in
/// input order within each group.
pub fn route_by_section<'a>(records: &'a [PatentRecord]) -> BTreeMap<char, Vec<&'a PatentRecord>> {
    let mut out: BTreeMap<char, Vec<&PatentRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.ipc.section()).or_default().push(r);
    }
    out
}

fn train_level<F: ClassifierFactory>(
    factory: &F,
    data: &[(&str, usize)],
    n_classes: usize,
    seed: u64,
) -> Result<(AnyClassifier, Vec<EpochMetrics>)> {
    if n_classes == 1 {
        return Ok((AnyClassifier::Constant(ConstantClassifier { n_classes: 1, class: 0 }), Vec::new()));
    }
    let t = factory.train(data, None, n_classes, seed)?;
    Ok((t.model, t.metrics))
}

/// L1 over sections on every record, then one L2 model per section
/// trained only on that section's records (in parallel). One-class levels
/// become constant predictors. Seeds: L1 `[0]`, section `i` `[1 + i]`.
pub fn train_hierarchical<F: ClassifierFactory>(
    train: &[PatentRecord],
    taxonomy: &LabelTaxonomy,
    factory: &F,
    seed: u64,
) -> Result<(HierarchicalModel, HierarchyTraining)> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let labels: Vec<(usize, usize)> = train.iter().map(|r| taxonomy.label_of(r)).collect::<Result<_>>()?;
    let groups = route_by_section(train);
    if let Some(&s) = taxonomy.sections().iter().find(|s| !groups.contains_key(s)) {
        return Err(Error::MissingSectionData(s));
    }

    let l1_data: Vec<(&str, usize)> = train.iter().zip(&labels).map(|(r, l)| (r.abstract_text.as_str(), l.0)).collect();
    let l1_job = || train_level(factory, &l1_data, taxonomy.n_sections(), derive_seed(seed, &[0]));
    let l2_job = || {
        taxonomy
            .sections()
            .par_iter()
            .enumerate()
            .map(|(i, &s)| {
                let data: Vec<(&str, usize)> = groups[&s]
                    .iter()
                    .map(|r| {
                        let c = taxonomy.class_index(s, r.ipc.class_num()).expect("label checked");
                        (r.abstract_text.as_str(), c)
                    })
                    .collect();
                let trained = train_level(factory, &data, taxonomy.classes(s).len(), derive_seed(seed, &[1 + i as u64]))?;
                Ok((s, trained))
            })
            .collect::<Result<Vec<_>>>()
    };
    let (l1, l2) = rayon::join(l1_job, l2_job);
    let (l1, l1_metrics) = l1?;
    let mut model = HierarchicalModel {
        taxonomy: taxonomy.clone(),
        l1,
        l2: BTreeMap::new(),
    };
    let mut log = HierarchyTraining {
        l1: l1_metrics,
        l2: BTreeMap::new(),
    };
    for (s, (clf, m)) in l2? {
        model.l2.insert(s, clf);
        log.l2.insert(s.to_string(), m);
    }
    Ok((model, log))
}

/// Predicted section and class indices: the class comes from the L2 model
/// of the predicted section.
pub fn predict_indices(model: &HierarchicalModel, text: &str) -> Result<(usize, usize)> {
    let si = model.l1.predict_label(text)?;
    let sec = model.taxonomy.section_at(si);
    let ci = model.l2[&sec].predict_label(text)?;
    Ok((si, ci))
}

/// Predicted `(section, class number)`.
pub fn predict_hierarchical(model: &HierarchicalModel, text: &str) -> Result<(char, String)> {
    let (si, ci) = predict_indices(model, text)?;
    let sec = model.taxonomy.section_at(si);
    Ok((sec, model.taxonomy.class_at(sec, ci).to_string()))
}

/// Runs both routings on every test record and summarizes them.
pub fn evaluate(model: &HierarchicalModel, test: &[PatentRecord]) -> Result<HierarchicalMetrics> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let tax = &model.taxonomy;
    let outcomes: Vec<Outcome> = test
        .par_iter()
        .map(|r| {
            let (ts, tc) = tax.label_of(r)?;
            let (ps, rc) = predict_indices(model, &r.abstract_text)?;
            let cc = if ps == ts {
                rc
            } else {
                model.l2[&tax.section_at(ts)].predict_label(&r.abstract_text)?
            };
            Ok(Outcome {
                true_section: ts,
                true_class: tc,
                pred_section: ps,
                routed_class: rc,
                conditional_class: cc,
            })
        })
        .collect::<Result<_>>()?;
    metrics_from_outcomes(tax, &outcomes)
}

impl HierarchicalModel {
    /// `taxonomy.json`, `l1/` and `l2/<section>/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("taxonomy.json");
        fs::write(&path, serde_json::to_string_pretty(&self.taxonomy)?).map_err(|e| Error::io(&path, e))?;
        self.l1.save(&dir.join("l1"))?;
        for (s, c) in &self.l2 {
            c.save(&dir.join("l2").join(s.to_string()))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("taxonomy.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let taxonomy: LabelTaxonomy = serde_json::from_str(&text)?;
        let l1 = AnyClassifier::load(&dir.join("l1"))?;
        let l2 = taxonomy
            .sections()
            .iter()
            .map(|&s| Ok((s, AnyClassifier::load(&dir.join("l2").join(s.to_string()))?)))
            .collect::<Result<_>>()?;
        Ok(HierarchicalModel { taxonomy, l1, l2 })
    }
}
