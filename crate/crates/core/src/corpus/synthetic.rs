//! Keyword-bearing synthetic corpora with well-formed level-2 IPC labels.
//!
//! Every class owns a small set of two-character keywords drawn from its own
//! block of CJK code points; documents mix those keywords with filler words
//! shared by all classes. With `vocab_overlap = 0` no keyword appears in two
//! classes, so a bag-of-words lookup labels every document correctly.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{parse_ipc, PatentRecord};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Keywords owned by each class.
pub const KEYWORDS_PER_CLASS: usize = 4;
const FILLER_WORDS: usize = 24;
const KEYWORD_RATE: f64 = 0.5;
const BASE: u32 = 0x4E00;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub sections: usize,
    pub classes_per_section: usize,
    pub docs_per_class: usize,
    /// Words per document, excluding the sentence break.
    pub doc_len: usize,
    /// Fraction of each class's keywords replaced by keywords shared across classes.
    pub vocab_overlap: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            sections: 8,
            classes_per_section: 3,
            docs_per_class: 60,
            doc_len: 8,
            vocab_overlap: 0.0,
        }
    }
}

fn word(start: u32) -> String {
    [start, start + 1]
        .iter()
        .map(|&c| char::from_u32(c).expect("CJK block"))
        .collect()
}

fn validate(spec: &SyntheticSpec) -> Result<()> {
    let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
    if spec.sections == 0 || spec.classes_per_section == 0 || spec.docs_per_class == 0 || spec.doc_len == 0 {
        return bad("synthetic corpus counts must all be at least 1");
    }
    if spec.sections > 8 {
        return bad("IPC has only 8 sections (A-H)");
    }
    if spec.classes_per_section > 99 {
        return bad("class numbers are two digits");
    }
    if !(0.0..=1.0).contains(&spec.vocab_overlap) {
        return bad("vocab_overlap must lie in [0, 1]");
    }
    Ok(())
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<PatentRecord>> {
    validate(spec)?;
    let mut rng = seeded(seed);
    let n_classes = spec.sections * spec.classes_per_section;
    let chars_per_class = 2 * KEYWORDS_PER_CLASS as u32;
    let shared_base = BASE + n_classes as u32 * chars_per_class;
    let filler_base = shared_base + chars_per_class;

    let shared: Vec<String> = (0..KEYWORDS_PER_CLASS as u32).map(|k| word(shared_base + 2 * k)).collect();
    let filler: Vec<String> = (0..FILLER_WORDS as u32).map(|k| word(filler_base + 2 * k)).collect();
    let n_shared = (spec.vocab_overlap * KEYWORDS_PER_CLASS as f64).round() as usize;

    let mut records = Vec::with_capacity(n_classes * spec.docs_per_class);
    for s in 0..spec.sections {
        let section = (b'A' + s as u8) as char;
        for c in 0..spec.classes_per_section {
            let g = (s * spec.classes_per_section + c) as u32;
            let own: Vec<String> = (0..(KEYWORDS_PER_CLASS - n_shared) as u32)
                .map(|k| word(BASE + g * chars_per_class + 2 * k))
                .collect();
            let mut keywords = own.clone();
            keywords.extend(shared.choose_multiple(&mut rng, n_shared).cloned());
            let ipc = parse_ipc(&format!("{section}{:02}", c + 1))?;

            for d in 0..spec.docs_per_class {
                let mut words: Vec<&str> = (0..spec.doc_len)
                    .map(|_| {
                        if rng.random::<f64>() < KEYWORD_RATE {
                            keywords.choose(&mut rng).expect("non-empty").as_str()
                        } else {
                            filler.choose(&mut rng).expect("non-empty").as_str()
                        }
                    })
                    .collect();
                if !own.is_empty() && !words.iter().any(|w| own.iter().any(|o| o == w)) {
                    let at = rng.random_range(0..words.len());
                    words[at] = own.choose(&mut rng).expect("non-empty");
                }
                if words.len() >= 4 {
                    words.insert(words.len() / 2, "。");
                }
                records.push(PatentRecord {
                    id: format!("syn-{section}{:02}-{d:04}", c + 1),
                    abstract_text: words.join(" "),
                    ipc: ipc.clone(),
                });
            }
        }
    }
    Ok(records)
}
