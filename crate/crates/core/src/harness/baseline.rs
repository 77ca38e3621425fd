//! Keyword-retrieval baselines for comparing provenance sizes.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{Record, RecordSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMode {
    AllRecs,
    WrdAnd,
    WrdOr,
}

impl FromStr for BaselineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "all-recs" | "allrecs" => Ok(BaselineMode::AllRecs),
            "wrd-and" | "wrdand" => Ok(BaselineMode::WrdAnd),
            "wrd-or" | "wrdor" => Ok(BaselineMode::WrdOr),
            _ => Err(format!("unknown baseline `{s}`")),
        }
    }
}

/// Lowercase, split on anything that is not alphanumeric, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Documents a keyword query built from `r`'s value would fetch.
pub fn baseline_retrieval(corpus: &RecordSet, r: &Record, mode: BaselineMode) -> RecordSet {
    let terms: BTreeSet<String> = tokenize(&r.value.flat_text()).into_iter().collect();
    corpus
        .iter_arc()
        .filter(|doc| {
            let doc_terms: BTreeSet<String> =
                tokenize(&doc.value.flat_text()).into_iter().collect();
            match mode {
                BaselineMode::AllRecs => true,
                BaselineMode::WrdAnd => terms.is_subset(&doc_terms),
                BaselineMode::WrdOr => !terms.is_disjoint(&doc_terms),
            }
        })
        .cloned()
        .collect()
}
