//! Seeded synthetic corpora and pipelines shaped like a listings extractor:
//! pages split into segments, fields extracted, joined and scored.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::SyntheticOpSpec;
use crate::engine::IdSet;
use crate::model::{Record, RecordId, RecordSet, Shape, Value};
use crate::store::config::{EdgeConfig, NodeConfig, PipelineConfig};

const FIRST: &[&str] = &[
    "Ada", "Bram", "Cleo", "Dev", "Edna", "Faye", "Gus", "Hana", "Ivo", "Jun", "Kira", "Lev",
    "Mina", "Nico", "Oona", "Pia", "Quin", "Rafe", "Sade", "Tove",
];
const LAST: &[&str] = &[
    "Abbott", "Byrne", "Castro", "Dunn", "Ekberg", "Frost", "Gallo", "Hale", "Ikeda", "Jonas",
    "Kemp", "Lund", "Mora", "Nash", "Okafor", "Price",
];
const STREET_HEAD: &[&str] = &[
    "Cedar", "Maple", "Aspen", "Birch", "Willow", "Alder", "Hazel", "Juniper", "Linden", "Rowan",
    "Spruce", "Laurel", "Elm", "Hawthorn", "Poplar", "Sumac",
];
const STREET_TAIL: &[&str] = &[
    "brook", "field", "gate", "hurst", "more", "ridge", "shire", "vale", "wood", "crest", "dale",
    "haven",
];
const CITY: &[&str] = &[
    "Austin", "Boston", "Denver", "Portland", "Madison", "Raleigh",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// wb → sg → ad: page, segments, address text.
    AddressChain,
    /// wb → sg → {ad, pn, nm} → jn → dp → sc.
    Business,
}

/// Errors planted into page `doc` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum PlantedError {
    /// The first two segments lose their separator and read as one.
    MergedSegments { doc: usize },
    /// The last segment is missing from the page.
    DroppedSegment { doc: usize },
    /// Address and phone trade places in the first segment.
    FieldSwap { doc: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticRunSpec {
    pub template: Template,
    pub n_docs: usize,
    pub segments_per_doc: usize,
    pub seed: u64,
    #[serde(default)]
    pub planted: Vec<PlantedError>,
}

impl SyntheticRunSpec {
    pub fn new(template: Template, n_docs: usize, seed: u64) -> Self {
        SyntheticRunSpec {
            template,
            n_docs,
            segments_per_doc: 2,
            seed,
            planted: Vec::new(),
        }
    }

    pub fn with_error(mut self, e: PlantedError) -> Self {
        self.planted.push(e);
        self
    }
}

/// Expected address record with the page it comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub id: RecordId,
    pub value: Value,
    pub sources: IdSet,
    pub valid: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticRun {
    pub config: PipelineConfig,
    pub inputs: RecordSet,
    /// One entry per address the `ad` node should emit.
    pub truth: Vec<PlantedTruth>,
}

struct Segment {
    name: String,
    addr: String,
    phone: String,
}

impl Segment {
    fn render(&self) -> String {
        format!(
            "name={}; addr={}; phone={}",
            self.name, self.addr, self.phone
        )
    }
}

/// `^\d+ [A-Za-z ]+, [A-Za-z]+$` without a regex engine.
pub fn valid_address(s: &str) -> bool {
    let Some((num, rest)) = s.split_once(' ') else {
        return false;
    };
    let Some((street, city)) = rest.rsplit_once(", ") else {
        return false;
    };
    !num.is_empty()
        && num.bytes().all(|b| b.is_ascii_digit())
        && !street.is_empty()
        && street.bytes().all(|b| b.is_ascii_alphabetic() || b == b' ')
        && !city.is_empty()
        && city.bytes().all(|b| b.is_ascii_alphabetic())
}

pub fn template_config(template: Template) -> PipelineConfig {
    let node = |id: &str, spec: SyntheticOpSpec| NodeConfig::synthetic(id, &spec);
    let edge = |from: &str, to: &str, port: u16| EdgeConfig {
        from: from.into(),
        to: to.into(),
        port,
    };
    let splitter = SyntheticOpSpec::Splitter {
        delimiter: "|".into(),
    };
    match template {
        Template::AddressChain => PipelineConfig {
            nodes: vec![
                node("wb", SyntheticOpSpec::Identity).with_declared_shape(Shape::OneToOne),
                node("sg", splitter).with_declared_shape(Shape::OneToMany),
                node(
                    "ad",
                    SyntheticOpSpec::KeyedExtractor {
                        field: "addr".into(),
                        key_field: None,
                    },
                )
                .with_declared_shape(Shape::OneToOne),
            ],
            edges: vec![edge("wb", "sg", 0), edge("sg", "ad", 0)],
        },
        Template::Business => {
            let extract = |field: &str| SyntheticOpSpec::KeyedExtractor {
                field: field.into(),
                key_field: Some("name".into()),
            };
            PipelineConfig {
                nodes: vec![
                    node("wb", SyntheticOpSpec::Identity).with_declared_shape(Shape::OneToOne),
                    node("sg", splitter).with_declared_shape(Shape::OneToMany),
                    node("ad", extract("addr")).with_declared_shape(Shape::OneToOne),
                    node("pn", extract("phone")).with_declared_shape(Shape::OneToOne),
                    node("nm", extract("name")).with_declared_shape(Shape::OneToOne),
                    node(
                        "jn",
                        SyntheticOpSpec::TaggedJoin {
                            key: "name".into(),
                            arity: 3,
                        },
                    ),
                    node(
                        "dp",
                        SyntheticOpSpec::Dedup {
                            key: None,
                            min_copies: 1,
                        },
                    ),
                    node("sc", SyntheticOpSpec::Scorer).with_declared_shape(Shape::OneToOne),
                ],
                edges: vec![
                    edge("wb", "sg", 0),
                    edge("sg", "ad", 0),
                    edge("sg", "pn", 0),
                    edge("sg", "nm", 0),
                    edge("ad", "jn", 0),
                    edge("pn", "jn", 1),
                    edge("nm", "jn", 2),
                    edge("jn", "dp", 0),
                    edge("dp", "sc", 0),
                ],
            }
        }
    }
}

/// Deterministic per seed. Street names are unique per segment, so every
/// address is traceable to exactly one page by its words.
pub fn generate_synthetic_run(spec: &SyntheticRunSpec) -> SyntheticRun {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_docs = spec.n_docs.max(1);
    let per_doc = spec.segments_per_doc.max(1);
    let total = n_docs * per_doc;

    let mut streets: Vec<String> = STREET_HEAD
        .iter()
        .flat_map(|h| STREET_TAIL.iter().map(move |t| format!("{h}{t}")))
        .collect();
    streets.shuffle(&mut rng);
    let mut names: Vec<String> = FIRST
        .iter()
        .flat_map(|f| LAST.iter().map(move |l| format!("{f} {l}")))
        .collect();
    names.shuffle(&mut rng);
    assert!(
        total <= streets.len(),
        "at most {} segments supported",
        streets.len()
    );

    let mut pages: Vec<Vec<Segment>> = Vec::new();
    for d in 0..n_docs {
        let mut segs = Vec::new();
        for s in 0..per_doc {
            let k = d * per_doc + s;
            let number = rng.random_range(1..1000);
            let city = CITY[rng.random_range(0..CITY.len())];
            segs.push(Segment {
                name: names[k % names.len()].clone(),
                addr: format!("{number} {} St, {city}", streets[k]),
                phone: format!("555-{:04}", rng.random_range(0..10000)),
            });
        }
        pages.push(segs);
    }

    let mut inputs = RecordSet::new();
    let mut truth = Vec::new();
    for (d, segs) in pages.iter_mut().enumerate() {
        let doc = d + 1;
        let doc_id = RecordId::new(0, format!("d{doc}"));
        let mut merged = false;
        for e in &spec.planted {
            match *e {
                PlantedError::DroppedSegment { doc: x } if x == doc && segs.len() > 1 => {
                    segs.pop();
                }
                PlantedError::FieldSwap { doc: x } if x == doc => {
                    let s = &mut segs[0];
                    std::mem::swap(&mut s.addr, &mut s.phone);
                }
                PlantedError::MergedSegments { doc: x } if x == doc && segs.len() > 1 => {
                    merged = true;
                }
                _ => {}
            }
        }
        let rendered: Vec<String> = segs.iter().map(Segment::render).collect();
        let pieces: Vec<String> = if merged {
            let mut v = vec![format!("{}; {}", rendered[0], rendered[1])];
            v.extend(rendered[2..].iter().cloned());
            v
        } else {
            rendered
        };
        let addrs: Vec<String> = if merged {
            let mut v = vec![format!("{} / {}", segs[0].addr, segs[1].addr)];
            v.extend(segs[2..].iter().map(|s| s.addr.clone()));
            v
        } else {
            segs.iter().map(|s| s.addr.clone()).collect()
        };
        for (k, addr) in addrs.into_iter().enumerate() {
            truth.push(PlantedTruth {
                id: RecordId::new(0, format!("d{doc}/s{k}")),
                valid: valid_address(&addr),
                value: Value::Text(addr),
                sources: [doc_id.clone()].into_iter().collect(),
            });
        }
        inputs.insert(Record::new(doc_id, Value::Text(pieces.join(" | "))));
    }

    SyntheticRun {
        config: template_config(spec.template),
        inputs,
        truth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_predicate() {
        assert!(valid_address("12 Cedarbrook St, Austin"));
        assert!(!valid_address(
            "12 Cedarbrook St, Austin / 3 Elmvale St, Boston"
        ));
        assert!(!valid_address("555-0134"));
        assert!(!valid_address("St, Austin"));
    }

    #[test]
    fn three_docs_six_segments() {
        let run = generate_synthetic_run(&SyntheticRunSpec::new(Template::AddressChain, 3, 1));
        assert_eq!(run.inputs.len(), 3);
        assert_eq!(run.truth.len(), 6);
        assert!(run.truth.iter().all(|t| t.valid && t.sources.len() == 1));
        let again = generate_synthetic_run(&SyntheticRunSpec::new(Template::AddressChain, 3, 1));
        assert_eq!(run.inputs, again.inputs);
    }

    #[test]
    fn planted_merge_on_doc_two() {
        let spec = SyntheticRunSpec::new(Template::AddressChain, 3, 1)
            .with_error(PlantedError::MergedSegments { doc: 2 });
        let run = generate_synthetic_run(&spec);
        let bad: Vec<_> = run.truth.iter().filter(|t| !t.valid).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].sources.iter().next().unwrap().local, "d2");
        assert_eq!(run.truth.len(), 5);
    }

    #[test]
    fn other_planted_errors() {
        let run = generate_synthetic_run(
            &SyntheticRunSpec::new(Template::AddressChain, 2, 7)
                .with_error(PlantedError::DroppedSegment { doc: 1 })
                .with_error(PlantedError::FieldSwap { doc: 2 }),
        );
        assert_eq!(run.truth.len(), 3);
        assert_eq!(run.truth.iter().filter(|t| !t.valid).count(), 1);
    }

    #[test]
    fn single_doc() {
        let mut spec = SyntheticRunSpec::new(Template::AddressChain, 1, 3);
        spec.segments_per_doc = 1;
        let run = generate_synthetic_run(&spec);
        assert_eq!(run.truth.len(), 1);
    }
}
