//! Built-in synthetic operators with known properties.

use std::collections::{BTreeMap, BTreeSet};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::tokenize;
use crate::model::{
    Digest, Monotonicity, OperatorHandle, PropertyClass, Record, RecordId, RecordSet, Scalar,
    Shape, ShapeEvidence, Value,
};

fn default_delimiter() -> String {
    "|".to_string()
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn default_score_field() -> String {
    "score".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticOpSpec {
    Identity,
    /// One output per non-empty delimited piece, id `{input}/s{k}`.
    Splitter {
        #[serde(default = "default_delimiter")]
        delimiter: String,
    },
    /// Projects `field` out of `k=v; k=v` text or a map. With `key_field`,
    /// emits `{key_field, field}` maps instead of bare text.
    KeyedExtractor {
        field: String,
        #[serde(default)]
        key_field: Option<String>,
    },
    /// One output per key (a field, or the lowercased text) seen in at least
    /// `min_copies` inputs.
    Dedup {
        #[serde(default)]
        key: Option<String>,
        #[serde(default = "one")]
        min_copies: usize,
    },
    /// Emits a value once at least `t` inputs carry it.
    SupportThreshold {
        t: usize,
        #[serde(default)]
        key: Option<String>,
    },
    /// Equi-join of `arity` ports on a map field.
    TaggedJoin {
        key: String,
        #[serde(default = "two")]
        arity: usize,
    },
    /// Pass-through that attaches an integer score.
    Scorer,
    /// The single best-scored input. Not monotone.
    Top1ByScore {
        #[serde(default = "default_score_field")]
        field: String,
    },
    /// Every token that occurs in at least `t` inputs.
    TermSupport {
        t: usize,
    },
}

impl SyntheticOpSpec {
    /// Parses a pipeline-config node: `kind` plus its parameter object.
    /// Unknown parameters (such as `delay_ms`) are ignored here.
    pub fn from_config(kind: &str, params: &serde_json::Value) -> Result<Self, String> {
        let mut obj = match params {
            serde_json::Value::Null => serde_json::Map::new(),
            serde_json::Value::Object(m) => m.clone(),
            other => {
                return Err(format!(
                    "params for `{kind}` must be an object, got {other}"
                ))
            }
        };
        obj.insert("kind".into(), serde_json::Value::String(kind.to_string()));
        serde_json::from_value(serde_json::Value::Object(obj))
            .map_err(|e| format!("bad `{kind}` operator: {e}"))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SyntheticOpSpec::Identity => "identity",
            SyntheticOpSpec::Splitter { .. } => "splitter",
            SyntheticOpSpec::KeyedExtractor { .. } => "keyed_extractor",
            SyntheticOpSpec::Dedup { .. } => "dedup",
            SyntheticOpSpec::SupportThreshold { .. } => "support_threshold",
            SyntheticOpSpec::TaggedJoin { .. } => "tagged_join",
            SyntheticOpSpec::Scorer => "scorer",
            SyntheticOpSpec::Top1ByScore { .. } => "top1_by_score",
            SyntheticOpSpec::TermSupport { .. } => "term_support",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            SyntheticOpSpec::TaggedJoin { arity, .. } => (*arity).max(1),
            _ => 1,
        }
    }

    pub fn true_shape(&self) -> Shape {
        match self {
            SyntheticOpSpec::Identity
            | SyntheticOpSpec::KeyedExtractor { .. }
            | SyntheticOpSpec::Scorer => Shape::OneToOne,
            SyntheticOpSpec::Splitter { .. } => Shape::OneToMany,
            SyntheticOpSpec::Dedup { .. } | SyntheticOpSpec::SupportThreshold { .. } => {
                Shape::ManyToOne
            }
            SyntheticOpSpec::TaggedJoin { .. }
            | SyntheticOpSpec::Top1ByScore { .. }
            | SyntheticOpSpec::TermSupport { .. } => Shape::Arbitrary,
        }
    }

    pub fn is_monotone(&self) -> bool {
        !matches!(self, SyntheticOpSpec::Top1ByScore { .. })
    }

    /// Ground-truth property class, tagged as declared.
    pub fn ground_truth(&self) -> PropertyClass {
        let base = match self.true_shape() {
            Shape::Arbitrary => PropertyClass::arbitrary(),
            Shape::ManyToOne => PropertyClass::heuristic_many_to_one(ShapeEvidence::Declared),
            s => PropertyClass::with_shape(s, ShapeEvidence::Declared),
        };
        if self.is_monotone() {
            base
        } else {
            base.with_monotonicity(Monotonicity::Violated)
        }
    }

    /// An operator handle named `name`. Properties stay `Arbitrary` until
    /// declared or inferred, except that a known monotonicity violation is
    /// recorded.
    pub fn build(&self, name: &str) -> OperatorHandle {
        let spec = self.clone();
        let op = OperatorHandle::from_fn(name, self.arity(), move |inputs: &[RecordSet]| {
            Ok(spec.eval(inputs))
        });
        if self.is_monotone() {
            op
        } else {
            op.with_properties(PropertyClass::arbitrary().with_monotonicity(Monotonicity::Violated))
        }
    }

    /// Like [`SyntheticOpSpec::build`] but sleeping `delay` per application.
    pub fn build_delayed(&self, name: &str, delay: Duration) -> OperatorHandle {
        let spec = self.clone();
        let op = OperatorHandle::from_fn(name, self.arity(), move |inputs: &[RecordSet]| {
            thread::sleep(delay);
            Ok(spec.eval(inputs))
        });
        op.with_properties(self.build(name).properties)
    }

    pub fn eval(&self, inputs: &[RecordSet]) -> RecordSet {
        match self {
            SyntheticOpSpec::Identity => inputs[0]
                .iter()
                .map(|r| Record::new(RecordId::new(0, r.id.local.clone()), r.value.clone()))
                .collect(),
            SyntheticOpSpec::Splitter { delimiter } => {
                let mut out = RecordSet::new();
                for r in inputs[0].iter() {
                    let text = r.value.flat_text();
                    let pieces = text
                        .split(delimiter.as_str())
                        .map(str::trim)
                        .filter(|p| !p.is_empty());
                    for (k, piece) in pieces.enumerate() {
                        out.insert(Record::text(0, format!("{}/s{k}", r.id.local), piece));
                    }
                }
                out
            }
            SyntheticOpSpec::KeyedExtractor { field, key_field } => {
                let mut out = RecordSet::new();
                for r in inputs[0].iter() {
                    let Some(v) = field_of(&r.value, field) else {
                        continue;
                    };
                    let value = match key_field {
                        None => Value::Text(v),
                        Some(kf) => {
                            let Some(key) = field_of(&r.value, kf) else {
                                continue;
                            };
                            Value::map([(kf.clone(), key), (field.clone(), v)])
                        }
                    };
                    out.insert(Record::new(RecordId::new(0, r.id.local.clone()), value));
                }
                out
            }
            SyntheticOpSpec::Dedup { key, min_copies } => {
                let mut groups: BTreeMap<String, usize> = BTreeMap::new();
                for r in inputs[0].iter() {
                    let k = match key {
                        Some(f) => match field_of(&r.value, f) {
                            Some(v) => v,
                            None => continue,
                        },
                        None => r.value.flat_text().to_lowercase(),
                    };
                    *groups.entry(k).or_default() += 1;
                }
                groups
                    .into_iter()
                    .filter(|(_, n)| *n >= *min_copies)
                    .map(|(k, _)| keyed_record("dd", Value::Text(k)))
                    .collect()
            }
            SyntheticOpSpec::SupportThreshold { t, key } => {
                let mut groups: BTreeMap<Digest, (Value, usize)> = BTreeMap::new();
                for r in inputs[0].iter() {
                    let v = match key {
                        Some(f) => match field_of(&r.value, f) {
                            Some(v) => Value::Text(v),
                            None => continue,
                        },
                        None => r.value.clone(),
                    };
                    let d = Digest::of(&v.canonical_bytes());
                    groups.entry(d).or_insert((v, 0)).1 += 1;
                }
                groups
                    .into_values()
                    .filter(|(_, n)| *n >= *t)
                    .map(|(v, _)| keyed_record("th", v))
                    .collect()
            }
            SyntheticOpSpec::TaggedJoin { key, .. } => join(inputs, key),
            SyntheticOpSpec::Scorer => inputs[0]
                .iter()
                .map(|r| {
                    let text = r.value.flat_text();
                    let score = score_of(&text);
                    Record::new(
                        RecordId::new(0, r.id.local.clone()),
                        Value::map([
                            ("text".to_string(), Scalar::from(text)),
                            ("score".to_string(), Scalar::from(score)),
                        ]),
                    )
                })
                .collect(),
            SyntheticOpSpec::Top1ByScore { field } => {
                let best = inputs[0].iter().max_by(|a, b| {
                    let sa = explicit_score(&a.value, field);
                    let sb = explicit_score(&b.value, field);
                    // ties go to the smaller canonical value
                    sa.cmp(&sb)
                        .then_with(|| b.value.canonical_bytes().cmp(&a.value.canonical_bytes()))
                });
                best.map(|r| Record::new(RecordId::new(0, "top"), r.value.clone()))
                    .into_iter()
                    .collect()
            }
            SyntheticOpSpec::TermSupport { t } => {
                let mut support: BTreeMap<String, usize> = BTreeMap::new();
                for r in inputs[0].iter() {
                    let terms: BTreeSet<String> =
                        tokenize(&r.value.flat_text()).into_iter().collect();
                    for term in terms {
                        *support.entry(term).or_default() += 1;
                    }
                }
                support
                    .into_iter()
                    .filter(|(_, n)| *n >= *t)
                    .map(|(term, _)| Record::text(0, format!("term-{term}"), term))
                    .collect()
            }
        }
    }
}

/// Integer score of a text: its length in characters.
pub fn score_of(text: &str) -> i64 {
    text.chars().count() as i64
}

fn explicit_score(v: &Value, field: &str) -> i64 {
    match v.field(field) {
        Some(Scalar::Number(n)) => n.as_i64().unwrap_or(0),
        Some(s) => s.render().parse().unwrap_or(0),
        None => score_of(&v.flat_text()),
    }
}

fn keyed_record(prefix: &str, value: Value) -> Record {
    let d = Digest::of(&value.canonical_bytes());
    Record::new(RecordId::new(0, format!("{prefix}-{}", d.short())), value)
}

/// Field lookup on maps, or on `k=v; k=v` text. Repeated keys in text are
/// joined with ` / `.
pub fn field_of(v: &Value, field: &str) -> Option<String> {
    match v {
        Value::Map(m) => m.get(field).map(Scalar::render),
        Value::Text(t) => {
            let hits: Vec<&str> = t
                .split(';')
                .filter_map(|kv| kv.split_once('='))
                .filter(|(k, _)| k.trim() == field)
                .map(|(_, v)| v.trim())
                .collect();
            if hits.is_empty() {
                None
            } else {
                Some(hits.join(" / "))
            }
        }
    }
}

fn join(inputs: &[RecordSet], key: &str) -> RecordSet {
    // key → per-port records carrying it
    let mut by_key: BTreeMap<String, Vec<Vec<&Record>>> = BTreeMap::new();
    for (port, set) in inputs.iter().enumerate() {
        for r in set.iter() {
            let Some(k) = field_of(&r.value, key) else {
                continue;
            };
            let slots = by_key
                .entry(k)
                .or_insert_with(|| vec![Vec::new(); inputs.len()]);
            slots[port].push(r);
        }
    }
    let mut out = RecordSet::new();
    for slots in by_key.values() {
        if slots.iter().any(Vec::is_empty) {
            continue;
        }
        let mut combos: Vec<BTreeMap<String, Scalar>> = vec![BTreeMap::new()];
        for port_records in slots {
            let mut next = Vec::new();
            for partial in &combos {
                for r in port_records {
                    let mut m = partial.clone();
                    match &r.value {
                        Value::Map(fields) => m.extend(fields.clone()),
                        Value::Text(t) => {
                            for kv in t.split(';') {
                                if let Some((k, v)) = kv.split_once('=') {
                                    m.insert(k.trim().to_string(), Scalar::from(v.trim()));
                                }
                            }
                        }
                    }
                    next.push(m);
                }
            }
            combos = next;
        }
        for m in combos {
            out.insert(keyed_record("jn", Value::Map(m)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[(&str, &str)]) -> RecordSet {
        items
            .iter()
            .map(|(id, v)| Record::text(0, *id, *v))
            .collect()
    }

    #[test]
    fn splitter_ids_and_pieces() {
        let out = SyntheticOpSpec::Splitter {
            delimiter: "|".into(),
        }
        .eval(&[set(&[("d1", "a|b| |c")])]);
        let ids: Vec<String> = out.ids().map(|i| i.local.clone()).collect();
        assert_eq!(ids, ["d1/s0", "d1/s1", "d1/s2"]);
    }

    #[test]
    fn extractor_joins_repeated_keys() {
        let v = Value::text("name=A; addr=1 Oak St, X; name=B; addr=2 Elm St, Y");
        assert_eq!(field_of(&v, "addr").unwrap(), "1 Oak St, X / 2 Elm St, Y");
        let out = SyntheticOpSpec::KeyedExtractor {
            field: "addr".into(),
            key_field: Some("name".into()),
        }
        .eval(&[set(&[("s", "name=A; addr=1 Oak St, X")])]);
        let r = out.iter().next().unwrap();
        assert_eq!(
            r.value,
            Value::map([("name", "A"), ("addr", "1 Oak St, X")])
        );
    }

    #[test]
    fn threshold_and_dedup_groups() {
        let input = set(&[("a", "s"), ("b", "s"), ("c", "S"), ("d", "q")]);
        let th = SyntheticOpSpec::SupportThreshold { t: 2, key: None }
            .eval(std::slice::from_ref(&input));
        assert_eq!(th.len(), 1);
        assert!(th.contains_by_value(&Record::text(0, "?", "s")));
        let dd = SyntheticOpSpec::Dedup {
            key: None,
            min_copies: 3,
        }
        .eval(&[input]);
        assert_eq!(dd.len(), 1);
        assert!(dd.contains_by_value(&Record::text(0, "?", "s")));
    }

    #[test]
    fn join_matches_across_ports() {
        let a: RecordSet = [Record::new(
            RecordId::new(0, "x"),
            Value::map([("name", "A"), ("addr", "1")]),
        )]
        .into_iter()
        .collect();
        let b: RecordSet = [
            Record::new(
                RecordId::new(1, "y"),
                Value::map([("name", "A"), ("phone", "9")]),
            ),
            Record::new(
                RecordId::new(1, "z"),
                Value::map([("name", "B"), ("phone", "8")]),
            ),
        ]
        .into_iter()
        .collect();
        let out = SyntheticOpSpec::TaggedJoin {
            key: "name".into(),
            arity: 2,
        }
        .eval(&[a, b]);
        assert_eq!(out.len(), 1);
        let v = &out.iter().next().unwrap().value;
        assert_eq!(v.field("phone").unwrap().render(), "9");
        assert_eq!(v.field("addr").unwrap().render(), "1");
    }

    #[test]
    fn top1_evicts() {
        let op = SyntheticOpSpec::Top1ByScore {
            field: "score".into(),
        };
        let small = op.eval(&[set(&[("a", "ab")])]);
        let big = op.eval(&[set(&[("a", "ab"), ("b", "abcd")])]);
        assert!(!small.values_subset_of(&big));
    }

    #[test]
    fn term_support_counts_records_once() {
        let out =
            SyntheticOpSpec::TermSupport { t: 2 }.eval(&[set(&[("a", "x x y"), ("b", "X z")])]);
        assert_eq!(out.len(), 1);
        assert!(out.contains_by_value(&Record::text(0, "?", "x")));
    }

    #[test]
    fn config_parsing() {
        let op = SyntheticOpSpec::from_config(
            "support_threshold",
            &serde_json::json!({"t": 3, "delay_ms": 5}),
        )
        .unwrap();
        assert_eq!(op, SyntheticOpSpec::SupportThreshold { t: 3, key: None });
        assert_eq!(
            SyntheticOpSpec::from_config("splitter", &serde_json::Value::Null).unwrap(),
            SyntheticOpSpec::Splitter {
                delimiter: "|".into()
            }
        );
        assert!(SyntheticOpSpec::from_config("nope", &serde_json::json!({})).is_err());
    }

    #[test]
    fn deterministic_twice() {
        let input = set(&[("a", "p|q"), ("b", "q")]);
        for spec in [
            SyntheticOpSpec::Splitter {
                delimiter: "|".into(),
            },
            SyntheticOpSpec::Scorer,
            SyntheticOpSpec::TermSupport { t: 1 },
        ] {
            assert!(spec
                .eval(std::slice::from_ref(&input))
                .value_eq(&spec.eval(std::slice::from_ref(&input))));
        }
    }
}
