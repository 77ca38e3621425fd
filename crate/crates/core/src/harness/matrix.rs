//! The built-in instance matrix: small (operator, input, output) triples
//! covering every shape, each small enough for the exhaustive oracle.

use crate::model::{
    flatten_ports, Digest, PipelineGraph, PropertyClass, Record, RecordId, RecordSet,
    ShapeEvidence, Value,
};

use super::ops::SyntheticOpSpec;

#[derive(Debug, Clone)]
pub struct MatrixInstance {
    pub name: String,
    pub spec: SyntheticOpSpec,
    /// Port-tagged, flattened operator input.
    pub input: RecordSet,
    pub target: Record,
}

fn texts(port: u16, items: &[(&str, &str)]) -> RecordSet {
    items
        .iter()
        .map(|(id, v)| Record::text(port, *id, *v))
        .collect()
}

fn maps(port: u16, items: &[(&str, &[(&str, &str)])]) -> RecordSet {
    items
        .iter()
        .map(|(id, fields)| {
            Record::new(RecordId::new(port, *id), Value::map(fields.iter().copied()))
        })
        .collect()
}

fn same(prefix: &str, n: usize, value: &str) -> Vec<(String, String)> {
    (0..n)
        .map(|i| (format!("{prefix}{i:02}"), value.to_string()))
        .collect()
}

fn owned(port: u16, items: &[(String, String)]) -> RecordSet {
    items
        .iter()
        .map(|(id, v)| Record::text(port, id.clone(), v.clone()))
        .collect()
}

fn cases() -> Vec<(&'static str, SyntheticOpSpec, Vec<RecordSet>)> {
    let split = SyntheticOpSpec::Splitter {
        delimiter: "|".into(),
    };
    let mut th = same("s", 4, "s");
    th.extend(same("q", 3, "q"));
    let mut th5 = same("s", 5, "s");
    th5.extend(same("q", 2, "q"));
    vec![
        (
            "identity-distinct",
            SyntheticOpSpec::Identity,
            vec![texts(0, &[("x", "x"), ("y", "y"), ("z", "z")])],
        ),
        (
            "identity-dup",
            SyntheticOpSpec::Identity,
            vec![texts(0, &[("x", "v"), ("y", "v"), ("z", "w")])],
        ),
        (
            "identity-wide",
            SyntheticOpSpec::Identity,
            vec![owned(
                0,
                &(0..12)
                    .map(|i| (format!("r{i:02}"), format!("v{}", i % 5)))
                    .collect::<Vec<_>>(),
            )],
        ),
        (
            "splitter-overlap",
            split.clone(),
            vec![texts(0, &[("d1", "a|b"), ("d2", "b|c"), ("d3", "d")])],
        ),
        (
            "splitter-pages",
            split,
            vec![texts(
                0,
                &[
                    (
                        "p1",
                        "name=Ada; addr=1 Oak St, Austin | name=Bo; addr=2 Elm St, Boston",
                    ),
                    ("p2", "name=Bo; addr=2 Elm St, Boston"),
                    (
                        "p3",
                        "name=Cy; addr=3 Ash St, Denver | name=Di; addr=4 Fir St, Austin",
                    ),
                ],
            )],
        ),
        (
            "extractor-addr",
            SyntheticOpSpec::KeyedExtractor {
                field: "addr".into(),
                key_field: None,
            },
            vec![texts(
                0,
                &[
                    ("s1", "name=Ada; addr=1 Oak St, Austin"),
                    ("s2", "name=Bo; addr=2 Elm St, Boston"),
                    ("s3", "name=Bea; addr=2 Elm St, Boston"),
                    ("s4", "name=Cy; phone=555-0100"),
                ],
            )],
        ),
        (
            "extractor-keyed",
            SyntheticOpSpec::KeyedExtractor {
                field: "phone".into(),
                key_field: Some("name".into()),
            },
            vec![maps(
                0,
                &[
                    ("m1", &[("name", "Ada"), ("phone", "1")]),
                    ("m2", &[("name", "Ada"), ("phone", "1"), ("x", "y")]),
                    ("m3", &[("name", "Bo"), ("phone", "2")]),
                ],
            )],
        ),
        (
            "dedup-case",
            SyntheticOpSpec::Dedup {
                key: None,
                min_copies: 1,
            },
            vec![texts(
                0,
                &[("a", "Foo"), ("b", "foo"), ("c", "Bar"), ("d", "baz")],
            )],
        ),
        (
            "dedup-pairs",
            SyntheticOpSpec::Dedup {
                key: None,
                min_copies: 2,
            },
            vec![texts(
                0,
                &[
                    ("a", "X"),
                    ("b", "x"),
                    ("c", "X."),
                    ("d", "y"),
                    ("e", "Y"),
                    ("f", "Y!"),
                ],
            )],
        ),
        (
            "dedup-key-triples",
            SyntheticOpSpec::Dedup {
                key: Some("name".into()),
                min_copies: 2,
            },
            vec![maps(
                0,
                &[
                    ("a", &[("name", "Ada"), ("v", "1")]),
                    ("b", &[("name", "Ada"), ("v", "2")]),
                    ("c", &[("name", "Ada"), ("v", "3")]),
                    ("d", &[("name", "Bo"), ("v", "1")]),
                    ("e", &[("name", "Bo"), ("v", "2")]),
                ],
            )],
        ),
        (
            "threshold-2of3",
            SyntheticOpSpec::SupportThreshold { t: 2, key: None },
            vec![texts(0, &[("a", "s"), ("b", "s"), ("c", "s")])],
        ),
        (
            "threshold-mixed",
            SyntheticOpSpec::SupportThreshold { t: 2, key: None },
            vec![owned(0, &th)],
        ),
        (
            "threshold-3of5",
            SyntheticOpSpec::SupportThreshold { t: 3, key: None },
            vec![owned(0, &same("s", 5, "s"))],
        ),
        (
            "threshold-3of7-mixed",
            SyntheticOpSpec::SupportThreshold { t: 3, key: None },
            vec![owned(0, &th5)],
        ),
        (
            "threshold-4of8",
            SyntheticOpSpec::SupportThreshold { t: 4, key: None },
            vec![owned(0, &same("s", 8, "s"))],
        ),
        (
            "threshold-exact",
            SyntheticOpSpec::SupportThreshold { t: 3, key: None },
            vec![owned(0, &same("s", 3, "s"))],
        ),
        (
            "threshold-keyed",
            SyntheticOpSpec::SupportThreshold {
                t: 2,
                key: Some("city".into()),
            },
            vec![maps(
                0,
                &[
                    ("a", &[("city", "Austin"), ("n", "1")]),
                    ("b", &[("city", "Austin"), ("n", "2")]),
                    ("c", &[("city", "Boston"), ("n", "3")]),
                    ("d", &[("city", "Austin"), ("n", "4")]),
                    ("e", &[("city", "Boston"), ("n", "5")]),
                ],
            )],
        ),
        (
            "join-two-ports",
            SyntheticOpSpec::TaggedJoin {
                key: "name".into(),
                arity: 2,
            },
            vec![
                maps(
                    0,
                    &[
                        ("a1", &[("name", "A"), ("addr", "1")]),
                        ("a2", &[("name", "A"), ("addr", "1")]),
                        ("b1", &[("name", "B"), ("addr", "2")]),
                    ],
                ),
                maps(
                    1,
                    &[
                        ("pa", &[("name", "A"), ("phone", "9")]),
                        ("pb", &[("name", "B"), ("phone", "8")]),
                        ("pc", &[("name", "C"), ("phone", "7")]),
                    ],
                ),
            ],
        ),
        (
            "join-three-ports",
            SyntheticOpSpec::TaggedJoin {
                key: "name".into(),
                arity: 3,
            },
            vec![
                maps(
                    0,
                    &[
                        ("a", &[("name", "A"), ("addr", "1")]),
                        ("b", &[("name", "B"), ("addr", "2")]),
                    ],
                ),
                maps(
                    1,
                    &[
                        ("a", &[("name", "A"), ("phone", "9")]),
                        ("b", &[("name", "B"), ("phone", "8")]),
                    ],
                ),
                maps(
                    2,
                    &[
                        ("a", &[("name", "A")]),
                        ("a2", &[("name", "A")]),
                        ("b", &[("name", "B")]),
                    ],
                ),
            ],
        ),
        (
            "scorer",
            SyntheticOpSpec::Scorer,
            vec![texts(
                0,
                &[
                    ("a", "alpha"),
                    ("b", "beta"),
                    ("c", "alpha"),
                    ("d", "gamma ray"),
                ],
            )],
        ),
        (
            "terms-2",
            SyntheticOpSpec::TermSupport { t: 2 },
            vec![texts(
                0,
                &[
                    ("a", "red fox"),
                    ("b", "red hen"),
                    ("c", "blue fox"),
                    ("d", "red blue"),
                    ("e", "hen"),
                ],
            )],
        ),
        (
            "terms-3",
            SyntheticOpSpec::TermSupport { t: 3 },
            vec![texts(
                0,
                &[
                    ("a", "oak ash"),
                    ("b", "oak elm"),
                    ("c", "ash elm"),
                    ("d", "oak"),
                    ("e", "elm fir"),
                    ("f", "fir ash"),
                    ("g", "fir"),
                    ("h", "yew"),
                ],
            )],
        ),
    ]
}

/// Every distinct output value of every case becomes one instance.
pub fn instance_matrix() -> Vec<MatrixInstance> {
    let mut out = Vec::new();
    for (name, spec, ports) in cases() {
        let output = spec.eval(&ports);
        let input = flatten_ports(&ports);
        let mut seen: Vec<Digest> = Vec::new();
        for r in output.iter() {
            if seen.contains(&r.digest()) {
                continue;
            }
            seen.push(r.digest());
            out.push(MatrixInstance {
                name: format!("{name}#{}", r.id.local),
                spec: spec.clone(),
                input: input.clone(),
                target: r.clone(),
            });
        }
    }
    out
}

/// Two operators in sequence over a small document set.
#[derive(Debug, Clone)]
pub struct ChainCase {
    pub name: &'static str,
    pub first: SyntheticOpSpec,
    pub second: SyntheticOpSpec,
    pub input: RecordSet,
}

impl ChainCase {
    /// `o1 -> o2`. With `declared`, record-wise stages carry their true
    /// shape as a declaration; otherwise both are plain black boxes.
    pub fn graph(&self, declared: bool) -> PipelineGraph {
        let build = |spec: &SyntheticOpSpec, name: &str| {
            let op = spec.build(name);
            let shape = spec.true_shape();
            if declared && shape.is_record_wise() {
                op.with_properties(PropertyClass::with_shape(shape, ShapeEvidence::Declared))
            } else {
                op
            }
        };
        let mut g = PipelineGraph::new();
        g.add_node("o1", build(&self.first, "o1"))
            .add_node("o2", build(&self.second, "o2"))
            .add_edge("o1", "o2", 0);
        g
    }
}

fn numbered(items: &[&str]) -> RecordSet {
    items
        .iter()
        .enumerate()
        .map(|(i, v)| Record::text(0, format!("d{}", i + 1), *v))
        .collect()
}

/// Harness 2-chains covering every pairing of record-wise and arbitrary
/// stages. Inputs have at most 10 records.
pub fn chain_cases() -> Vec<ChainCase> {
    let split = SyntheticOpSpec::Splitter {
        delimiter: "|".into(),
    };
    let th = |t| SyntheticOpSpec::SupportThreshold { t, key: None };
    let dedup = |min_copies| SyntheticOpSpec::Dedup {
        key: None,
        min_copies,
    };
    vec![
        ChainCase {
            name: "splitter-extractor",
            first: split.clone(),
            second: SyntheticOpSpec::KeyedExtractor {
                field: "addr".into(),
                key_field: None,
            },
            input: numbered(&[
                "name=Ada; addr=1 Oak St | name=Bo; addr=2 Elm St",
                "name=Bo; addr=2 Elm St",
                "name=Cy; phone=555",
                "name=Di; addr=4 Fir St | name=Ed; addr=1 Oak St",
            ]),
        },
        ChainCase {
            name: "splitter-threshold",
            first: split.clone(),
            second: th(2),
            input: numbered(&["s|s", "s", "q|s", "q", "s|q"]),
        },
        ChainCase {
            name: "splitter-scorer",
            first: split.clone(),
            second: SyntheticOpSpec::Scorer,
            input: numbered(&["ab|cd", "ab", "xyz|ab", "q"]),
        },
        ChainCase {
            name: "splitter-terms",
            first: split.clone(),
            second: SyntheticOpSpec::TermSupport { t: 2 },
            input: numbered(&[
                "red fox|blue",
                "red",
                "fox|hen",
                "blue hen",
                "oak",
                "oak|red",
            ]),
        },
        ChainCase {
            name: "identity-dedup",
            first: SyntheticOpSpec::Identity,
            second: dedup(2),
            input: numbered(&["X", "x", "y", "Y", "Y.", "x"]),
        },
        ChainCase {
            name: "extractor-threshold",
            first: SyntheticOpSpec::KeyedExtractor {
                field: "city".into(),
                key_field: None,
            },
            second: th(2),
            input: numbered(&[
                "name=a; city=Austin",
                "name=b; city=Austin",
                "name=c; city=Boston",
                "name=d; city=Austin",
                "name=e; city=Boston",
                "name=f",
            ]),
        },
        ChainCase {
            name: "threshold-identity",
            first: th(2),
            second: SyntheticOpSpec::Identity,
            input: numbered(&["s", "s", "s", "q", "q"]),
        },
        ChainCase {
            name: "dedup-splitter",
            first: dedup(2),
            second: split.clone(),
            input: numbered(&["A|b", "a|B", "c|d", "C|D", "e"]),
        },
        ChainCase {
            name: "terms-dedup",
            first: SyntheticOpSpec::TermSupport { t: 2 },
            second: dedup(1),
            input: numbered(&["oak ash", "Oak elm", "ash", "elm oak", "fir", "fir ash"]),
        },
        ChainCase {
            name: "threshold-threshold",
            first: SyntheticOpSpec::SupportThreshold {
                t: 2,
                key: Some("k".into()),
            },
            second: th(1),
            input: numbered(&["k=a", "k=a", "k=b", "k=b", "k=a", "k=c"]),
        },
        ChainCase {
            name: "splitter-threshold-wide",
            first: split.clone(),
            second: th(3),
            input: numbered(&["s|q", "s", "q", "s|s", "q|q", "s", "q|s", "w", "s|w"]),
        },
        ChainCase {
            name: "identity-terms-wide",
            first: SyntheticOpSpec::Identity,
            second: SyntheticOpSpec::TermSupport { t: 3 },
            input: numbered(&[
                "oak ash", "oak elm", "ash elm", "oak", "elm fir", "fir ash", "fir", "yew",
                "yew oak", "ash",
            ]),
        },
        ChainCase {
            name: "terms-dedup-wide",
            first: SyntheticOpSpec::TermSupport { t: 2 },
            second: dedup(1),
            input: numbered(&[
                "red fox", "red hen", "blue fox", "red blue", "hen", "fox", "Blue", "cat",
                "cat dog", "dog",
            ]),
        },
    ]
}
