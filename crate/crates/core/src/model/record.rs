//! Records, canonical values and value-indexed record sets.
//!
//! Output records minted by two different executions of an operator carry
//! unrelated ids, so every membership test in the provenance algorithms is
//! performed on the canonical value, never on the id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

/// Identifier of a record: the input port it arrived on plus an id that is
/// unique within that port.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordId {
    pub port: u16,
    pub local: String,
}

impl RecordId {
    pub fn new(port: u16, local: impl Into<String>) -> Self {
        RecordId {
            port,
            local: local.into(),
        }
    }

    pub fn with_port(&self, port: u16) -> Self {
        RecordId {
            port,
            local: self.local.clone(),
        }
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.port, self.local)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed record id `{0}` (expected `<port>:<local>`)")]
pub struct ParseRecordIdError(pub String);

impl FromStr for RecordId {
    type Err = ParseRecordIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (port, local) = s
            .split_once(':')
            .ok_or_else(|| ParseRecordIdError(s.to_string()))?;
        let port = port
            .parse::<u16>()
            .map_err(|_| ParseRecordIdError(s.to_string()))?;
        Ok(RecordId::new(port, local))
    }
}

impl Serialize for RecordId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RecordId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// A scalar inside a map-valued record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Null,
    Bool(bool),
    Number(serde_json::Number),
    Str(String),
}

impl Scalar {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Text rendering used by field-matching rules and tokenizers.
    pub fn render(&self) -> String {
        match self {
            Scalar::Null => "null".to_string(),
            Scalar::Bool(b) => b.to_string(),
            Scalar::Number(n) => n.to_string(),
            Scalar::Str(s) => s.clone(),
        }
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Str(s.to_string())
    }
}

impl From<String> for Scalar {
    fn from(s: String) -> Self {
        Scalar::Str(s)
    }
}

impl From<i64> for Scalar {
    fn from(n: i64) -> Self {
        Scalar::Number(n.into())
    }
}

/// Record payload: UTF-8 text or a flat map of scalars.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Text(String),
    Map(BTreeMap<String, Scalar>),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn map<K, V, I>(entries: I) -> Self
    where
        K: Into<String>,
        V: Into<Scalar>,
        I: IntoIterator<Item = (K, V)>,
    {
        Value::Map(
            entries
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    /// Canonical bytes: text is taken byte-for-byte, maps are serialized
    /// compactly with keys in sorted order. No case folding, no whitespace
    /// normalization.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        match self {
            Value::Text(s) => {
                let mut out = Vec::with_capacity(s.len() + 2);
                out.extend_from_slice(b"t:");
                out.extend_from_slice(s.as_bytes());
                out
            }
            Value::Map(m) => {
                let mut out = b"m:".to_vec();
                // BTreeMap serializes in key order; serde_json cannot fail on
                // string keys and scalar values.
                out.extend(serde_json::to_vec(m).expect("scalar map serializes"));
                out
            }
        }
    }

    pub fn field(&self, name: &str) -> Option<&Scalar> {
        match self {
            Value::Map(m) => m.get(name),
            Value::Text(_) => None,
        }
    }

    /// All text carried by the value, used for keyword tokenization.
    pub fn flat_text(&self) -> String {
        match self {
            Value::Text(s) => s.clone(),
            Value::Map(m) => m.values().map(Scalar::render).collect::<Vec<_>>().join(" "),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => write!(f, "{s:?}"),
            Value::Map(m) => {
                let s = serde_json::to_string(m).map_err(|_| fmt::Error)?;
                f.write_str(&s)
            }
        }
    }
}

/// SHA-256 of a canonical encoding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Digest(arr))
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Digest::from_hex(&s).ok_or_else(|| D::Error::custom(format!("bad digest `{s}`")))
    }
}

/// A unit of data: identifier plus canonical value.
#[derive(Clone, PartialEq, Eq)]
pub struct Record {
    pub id: RecordId,
    pub value: Value,
    digest: Digest,
}

impl Record {
    pub fn new(id: RecordId, value: Value) -> Self {
        let digest = Digest::of(&value.canonical_bytes());
        Record { id, value, digest }
    }

    pub fn text(port: u16, local: impl Into<String>, text: impl Into<String>) -> Self {
        Record::new(RecordId::new(port, local), Value::text(text))
    }

    /// Digest of the canonical value; ids do not participate.
    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn value_eq(&self, other: &Record) -> bool {
        self.digest == other.digest
    }

    pub fn with_port(&self, port: u16) -> Record {
        Record {
            id: self.id.with_port(port),
            value: self.value.clone(),
            digest: self.digest,
        }
    }
}

impl fmt::Debug for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.id, self.value)
    }
}

/// One line of a JSON Lines record file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordLine {
    pub id: String,
    pub value: Value,
}

impl RecordLine {
    pub fn into_record(self, port: u16) -> Record {
        Record::new(RecordId::new(port, self.id), self.value)
    }

    pub fn from_record(r: &Record) -> Self {
        RecordLine {
            id: r.id.local.clone(),
            value: r.value.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RecordFileError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate record id `{id}`")]
    DuplicateId { line: usize, id: String },
}

/// Finite set of records with unique ids, iterated in ascending
/// `(port, local)` order, with a secondary index on value digests.
#[derive(Clone, Default)]
pub struct RecordSet {
    members: BTreeMap<RecordId, Arc<Record>>,
    by_digest: HashMap<Digest, BTreeSet<RecordId>>,
}

impl RecordSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `record`; returns `false` (and leaves the set unchanged) when
    /// its id is already present.
    pub fn insert(&mut self, record: Record) -> bool {
        self.insert_arc(Arc::new(record))
    }

    pub fn insert_arc(&mut self, record: Arc<Record>) -> bool {
        if self.members.contains_key(&record.id) {
            return false;
        }
        self.by_digest
            .entry(record.digest())
            .or_default()
            .insert(record.id.clone());
        self.members.insert(record.id.clone(), record);
        true
    }

    pub fn remove(&mut self, id: &RecordId) -> Option<Arc<Record>> {
        let rec = self.members.remove(id)?;
        if let Some(ids) = self.by_digest.get_mut(&rec.digest()) {
            ids.remove(id);
            if ids.is_empty() {
                self.by_digest.remove(&rec.digest());
            }
        }
        Some(rec)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn get(&self, id: &RecordId) -> Option<&Record> {
        self.members.get(id).map(|r| r.as_ref())
    }

    pub fn contains_id(&self, id: &RecordId) -> bool {
        self.members.contains_key(id)
    }

    /// True iff some member has the same canonical value as `probe`.
    pub fn contains_by_value(&self, probe: &Record) -> bool {
        self.by_digest.contains_key(&probe.digest())
    }

    pub fn contains_digest(&self, digest: &Digest) -> bool {
        self.by_digest.contains_key(digest)
    }

    /// Value membership restricted to one input port.
    pub fn contains_value_on_port(&self, port: u16, digest: &Digest) -> bool {
        self.by_digest
            .get(digest)
            .is_some_and(|ids| ids.iter().any(|id| id.port == port))
    }

    pub fn find_by_value(&self, probe: &Record) -> Option<&Record> {
        let ids = self.by_digest.get(&probe.digest())?;
        ids.iter().next().and_then(|id| self.get(id))
    }

    pub fn ids_with_digest(&self, digest: &Digest) -> impl Iterator<Item = &RecordId> {
        self.by_digest.get(digest).into_iter().flatten()
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &Record> + ExactSizeIterator {
        self.members.values().map(|r| r.as_ref())
    }

    pub fn iter_arc(&self) -> impl Iterator<Item = &Arc<Record>> {
        self.members.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &RecordId> {
        self.members.keys()
    }

    pub fn id_set(&self) -> BTreeSet<RecordId> {
        self.members.keys().cloned().collect()
    }

    /// Copy of the set without the record `id`.
    pub fn without(&self, id: &RecordId) -> RecordSet {
        let mut out = self.clone();
        out.remove(id);
        out
    }

    pub fn without_all<'a>(&self, ids: impl IntoIterator<Item = &'a RecordId>) -> RecordSet {
        let mut out = self.clone();
        for id in ids {
            out.remove(id);
        }
        out
    }

    /// Members whose ids are in `ids`, keeping this set's records.
    pub fn restrict<'a>(&self, ids: impl IntoIterator<Item = &'a RecordId>) -> RecordSet {
        let mut out = RecordSet::new();
        for id in ids {
            if let Some(r) = self.members.get(id) {
                out.insert_arc(r.clone());
            }
        }
        out
    }

    pub fn is_subset_of(&self, other: &RecordSet) -> bool {
        self.members.keys().all(|id| other.contains_id(id))
    }

    pub fn union(&self, other: &RecordSet) -> RecordSet {
        let mut out = self.clone();
        for r in other.iter_arc() {
            out.insert_arc(r.clone());
        }
        out
    }

    pub fn intersection(&self, other: &RecordSet) -> RecordSet {
        let mut out = RecordSet::new();
        for r in self.iter_arc() {
            if other.contains_id(&r.id) {
                out.insert_arc(r.clone());
            }
        }
        out
    }

    /// Value-level containment: every member of `self` has a value-equal
    /// member in `other`.
    pub fn values_subset_of(&self, other: &RecordSet) -> bool {
        self.by_digest.keys().all(|d| other.contains_digest(d))
    }

    pub fn value_digests(&self) -> BTreeSet<Digest> {
        self.by_digest.keys().copied().collect()
    }

    /// Value-level equality (ids ignored, multiplicity ignored).
    pub fn value_eq(&self, other: &RecordSet) -> bool {
        self.by_digest.len() == other.by_digest.len() && self.values_subset_of(other)
    }

    /// Digest of the canonical content (ids and values, in canonical order).
    pub fn content_digest(&self) -> Digest {
        let mut h = Sha256::new();
        for r in self.iter() {
            h.update(r.id.port.to_be_bytes());
            h.update((r.id.local.len() as u64).to_be_bytes());
            h.update(r.id.local.as_bytes());
            h.update(r.digest().0);
        }
        Digest(h.finalize().into())
    }

    pub fn parse_jsonl(text: &str, port: u16) -> Result<RecordSet, RecordFileError> {
        let mut out = RecordSet::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine =
                serde_json::from_str(line).map_err(|e| RecordFileError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let id = parsed.id.clone();
            if !out.insert(parsed.into_record(port)) {
                return Err(RecordFileError::DuplicateId { line: line_no, id });
            }
        }
        Ok(out)
    }

    /// JSON Lines encoding, LF-terminated, in canonical order. Port tags are
    /// not written; the file's role determines the port.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.iter() {
            out.push_str(&serde_json::to_string(&RecordLine::from_record(r)).expect("record line"));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct TaggedRecord {
    id: RecordId,
    value: Value,
}

/// JSON form: an array of `{"id": "port:local", "value": ...}` objects.
impl Serialize for RecordSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter().map(|r| TaggedRecord {
            id: r.id.clone(),
            value: r.value.clone(),
        }))
    }
}

impl<'de> Deserialize<'de> for RecordSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<TaggedRecord>::deserialize(deserializer)?;
        let mut out = RecordSet::new();
        for row in rows {
            let id = row.id.to_string();
            if !out.insert(Record::new(row.id, row.value)) {
                return Err(D::Error::custom(format!("duplicate record id `{id}`")));
            }
        }
        Ok(out)
    }
}

impl PartialEq for RecordSet {
    fn eq(&self, other: &Self) -> bool {
        self.members.len() == other.members.len()
            && self
                .members
                .iter()
                .zip(other.members.iter())
                .all(|((ka, a), (kb, b))| ka == kb && a.digest() == b.digest())
    }
}

impl Eq for RecordSet {}

impl fmt::Debug for RecordSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<Record> for RecordSet {
    fn from_iter<T: IntoIterator<Item = Record>>(iter: T) -> Self {
        let mut out = RecordSet::new();
        for r in iter {
            out.insert(r);
        }
        out
    }
}

impl FromIterator<Arc<Record>> for RecordSet {
    fn from_iter<T: IntoIterator<Item = Arc<Record>>>(iter: T) -> Self {
        let mut out = RecordSet::new();
        for r in iter {
            out.insert_arc(r);
        }
        out
    }
}

impl<'a> IntoIterator for &'a RecordSet {
    type Item = &'a Record;
    type IntoIter = Box<dyn Iterator<Item = &'a Record> + 'a>;

    fn into_iter(self) -> Self::IntoIter {
        Box::new(self.iter())
    }
}

/// Tagged disjoint union of a tuple of record sets. Each record keeps its
/// local id; its port becomes the tuple position.
pub fn flatten_ports(inputs: &[RecordSet]) -> RecordSet {
    let mut out = RecordSet::new();
    for (port, set) in inputs.iter().enumerate() {
        for r in set.iter() {
            out.insert(r.with_port(port as u16));
        }
    }
    out
}

/// Inverse of [`flatten_ports`]: splits a port-tagged set into `arity`
/// sets. Records tagged with a port `>= arity` are dropped.
pub fn unflatten_ports(flat: &RecordSet, arity: usize) -> Vec<RecordSet> {
    let mut out = vec![RecordSet::new(); arity];
    for r in flat.iter_arc() {
        if let Some(slot) = out.get_mut(r.id.port as usize) {
            slot.insert_arc(r.clone());
        }
    }
    out
}
