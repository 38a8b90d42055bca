//! Logical data model: query attributes are the dimensions of a table space,
//! each cut into equal-frequency segments. A record lands in exactly one cell
//! of the resulting grid; a conjunctive predicate list maps to a box of cells.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Integer,
    Float,
    String,
    Date,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::Integer => "integer",
            ValueKind::Float => "float",
            ValueKind::String => "string",
            ValueKind::Date => "date",
        })
    }
}

/// A single attribute value. `Empty` stands for a missing value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Empty,
    Int(i64),
    Float(f64),
    Str(String),
    Date(NaiveDate),
}

impl Value {
    pub fn is_empty(&self) -> bool {
        matches!(self, Value::Empty)
    }

    pub fn kind(&self) -> Option<ValueKind> {
        match self {
            Value::Empty => None,
            Value::Int(_) => Some(ValueKind::Integer),
            Value::Float(_) => Some(ValueKind::Float),
            Value::Str(_) => Some(ValueKind::String),
            Value::Date(_) => Some(ValueKind::Date),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Empty => 0,
            Value::Int(_) => 1,
            Value::Float(_) => 2,
            Value::Str(_) => 3,
            Value::Date(_) => 4,
        }
    }

    /// Parses unescaped text as a value of `kind`. The empty string is `Empty`
    /// for every kind except `String`.
    pub fn parse(kind: ValueKind, text: &str) -> Result<Value> {
        if text.is_empty() && kind != ValueKind::String {
            return Ok(Value::Empty);
        }
        let bad = || Error::Input(format!("cannot parse {text:?} as {kind}"));
        match kind {
            ValueKind::Integer => text.trim().parse().map(Value::Int).map_err(|_| bad()),
            ValueKind::Float => {
                let x: f64 = text.trim().parse().map_err(|_| bad())?;
                if x.is_nan() {
                    return Err(bad());
                }
                Ok(Value::Float(x))
            }
            ValueKind::String => Ok(Value::Str(text.to_string())),
            ValueKind::Date => NaiveDate::parse_from_str(text.trim(), "%Y-%m-%d")
                .map(Value::Date)
                .map_err(|_| bad()),
        }
    }

    /// Converts a literal into the representation used by an attribute of `kind`.
    pub fn coerce(self, kind: ValueKind) -> Result<Value> {
        let fail = |v: &Value| Error::Planning(format!("literal {v} is not a valid {kind}"));
        match (self, kind) {
            (Value::Empty, _) => Ok(Value::Empty),
            (v @ Value::Int(_), ValueKind::Integer) => Ok(v),
            (Value::Int(i), ValueKind::Float) => Ok(Value::Float(i as f64)),
            (Value::Float(x), ValueKind::Integer) if x.fract() == 0.0 && x.abs() < 9.0e15 => {
                Ok(Value::Int(x as i64))
            }
            (v @ Value::Float(_), ValueKind::Float) => Ok(v),
            (v @ Value::Str(_), ValueKind::String) => Ok(v),
            (Value::Str(s), ValueKind::Date) => NaiveDate::parse_from_str(&s, "%Y-%m-%d")
                .map(Value::Date)
                .map_err(|_| fail(&Value::Str(s))),
            (v @ Value::Date(_), ValueKind::Date) => Ok(v),
            (v, _) => Err(fail(&v)),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (Value::Date(a), Value::Date(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl std::hash::Hash for Value {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Empty => {}
            Value::Int(i) => i.hash(state),
            Value::Float(x) => x.to_bits().hash(state),
            Value::Str(s) => s.hash(state),
            Value::Date(d) => d.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Empty => Ok(()),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Str(s) => f.write_str(s),
            Value::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}

/// One stored record: values in schema attribute order.
pub type Record = Vec<Value>;

/// Equal-frequency cut points of one query attribute.
///
/// `k - 1` strictly increasing boundaries give `k` value segments; the first is
/// unbounded below and the last unbounded above. Intervals are half-open and
/// lower-inclusive. With `includes_empty` an extra segment at index 0 holds
/// missing values and every value segment shifts up by one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub boundaries: Vec<Value>,
    #[serde(default)]
    pub includes_empty: bool,
}

impl SegmentSpec {
    pub fn new(boundaries: Vec<Value>, includes_empty: bool) -> Result<Self> {
        let spec = SegmentSpec {
            boundaries,
            includes_empty,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.boundaries.iter().any(Value::is_empty) {
            return Err(Error::InvalidSchema(
                "segment boundary cannot be empty".into(),
            ));
        }
        if self.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSchema(
                "segment boundaries must be strictly increasing".into(),
            ));
        }
        let kinds: HashSet<_> = self.boundaries.iter().filter_map(Value::kind).collect();
        if kinds.len() > 1 {
            return Err(Error::InvalidSchema(
                "segment boundaries mix value kinds".into(),
            ));
        }
        Ok(())
    }

    /// Number of segments over non-empty values.
    pub fn value_segments(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Total dimensional values, counting the empty segment when enabled.
    pub fn len(&self) -> usize {
        self.value_segments() + usize::from(self.includes_empty)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn empty_shift(&self) -> usize {
        usize::from(self.includes_empty)
    }

    /// Index among value segments, ignoring the empty segment.
    fn value_segment(&self, value: &Value) -> usize {
        self.boundaries.partition_point(|b| b <= value)
    }

    /// Segment index of `value`, or `None` for an empty value without an
    /// empty segment.
    pub fn try_locate(&self, value: &Value) -> Option<usize> {
        if value.is_empty() {
            return self.includes_empty.then_some(0);
        }
        Some(self.value_segment(value) + self.empty_shift())
    }

    pub fn locate(&self, value: &Value) -> Result<usize> {
        self.try_locate(value)
            .ok_or_else(|| Error::MissingValue("value".into()))
    }

    /// Segment indexes whose interval may contain a value satisfying `op`.
    /// The empty segment never matches a comparison.
    pub fn matching(&self, op: &PredicateOp) -> Range<usize> {
        let k = self.value_segments();
        let lower_open = |v: &Value| {
            let s = self.value_segment(v);
            // v sits exactly on the lower boundary of s: nothing in s is < v
            if s > 0 && self.boundaries[s - 1] == *v {
                s
            } else {
                s + 1
            }
        };
        let r = match op {
            PredicateOp::Eq(v) => {
                let s = self.value_segment(v);
                s..s + 1
            }
            PredicateOp::Lt(v) => 0..lower_open(v),
            PredicateOp::Le(v) => 0..self.value_segment(v) + 1,
            PredicateOp::Gt(v) | PredicateOp::Ge(v) => self.value_segment(v)..k,
            PredicateOp::Range { lo, hi } => self.value_segment(lo)..lower_open(hi),
        };
        let shift = self.empty_shift();
        if r.start >= r.end {
            shift..shift
        } else {
            r.start + shift..r.end + shift
        }
    }
}

/// Builds equal-frequency segments from a sample of attribute values.
///
/// Boundary `j` is the sorted sample value at 0-based index `ceil(j * N / k)`,
/// so segment `j` holds sample indexes `[ceil(jN/k), ceil((j+1)N/k))`.
/// Repeated boundaries collapse. Empty values in the sample are ignored.
pub fn build_segments(values: &[Value], k: usize) -> Result<SegmentSpec> {
    if k < 1 {
        return Err(Error::InvalidArgument(
            "segment count must be at least 1".into(),
        ));
    }
    let mut sorted: Vec<&Value> = values.iter().filter(|v| !v.is_empty()).collect();
    if sorted.is_empty() {
        return Err(Error::InvalidArgument("segment sample is empty".into()));
    }
    sorted.sort();
    let distinct = 1 + sorted.windows(2).filter(|w| w[0] != w[1]).count();
    if distinct < k {
        return Err(Error::DegenerateSegmentation {
            requested: k,
            achievable: distinct,
        });
    }
    let n = sorted.len();
    let mut boundaries: Vec<Value> = Vec::with_capacity(k - 1);
    for j in 1..k {
        let b = sorted[(j * n).div_ceil(k)];
        // a cut at the minimum would leave segment 0 unpopulated
        if b == sorted[0] || boundaries.last() == Some(b) {
            continue;
        }
        boundaries.push(b.clone());
    }
    if boundaries.len() + 1 < k {
        return Err(Error::DegenerateSegmentation {
            requested: k,
            achievable: boundaries.len() + 1,
        });
    }
    SegmentSpec::new(boundaries, false)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: ValueKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAttribute {
    pub name: String,
    pub segments: SegmentSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaDef {
    name: String,
    attributes: Vec<Attribute>,
    query_attributes: Vec<QueryAttribute>,
}

/// Table schema with its table-space dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDef", into = "SchemaDef")]
pub struct TableSchema {
    name: String,
    attributes: Vec<Attribute>,
    query_attributes: Vec<QueryAttribute>,
    // position of each query attribute within `attributes`
    dim_columns: Vec<usize>,
    dim_sizes: Vec<usize>,
}

impl TryFrom<SchemaDef> for TableSchema {
    type Error = Error;

    fn try_from(def: SchemaDef) -> Result<Self> {
        TableSchema::new(def.name, def.attributes, def.query_attributes)
    }
}

impl From<TableSchema> for SchemaDef {
    fn from(s: TableSchema) -> Self {
        SchemaDef {
            name: s.name,
            attributes: s.attributes,
            query_attributes: s.query_attributes,
        }
    }
}

impl TableSchema {
    pub fn new(
        name: impl Into<String>,
        attributes: Vec<Attribute>,
        query_attributes: Vec<QueryAttribute>,
    ) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidSchema("table name is empty".into()));
        }
        let mut seen = HashSet::new();
        for a in &attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate attribute `{}`",
                    a.name
                )));
            }
        }
        if query_attributes.is_empty() {
            return Err(Error::InvalidSchema(
                "at least one query attribute required".into(),
            ));
        }
        let mut dim_columns = Vec::with_capacity(query_attributes.len());
        let mut dims_seen = HashSet::new();
        for q in &query_attributes {
            let col = attributes
                .iter()
                .position(|a| a.name == q.name)
                .ok_or_else(|| {
                    Error::InvalidSchema(format!(
                        "query attribute `{}` is not an attribute",
                        q.name
                    ))
                })?;
            if !dims_seen.insert(col) {
                return Err(Error::InvalidSchema(format!(
                    "query attribute `{}` repeated",
                    q.name
                )));
            }
            q.segments.validate()?;
            let kind = attributes[col].kind;
            if q.segments.boundaries.iter().any(|b| b.kind() != Some(kind)) {
                return Err(Error::InvalidSchema(format!(
                    "boundaries of `{}` must be {kind} values",
                    q.name
                )));
            }
            dim_columns.push(col);
        }
        let dim_sizes = query_attributes.iter().map(|q| q.segments.len()).collect();
        Ok(TableSchema {
            name,
            attributes,
            query_attributes,
            dim_columns,
            dim_sizes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn query_attributes(&self) -> &[QueryAttribute] {
        &self.query_attributes
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Dimension index of a query attribute.
    pub fn dimension(&self, name: &str) -> Option<usize> {
        self.query_attributes.iter().position(|q| q.name == name)
    }

    pub fn dim_sizes(&self) -> &[usize] {
        &self.dim_sizes
    }

    /// Number of cells `m` in the table space.
    pub fn cell_count(&self) -> usize {
        self.dim_sizes.iter().product()
    }

    pub fn flatten(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.dim_sizes)
            .fold(0, |acc, (&c, &size)| acc * size + c)
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut coords = vec![0; self.dim_sizes.len()];
        for (c, &size) in coords.iter_mut().zip(&self.dim_sizes).rev() {
            *c = flat % size;
            flat /= size;
        }
        coords
    }

    pub fn cell(&self, coords: Vec<usize>) -> Result<CellId> {
        if coords.len() != self.dim_sizes.len()
            || coords.iter().zip(&self.dim_sizes).any(|(&c, &s)| c >= s)
        {
            return Err(Error::InvalidArgument(format!(
                "cell coordinates {coords:?} out of range"
            )));
        }
        let flat = self.flatten(&coords);
        Ok(CellId { coords, flat })
    }

    /// Checks arity and value kinds of a record.
    pub fn check_record(&self, record: &[Value]) -> Result<()> {
        if record.len() != self.attributes.len() {
            return Err(Error::Input(format!(
                "record has {} fields, schema `{}` has {}",
                record.len(),
                self.name,
                self.attributes.len()
            )));
        }
        for (v, a) in record.iter().zip(&self.attributes) {
            if let Some(kind) = v.kind() {
                if kind != a.kind {
                    return Err(Error::Input(format!(
                        "attribute `{}` expects {}, got {kind}",
                        a.name, a.kind
                    )));
                }
            }
        }
        Ok(())
    }

    /// Flat cell index of a record without materialising coordinates.
    pub fn locate_flat(&self, record: &[Value]) -> Result<usize> {
        let mut flat = 0;
        for ((q, &col), &size) in self
            .query_attributes
            .iter()
            .zip(&self.dim_columns)
            .zip(&self.dim_sizes)
        {
            let v = record
                .get(col)
                .ok_or_else(|| Error::MissingValue(q.name.clone()))?;
            let s = q
                .segments
                .try_locate(v)
                .ok_or_else(|| Error::MissingValue(q.name.clone()))?;
            flat = flat * size + s;
        }
        Ok(flat)
    }
}

/// A cell of the table space: per-dimension segment indexes and their
/// row-major flattening.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    pub coords: Vec<usize>,
    pub flat: usize,
}

pub fn locate_segment(spec: &SegmentSpec, value: &Value) -> Result<usize> {
    spec.locate(value)
}

pub fn locate_cell(schema: &TableSchema, record: &[Value]) -> Result<CellId> {
    let flat = schema.locate_flat(record)?;
    Ok(CellId {
        coords: schema.unflatten(flat),
        flat,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredicateOp {
    Eq(Value),
    Lt(Value),
    Le(Value),
    Gt(Value),
    Ge(Value),
    /// Half-open `[lo, hi)`.
    Range {
        lo: Value,
        hi: Value,
    },
}

impl PredicateOp {
    pub fn matches(&self, v: &Value) -> bool {
        if v.is_empty() {
            return false;
        }
        match self {
            PredicateOp::Eq(x) => v == x,
            PredicateOp::Lt(x) => v < x,
            PredicateOp::Le(x) => v <= x,
            PredicateOp::Gt(x) => v > x,
            PredicateOp::Ge(x) => v >= x,
            PredicateOp::Range { lo, hi } => lo <= v && v < hi,
        }
    }

    pub fn map_values(self, mut f: impl FnMut(Value) -> Result<Value>) -> Result<PredicateOp> {
        Ok(match self {
            PredicateOp::Eq(v) => PredicateOp::Eq(f(v)?),
            PredicateOp::Lt(v) => PredicateOp::Lt(f(v)?),
            PredicateOp::Le(v) => PredicateOp::Le(f(v)?),
            PredicateOp::Gt(v) => PredicateOp::Gt(f(v)?),
            PredicateOp::Ge(v) => PredicateOp::Ge(f(v)?),
            PredicateOp::Range { lo, hi } => PredicateOp::Range {
                lo: f(lo)?,
                hi: f(hi)?,
            },
        })
    }
}

impl fmt::Display for PredicateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredicateOp::Eq(v) => write!(f, "= {v}"),
            PredicateOp::Lt(v) => write!(f, "< {v}"),
            PredicateOp::Le(v) => write!(f, "<= {v}"),
            PredicateOp::Gt(v) => write!(f, "> {v}"),
            PredicateOp::Ge(v) => write!(f, ">= {v}"),
            PredicateOp::Range { lo, hi } => write!(f, "in [{lo}, {hi})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub attribute: String,
    pub op: PredicateOp,
}

impl Predicate {
    pub fn new(attribute: impl Into<String>, op: PredicateOp) -> Result<Self> {
        if let PredicateOp::Range { lo, hi } = &op {
            if lo >= hi {
                return Err(Error::InvalidArgument(format!("empty range [{lo}, {hi})")));
            }
        }
        Ok(Predicate {
            attribute: attribute.into(),
            op,
        })
    }

    pub fn range(attribute: impl Into<String>, lo: Value, hi: Value) -> Result<Self> {
        Predicate::new(attribute, PredicateOp::Range { lo, hi })
    }
}

/// Cells that may hold records satisfying every predicate.
///
/// All predicates must reference query attributes. Dimensions without a
/// predicate match all their segments; predicates on one dimension intersect.
/// Returned cells are in ascending flat order.
pub fn cells_matching(schema: &TableSchema, predicates: &[Predicate]) -> Result<Vec<CellId>> {
    let mut per_dim: Vec<Range<usize>> = schema.dim_sizes().iter().map(|&s| 0..s).collect();
    for p in predicates {
        let d = schema.dimension(&p.attribute).ok_or_else(|| {
            Error::InvalidArgument(format!("`{}` is not a query attribute", p.attribute))
        })?;
        let m = schema.query_attributes()[d].segments.matching(&p.op);
        let cur = &per_dim[d];
        per_dim[d] = cur.start.max(m.start)..cur.end.min(m.end);
    }
    if per_dim.iter().any(|r| r.start >= r.end) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut coords: Vec<usize> = per_dim.iter().map(|r| r.start).collect();
    loop {
        out.push(CellId {
            flat: schema.flatten(&coords),
            coords: coords.clone(),
        });
        // odometer increment, last dimension fastest
        let mut d = coords.len();
        loop {
            if d == 0 {
                return Ok(out);
            }
            d -= 1;
            coords[d] += 1;
            if coords[d] < per_dim[d].end {
                break;
            }
            coords[d] = per_dim[d].start;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ints(xs: impl IntoIterator<Item = i64>) -> Vec<Value> {
        xs.into_iter().map(Value::Int).collect()
    }

    fn spec(bounds: &[i64]) -> SegmentSpec {
        SegmentSpec::new(ints(bounds.iter().copied()), false).unwrap()
    }

    fn grid(dims: usize, k: i64) -> TableSchema {
        let names: Vec<String> = (0..dims).map(|d| format!("d{d}")).collect();
        let attributes = names
            .iter()
            .map(|n| Attribute {
                name: n.clone(),
                kind: ValueKind::Integer,
            })
            .collect();
        // segments [0,10), [10,20), ... with k segments
        let bounds: Vec<i64> = (1..k).map(|j| j * 10).collect();
        let qa = names
            .iter()
            .map(|n| QueryAttribute {
                name: n.clone(),
                segments: spec(&bounds),
            })
            .collect();
        TableSchema::new("t", attributes, qa).unwrap()
    }

    #[test]
    fn uniform_deciles() {
        let s = build_segments(&ints(1..=100), 10).unwrap();
        assert_eq!(s.boundaries.len(), 9);
        for (j, b) in s.boundaries.iter().enumerate() {
            let Value::Int(b) = b else { unreachable!() };
            assert!((b - 10 * (j as i64 + 1)).abs() <= 1, "boundary {b}");
        }
    }

    #[test]
    fn constant_sample_is_degenerate() {
        let err = build_segments(&ints(std::iter::repeat_n(7, 50)), 3).unwrap_err();
        assert!(matches!(
            err,
            Error::DegenerateSegmentation {
                requested: 3,
                achievable: 1
            }
        ));
    }

    #[test]
    fn zero_segments_rejected() {
        assert!(matches!(
            build_segments(&ints(1..5), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn exponential_sample_matches_rank_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sample: Vec<f64> = (0..10_000)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let values: Vec<Value> = sample.iter().copied().map(Value::Float).collect();
        let got = build_segments(&values, 8).unwrap();

        let mut sorted = sample.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let expected: Vec<Value> = (1..8)
            .map(|j| {
                let rank = ((j * n) as f64 / 8.0).ceil() as usize;
                Value::Float(sorted[rank])
            })
            .collect();
        assert_eq!(got.boundaries, expected);
    }

    #[test]
    fn segment_boundaries_are_lower_inclusive() {
        let s = spec(&[10, 20]);
        assert_eq!(s.locate(&Value::Int(10)).unwrap(), 1);
        assert_eq!(s.locate(&Value::Int(9)).unwrap(), 0);
        assert_eq!(s.locate(&Value::Int(20)).unwrap(), 2);
        assert_eq!(s.locate(&Value::Int(i64::MIN)).unwrap(), 0);
        assert_eq!(s.locate(&Value::Int(i64::MAX)).unwrap(), 2);
    }

    #[test]
    fn empty_segment_precedes_values() {
        let s = SegmentSpec::new(ints([10, 20]), true).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.locate(&Value::Empty).unwrap(), 0);
        assert_eq!(s.locate(&Value::Int(9)).unwrap(), 1);
        assert_eq!(s.locate(&Value::Int(25)).unwrap(), 3);

        let strict = spec(&[10, 20]);
        assert!(matches!(
            strict.locate(&Value::Empty),
            Err(Error::MissingValue(_))
        ));
    }

    #[test]
    fn unsorted_boundaries_rejected() {
        assert!(SegmentSpec::new(ints([5, 5]), false).is_err());
        assert!(SegmentSpec::new(ints([6, 5]), false).is_err());
    }

    #[test]
    fn row_major_flattening() {
        let schema = grid(3, 5);
        assert_eq!(schema.cell_count(), 125);
        assert_eq!(schema.cell(vec![2, 0, 1]).unwrap().flat, 51);
        assert_eq!(schema.cell(vec![0, 0, 0]).unwrap().flat, 0);
        let rec = ints([25, 3, 17]);
        let c = locate_cell(&schema, &rec).unwrap();
        assert_eq!(c.coords, vec![2, 0, 1]);
        assert_eq!(c.flat, 51);
    }

    #[test]
    fn missing_value_names_attribute() {
        let schema = grid(2, 3);
        let err = locate_cell(&schema, &[Value::Int(1), Value::Empty]).unwrap_err();
        assert!(matches!(err, Error::MissingValue(ref a) if a == "d1"));
    }

    #[test]
    fn schema_rejects_bad_definitions() {
        let attrs = vec![
            Attribute {
                name: "a".into(),
                kind: ValueKind::Integer,
            },
            Attribute {
                name: "a".into(),
                kind: ValueKind::Float,
            },
        ];
        let qa = vec![QueryAttribute {
            name: "a".into(),
            segments: spec(&[1]),
        }];
        assert!(TableSchema::new("t", attrs.clone(), qa.clone()).is_err());
        assert!(TableSchema::new("t", attrs[..1].to_vec(), vec![]).is_err());
        let wrong = vec![QueryAttribute {
            name: "zz".into(),
            segments: spec(&[1]),
        }];
        assert!(TableSchema::new("t", attrs[..1].to_vec(), wrong).is_err());
        let float_bounds = vec![QueryAttribute {
            name: "a".into(),
            segments: SegmentSpec::new(vec![Value::Float(1.0)], false).unwrap(),
        }];
        assert!(TableSchema::new("t", attrs[..1].to_vec(), float_bounds).is_err());
    }

    #[test]
    fn schema_serde_revalidates() {
        let schema = grid(2, 3);
        let json = serde_json::to_string(&schema).unwrap();
        let back: TableSchema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, schema);
        let broken = json.replace("\"d1\",\"segments\"", "\"nope\",\"segments\"");
        assert!(serde_json::from_str::<TableSchema>(&broken).is_err());
    }

    #[test]
    fn product_of_matched_segments() {
        let schema = grid(3, 5);
        let p = Predicate::range("d0", Value::Int(10), Value::Int(40)).unwrap();
        assert_eq!(cells_matching(&schema, &[p]).unwrap().len(), 75);
        assert_eq!(cells_matching(&schema, &[]).unwrap().len(), 125);
        let eqs: Vec<_> = (0..3)
            .map(|d| Predicate::new(format!("d{d}"), PredicateOp::Eq(Value::Int(25))).unwrap())
            .collect();
        let cells = cells_matching(&schema, &eqs).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].coords, vec![2, 2, 2]);
    }

    #[test]
    fn disjoint_predicates_match_nothing() {
        let schema = grid(2, 5);
        let ps = vec![
            Predicate::new("d0", PredicateOp::Lt(Value::Int(10))).unwrap(),
            Predicate::new("d0", PredicateOp::Ge(Value::Int(30))).unwrap(),
        ];
        assert!(cells_matching(&schema, &ps).unwrap().is_empty());
        let split = vec![
            Predicate::new("d1", PredicateOp::Le(Value::Int(12))).unwrap(),
            Predicate::new("d1", PredicateOp::Gt(Value::Int(25))).unwrap(),
        ];
        assert!(cells_matching(&schema, &split).unwrap().is_empty());
    }

    #[test]
    fn strict_upper_bound_on_boundary_excludes_segment() {
        let s = spec(&[10, 20]);
        assert_eq!(s.matching(&PredicateOp::Lt(Value::Int(10))), 0..1);
        assert_eq!(s.matching(&PredicateOp::Le(Value::Int(10))), 0..2);
        assert_eq!(s.matching(&PredicateOp::Lt(Value::Int(11))), 0..2);
        assert_eq!(s.matching(&PredicateOp::Gt(Value::Int(19))), 1..3);
        assert_eq!(
            s.matching(&PredicateOp::Range {
                lo: Value::Int(10),
                hi: Value::Int(20)
            }),
            1..2
        );
    }

    #[test]
    fn range_requires_lo_below_hi() {
        assert!(Predicate::range("a", Value::Int(3), Value::Int(3)).is_err());
    }

    #[test]
    fn uniform_records_spread_evenly_over_cells() {
        let schema = grid(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = vec![0u64; schema.cell_count()];
        let n = 1_000_000u64;
        for _ in 0..n {
            let rec: Vec<Value> = (0..3).map(|_| Value::Int(rng.gen_range(0..50))).collect();
            counts[schema.locate_flat(&rec).unwrap()] += 1;
        }
        let mean = n as f64 / counts.len() as f64;
        let slack = 6.0 * mean.sqrt();
        for &c in &counts {
            assert!((c as f64 - mean).abs() < slack, "count {c} vs mean {mean}");
        }
    }

    fn op_strategy() -> impl Strategy<Value = PredicateOp> {
        (0..6u8, -5i64..60, 1i64..30).prop_map(|(k, v, w)| match k {
            0 => PredicateOp::Eq(Value::Int(v)),
            1 => PredicateOp::Lt(Value::Int(v)),
            2 => PredicateOp::Le(Value::Int(v)),
            3 => PredicateOp::Gt(Value::Int(v)),
            4 => PredicateOp::Ge(Value::Int(v)),
            _ => PredicateOp::Range {
                lo: Value::Int(v),
                hi: Value::Int(v + w),
            },
        })
    }

    proptest! {
        #[test]
        fn flatten_is_bijective(a in 1usize..6, b in 1usize..6, c in 1usize..6) {
            let sizes = [a as i64, b as i64, c as i64];
            let attributes = (0..3).map(|d| Attribute { name: format!("d{d}"), kind: ValueKind::Integer }).collect();
            let qa = sizes.iter().enumerate().map(|(d, &k)| QueryAttribute {
                name: format!("d{d}"),
                segments: SegmentSpec::new(ints((1..k).map(|j| j * 10)), false).unwrap(),
            }).collect();
            let schema = TableSchema::new("t", attributes, qa).unwrap();
            for flat in 0..schema.cell_count() {
                prop_assert_eq!(schema.flatten(&schema.unflatten(flat)), flat);
            }
        }

        #[test]
        fn no_false_negatives_at_cell_level(
            ops in proptest::collection::vec((0usize..3, op_strategy()), 0..4),
            recs in proptest::collection::vec(proptest::collection::vec(-5i64..60, 3), 1..60),
        ) {
            let schema = grid(3, 5);
            let preds: Vec<Predicate> = ops
                .into_iter()
                .filter_map(|(d, op)| Predicate::new(format!("d{d}"), op).ok())
                .collect();
            let cells: HashSet<usize> = cells_matching(&schema, &preds)
                .unwrap()
                .into_iter()
                .map(|c| c.flat)
                .collect();
            for r in recs {
                let rec = ints(r);
                let sat = preds.iter().all(|p| {
                    let col = schema.column(&p.attribute).unwrap();
                    p.op.matches(&rec[col])
                });
                if sat {
                    prop_assert!(cells.contains(&schema.locate_flat(&rec).unwrap()));
                }
            }
        }

        #[test]
        fn segments_partition_the_domain(v in any::<i64>()) {
            let s = spec(&[-100, 0, 7, 1_000]);
            let seg = s.locate(&Value::Int(v)).unwrap();
            let lo = if seg == 0 { i64::MIN } else { match s.boundaries[seg - 1] { Value::Int(b) => b, _ => unreachable!() } };
            prop_assert!(v >= lo);
            if seg < s.boundaries.len() {
                if let Value::Int(hi) = s.boundaries[seg] { prop_assert!(v < hi); }
            }
        }

        #[test]
        fn uniform_sample_populations_balanced(n in 20usize..2000, k in 1usize..15) {
            prop_assume!(n >= k);
            let values = ints(0..n as i64);
            let s = build_segments(&values, k).unwrap();
            let mut pops = vec![0usize; s.len()];
            for v in &values {
                pops[s.locate(v).unwrap()] += 1;
            }
            let max = *pops.iter().max().unwrap();
            let min = *pops.iter().min().unwrap();
            prop_assert!(max - min <= 1, "populations {:?}", pops);
        }
    }
}
