//! Typed cohort model: feature schema, raw triplets, labels, and the
//! readers/writers for the schema JSON, triplet CSV and label CSV files.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, RecordError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Binary,
    Categorical,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Numeric => "numeric",
            FeatureKind::Binary => "binary",
            FeatureKind::Categorical => "categorical",
        }
    }

    fn parse(token: &str) -> Option<Self> {
        match token {
            "numeric" => Some(FeatureKind::Numeric),
            "binary" => Some(FeatureKind::Binary),
            "categorical" => Some(FeatureKind::Categorical),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub id: usize,
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

/// Validated, id-ordered list of features.
///
/// Non-categorical features become feature nodes in the graph, in ascending
/// id order; categorical features only feed the patient initializer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
    by_name: HashMap<String, usize>,
    graph_slot: Vec<Option<usize>>,
    cat_slot: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct SchemaDoc<F> {
    features: Vec<F>,
}

#[derive(Deserialize)]
struct RawFeature {
    id: i64,
    name: String,
    kind: String,
    #[serde(default)]
    categories: Option<Vec<String>>,
}

impl FeatureSchema {
    pub fn new(mut features: Vec<FeatureSpec>) -> Result<Self> {
        features.sort_by_key(|f| f.id);
        let mut by_name = HashMap::with_capacity(features.len());
        for (pos, f) in features.iter().enumerate() {
            if f.id != pos {
                return Err(if pos > 0 && features[pos - 1].id == f.id {
                    Error::Schema(format!("duplicate feature id {}", f.id))
                } else {
                    Error::Schema(format!("feature ids must be contiguous from 0; missing id {pos}"))
                });
            }
            if f.name.is_empty() {
                return Err(Error::Schema(format!("feature {} has an empty name", f.id)));
            }
            if by_name.insert(f.name.clone(), f.id).is_some() {
                return Err(Error::Schema(format!("duplicate feature name {:?}", f.name)));
            }
            match f.kind {
                FeatureKind::Categorical if f.categories.is_empty() => {
                    return Err(Error::Schema(format!(
                        "categorical feature {:?} has no categories",
                        f.name
                    )));
                }
                FeatureKind::Numeric | FeatureKind::Binary if !f.categories.is_empty() => {
                    return Err(Error::Schema(format!(
                        "{} feature {:?} must not declare categories",
                        f.kind.as_str(),
                        f.name
                    )));
                }
                _ => {}
            }
            let mut seen = HashSet::new();
            for c in &f.categories {
                if !seen.insert(c.as_str()) {
                    return Err(Error::Schema(format!(
                        "feature {:?} lists category {c:?} twice",
                        f.name
                    )));
                }
            }
        }

        let mut graph_slot = vec![None; features.len()];
        let mut cat_slot = vec![None; features.len()];
        let (mut g, mut c) = (0, 0);
        for f in &features {
            if f.kind == FeatureKind::Categorical {
                cat_slot[f.id] = Some(c);
                c += 1;
            } else {
                graph_slot[f.id] = Some(g);
                g += 1;
            }
        }

        Ok(Self {
            features,
            by_name,
            graph_slot,
            cat_slot,
        })
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&FeatureSpec> {
        self.features.get(id)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Position of a non-categorical feature among the graph's feature nodes.
    pub fn graph_slot(&self, id: usize) -> Option<usize> {
        self.graph_slot.get(id).copied().flatten()
    }

    /// Position of a categorical feature among the categorical features.
    pub fn categorical_slot(&self, id: usize) -> Option<usize> {
        self.cat_slot.get(id).copied().flatten()
    }

    /// Ids of non-categorical features, in graph-node order.
    pub fn graph_features(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features.iter().filter(|f| f.kind != FeatureKind::Categorical)
    }

    /// Categorical features, in slot order.
    pub fn categorical_features(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features.iter().filter(|f| f.kind == FeatureKind::Categorical)
    }

    pub fn n_graph_features(&self) -> usize {
        self.graph_features().count()
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical_features().count()
    }

    /// Category counts of the categorical features, in slot order.
    pub fn category_sizes(&self) -> Vec<usize> {
        self.categorical_features().map(|f| f.categories.len()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SchemaDoc {
            features: self.features.clone(),
        })
        .expect("schema serializes")
    }

    /// Hex SHA-256 of the canonical (compact) schema document.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(&SchemaDoc {
            features: self.features.clone(),
        })
        .expect("schema serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

pub fn parse_schema(text: &str) -> Result<FeatureSchema> {
    let doc: SchemaDoc<RawFeature> = serde_json::from_str(text)
        .map_err(|e| Error::Schema(format!("malformed schema document: {e}")))?;
    let mut features = Vec::with_capacity(doc.features.len());
    for raw in doc.features {
        let id = usize::try_from(raw.id)
            .map_err(|_| Error::Schema(format!("negative feature id {}", raw.id)))?;
        let kind = FeatureKind::parse(&raw.kind).ok_or_else(|| {
            Error::Schema(format!("unknown kind {:?} for feature {:?}", raw.kind, raw.name))
        })?;
        features.push(FeatureSpec {
            id,
            name: raw.name,
            kind,
            categories: raw.categories.unwrap_or_default(),
        });
    }
    FeatureSchema::new(features)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Number(f64),
    Binary(bool),
    /// Index into the feature's category list.
    Category(usize),
    Missing,
}

impl RawValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, RawValue::Missing)
    }

    fn compatible_with(&self, kind: FeatureKind) -> bool {
        matches!(
            (self, kind),
            (RawValue::Missing, _)
                | (RawValue::Number(_), FeatureKind::Numeric)
                | (RawValue::Binary(_), FeatureKind::Binary)
                | (RawValue::Category(_), FeatureKind::Categorical)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub patient_id: usize,
    pub feature_id: usize,
    pub raw_value: RawValue,
}

/// Immutable cohort: schema, typed triplets and optional per-patient labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    n_patients: usize,
    schema: FeatureSchema,
    triplets: Vec<Triplet>,
    labels: Option<Vec<u8>>,
}

impl Cohort {
    pub fn new(
        n_patients: usize,
        schema: FeatureSchema,
        triplets: Vec<Triplet>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(triplets.len());
        for t in &triplets {
            if t.patient_id >= n_patients {
                return Err(Error::Data(format!(
                    "patient id {} out of range (n_patients = {n_patients})",
                    t.patient_id
                )));
            }
            let spec = schema
                .get(t.feature_id)
                .ok_or_else(|| Error::Data(format!("unknown feature id {}", t.feature_id)))?;
            if !t.raw_value.compatible_with(spec.kind) {
                return Err(Error::Data(format!(
                    "value {:?} is not a {} value for feature {:?}",
                    t.raw_value,
                    spec.kind.as_str(),
                    spec.name
                )));
            }
            if let RawValue::Category(c) = t.raw_value {
                if c >= spec.categories.len() {
                    return Err(Error::Data(format!(
                        "category index {c} out of range for feature {:?}",
                        spec.name
                    )));
                }
            }
            if !seen.insert((t.patient_id, t.feature_id)) {
                return Err(Error::Data(format!(
                    "duplicate record for patient {} feature {:?}",
                    t.patient_id, spec.name
                )));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n_patients {
                return Err(Error::Data(format!(
                    "expected {n_patients} labels, got {}",
                    labels.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&y| y > 1) {
                return Err(Error::Data(format!("label {bad} is not 0 or 1")));
            }
        }
        Ok(Self {
            n_patients,
            schema,
            triplets,
            labels,
        })
    }

    pub fn n_patients(&self) -> usize {
        self.n_patients
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn with_labels(self, labels: Option<Vec<u8>>) -> Result<Self> {
        Cohort::new(self.n_patients, self.schema, self.triplets, labels)
    }
}

fn parse_value(field: &str, spec: &FeatureSpec) -> std::result::Result<RawValue, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(RawValue::Missing);
    }
    match spec.kind {
        FeatureKind::Numeric => match field.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(RawValue::Number(x)),
            _ => Err(format!(
                "value {field:?} is not a finite number (feature {:?} is numeric)",
                spec.name
            )),
        },
        FeatureKind::Binary => match field {
            "0" => Ok(RawValue::Binary(false)),
            "1" => Ok(RawValue::Binary(true)),
            _ => Err(format!(
                "value {field:?} is not 0 or 1 (feature {:?} is binary)",
                spec.name
            )),
        },
        FeatureKind::Categorical => spec
            .categories
            .iter()
            .position(|c| c == field)
            .map(RawValue::Category)
            .ok_or_else(|| {
                format!(
                    "value {field:?} is not a declared category of feature {:?}",
                    spec.name
                )
            }),
    }
}

/// Outcome of scanning a triplet stream record by record.
#[derive(Debug, Clone)]
pub struct TripletScan {
    pub triplets: Vec<Triplet>,
    pub errors: Vec<RecordError>,
    pub total: usize,
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Data(format!(
            "expected header {:?}, found {:?}",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

/// Scans every record, collecting accepted triplets and per-record errors.
/// `triplets.len() + errors.len() == total` always holds.
pub fn scan_triplets<R: Read>(
    reader: R,
    schema: &FeatureSchema,
    n_patients: usize,
) -> Result<TripletScan> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, &["patient_id", "feature_id", "value"])?;

    let mut triplets = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    let mut total = 0;
    for (row, record) in rdr.records().enumerate() {
        total += 1;
        let line = row + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(RecordError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match parse_triplet_record(&record, schema, n_patients, &mut seen) {
            Ok(t) => triplets.push(t),
            Err(message) => errors.push(RecordError { line, message }),
        }
    }
    Ok(TripletScan {
        triplets,
        errors,
        total,
    })
}

fn parse_triplet_record(
    record: &csv::StringRecord,
    schema: &FeatureSchema,
    n_patients: usize,
    seen: &mut HashSet<(usize, usize)>,
) -> std::result::Result<Triplet, String> {
    if record.len() != 3 {
        return Err(format!("expected 3 fields, found {}", record.len()));
    }
    let patient_id: usize = record[0]
        .parse()
        .map_err(|_| format!("patient id {:?} is not a non-negative integer", &record[0]))?;
    if patient_id >= n_patients {
        return Err(format!(
            "patient id {patient_id} out of range (n_patients = {n_patients})"
        ));
    }
    let feature_id = resolve_feature(&record[1], schema)
        .ok_or_else(|| format!("unknown feature {:?}", &record[1]))?;
    let spec = &schema.features()[feature_id];
    let raw_value = parse_value(&record[2], spec)?;
    if !seen.insert((patient_id, feature_id)) {
        return Err(format!(
            "duplicate record for patient {patient_id} feature {:?}",
            spec.name
        ));
    }
    Ok(Triplet {
        patient_id,
        feature_id,
        raw_value,
    })
}

/// Features may be referenced by name or by numeric id; names win.
fn resolve_feature(token: &str, schema: &FeatureSchema) -> Option<usize> {
    schema.id_of(token).or_else(|| {
        token
            .parse::<usize>()
            .ok()
            .filter(|&id| id < schema.len())
    })
}

/// Parses a triplet stream, rejecting the whole file if any record is invalid.
pub fn parse_triplets<R: Read>(
    reader: R,
    schema: &FeatureSchema,
    n_patients: usize,
) -> Result<Cohort> {
    if n_patients == 0 {
        return Err(Error::Data("cohort must contain at least one patient".into()));
    }
    let scan = scan_triplets(reader, schema, n_patients)?;
    if !scan.errors.is_empty() {
        return Err(Error::Records {
            accepted: scan.triplets.len(),
            total: scan.total,
            errors: scan.errors,
        });
    }
    Cohort::new(n_patients, schema.clone(), scan.triplets, None)
}

/// Parses a label file with exactly one 0/1 label per patient.
pub fn parse_labels<R: Read>(reader: R, n_patients: usize) -> Result<Vec<u8>> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, &["patient_id", "label"])?;
    let mut labels: Vec<Option<u8>> = vec![None; n_patients];
    let mut errors = Vec::new();
    let mut total = 0;
    for (row, record) in rdr.records().enumerate() {
        total += 1;
        let line = row + 2;
        let outcome = record
            .map_err(|e| e.to_string())
            .and_then(|r| parse_label_record(&r, n_patients));
        match outcome {
            Ok((pid, _)) if labels[pid].is_some() => errors.push(RecordError {
                line,
                message: format!("duplicate label for patient {pid}"),
            }),
            Ok((pid, y)) => labels[pid] = Some(y),
            Err(message) => errors.push(RecordError { line, message }),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Records {
            accepted: total - errors.len(),
            total,
            errors,
        });
    }
    labels
        .iter()
        .enumerate()
        .map(|(pid, y)| y.ok_or_else(|| Error::Data(format!("patient {pid} has no label"))))
        .collect()
}

fn parse_label_record(
    record: &csv::StringRecord,
    n_patients: usize,
) -> std::result::Result<(usize, u8), String> {
    if record.len() != 2 {
        return Err(format!("expected 2 fields, found {}", record.len()));
    }
    let pid: usize = record[0]
        .parse()
        .map_err(|_| format!("patient id {:?} is not a non-negative integer", &record[0]))?;
    if pid >= n_patients {
        return Err(format!("patient id {pid} out of range (n_patients = {n_patients})"));
    }
    match &record[1] {
        "0" => Ok((pid, 0)),
        "1" => Ok((pid, 1)),
        other => Err(format!("label {other:?} is not 0 or 1")),
    }
}

/// Largest patient id in a label or triplet file plus one (0 for an empty file).
pub fn count_patients<R: Read>(reader: R) -> Result<usize> {
    let mut rdr = csv_reader(reader);
    let mut n = 0;
    for record in rdr.records() {
        let record = record?;
        if let Some(Ok(pid)) = record.get(0).map(str::parse::<usize>) {
            n = n.max(pid + 1);
        }
    }
    Ok(n)
}

pub fn write_triplets<W: Write>(writer: W, cohort: &Cohort) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["patient_id", "feature_id", "value"])?;
    for t in cohort.triplets() {
        let spec = &cohort.schema().features()[t.feature_id];
        let value = match &t.raw_value {
            RawValue::Number(x) => x.to_string(),
            RawValue::Binary(b) => u8::from(*b).to_string(),
            RawValue::Category(c) => spec.categories[*c].clone(),
            RawValue::Missing => String::new(),
        };
        wtr.write_record([t.patient_id.to_string(), spec.name.clone(), value])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_labels<W: Write>(writer: W, labels: &[u8]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["patient_id", "label"])?;
    for (pid, y) in labels.iter().enumerate() {
        wtr.write_record([pid.to_string(), y.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureCoverage {
    pub feature_id: usize,
    pub name: String,
    pub observed: usize,
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_patients: usize,
    pub features: Vec<FeatureCoverage>,
    /// Features with no observed value in any patient.
    pub unobserved: Vec<usize>,
    pub prevalence: Option<f64>,
}

pub fn validate_cohort(cohort: &Cohort) -> ValidationReport {
    let n = cohort.n_patients();
    let mut observed = vec![0usize; cohort.schema().len()];
    for t in cohort.triplets() {
        if !t.raw_value.is_missing() {
            observed[t.feature_id] += 1;
        }
    }
    let features: Vec<FeatureCoverage> = cohort
        .schema()
        .features()
        .iter()
        .map(|f| FeatureCoverage {
            feature_id: f.id,
            name: f.name.clone(),
            observed: observed[f.id],
            missing_rate: if n == 0 {
                1.0
            } else {
                1.0 - observed[f.id] as f64 / n as f64
            },
        })
        .collect();
    let unobserved = features
        .iter()
        .filter(|f| f.observed == 0)
        .map(|f| f.feature_id)
        .collect();
    let prevalence = cohort
        .labels()
        .filter(|l| !l.is_empty())
        .map(|l| l.iter().map(|&y| f64::from(y)).sum::<f64>() / l.len() as f64);
    ValidationReport {
        n_patients: n,
        features,
        unobserved,
        prevalence,
    }
}
