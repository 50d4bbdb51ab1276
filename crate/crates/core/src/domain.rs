//! Core data types shared by every stage: labeled examples, datasets,
//! prompt templates, and demonstration permutations.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense example identifier, assigned in ingestion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExampleId(pub usize);

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index into a task's label space.
pub type LabelId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: ExampleId,
    pub text: String,
    pub label: LabelId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// Guess the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

/// A raw `(text, label name)` pair before label resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    label_space: Vec<String>,
    source_path: String,
}

impl Dataset {
    /// Builds a dataset from records, assigning ids `0..N` in record order.
    pub fn from_records(
        records: Vec<Record>,
        label_space: Vec<String>,
        source_path: impl Into<String>,
    ) -> Result<Self> {
        let source_path = source_path.into();
        if label_space.is_empty() {
            return Err(Error::Config("label space is empty".into()));
        }
        if records.is_empty() {
            return Err(Error::EmptyDataset(source_path));
        }
        let examples =
            records
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    let label = label_space.iter().position(|l| *l == r.label).ok_or(
                        Error::UnknownLabel {
                            record: i,
                            value: r.label,
                        },
                    )?;
                    Ok(Example {
                        id: ExampleId(i),
                        text: r.text,
                        label,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            examples,
            label_space,
            source_path,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn label_space(&self) -> &[String] {
        &self.label_space
    }

    pub fn num_labels(&self) -> usize {
        self.label_space.len()
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: ExampleId) -> Result<&Example> {
        self.examples.get(id.0).ok_or(Error::Lookup(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ExampleId> + '_ {
        self.examples.iter().map(|e| e.id)
    }

    pub fn resolve(&self, ids: &[ExampleId]) -> Result<Vec<&Example>> {
        ids.iter().map(|&id| self.get(id)).collect()
    }

    /// Number of examples carrying each label.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_labels()];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }
}

/// Reads a labeled dataset from a JSONL or CSV file.
///
/// Every record must carry a string `text` and a string `label`, and the
/// label must be one of `label_space`. Ids follow record order.
pub fn ingest_dataset(path: &Path, format: DataFormat, label_space: &[String]) -> Result<Dataset> {
    let raw = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let records = match format {
        DataFormat::Jsonl => parse_jsonl(&raw)?,
        DataFormat::Csv => parse_csv(&raw)?,
    };
    Dataset::from_records(records, label_space.to_vec(), path.display().to_string())
}

fn parse_jsonl(raw: &str) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let record = records.len();
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Ingest {
            record,
            message: format!("malformed JSON: {e}"),
        })?;
        let field = |name: &str| -> Result<String> {
            match value.get(name) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(Error::Ingest {
                    record,
                    message: format!("field `{name}` is not a string"),
                }),
                None => Err(Error::Ingest {
                    record,
                    message: format!("missing field `{name}`"),
                }),
            }
        };
        records.push(Record {
            text: field("text")?,
            label: field("label")?,
        });
    }
    Ok(records)
}

fn parse_csv(raw: &str) -> Result<Vec<Record>> {
    let mut reader = csv::Reader::from_reader(raw.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest {
            record: 0,
            message: format!("unreadable CSV header: {e}"),
        })?
        .clone();
    for name in ["text", "label"] {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::Ingest {
                record: 0,
                message: format!("missing field `{name}` in CSV header"),
            });
        }
    }
    reader
        .deserialize::<Record>()
        .enumerate()
        .map(|(record, r)| {
            r.map_err(|e| Error::Ingest {
                record,
                message: e.to_string(),
            })
        })
        .collect()
}

pub const INPUT_SLOT: &str = "[INPUT]";
pub const VERBALIZER_SLOT: &str = "[VERBALIZER]";

/// On-disk template description: a pattern, a label → verbalizer map and
/// the separator placed between rendered examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateConfig {
    #[serde(default = "default_template_id")]
    pub id: String,
    pub pattern: String,
    pub verbalizers: BTreeMap<String, String>,
    #[serde(default = "default_separator")]
    pub separator: String,
}

fn default_template_id() -> String {
    "default".into()
}

fn default_separator() -> String {
    "\n".into()
}

/// A validated prompt template with verbalizers aligned to the label space.
///
/// A demonstration renders as `head + " " + verbalizer + tail`, where `head`
/// is the pattern up to the verbalizer slot with trailing whitespace removed.
/// The test input renders as `head` alone, so the scored completion is always
/// `" " + verbalizer`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    id: String,
    before_input: String,
    between: String,
    after_verbalizer: String,
    verbalizers: Vec<String>,
    separator: String,
}

impl PromptTemplate {
    pub fn new(
        id: impl Into<String>,
        pattern: &str,
        verbalizers: Vec<String>,
        separator: impl Into<String>,
    ) -> Result<Self> {
        if pattern.matches(INPUT_SLOT).count() != 1 {
            return Err(Error::Template(format!(
                "pattern must contain exactly one {INPUT_SLOT}"
            )));
        }
        if pattern.matches(VERBALIZER_SLOT).count() != 1 {
            return Err(Error::Template(format!(
                "pattern must contain exactly one {VERBALIZER_SLOT}"
            )));
        }
        let input_at = pattern.find(INPUT_SLOT).unwrap();
        let verb_at = pattern.find(VERBALIZER_SLOT).unwrap();
        if verb_at < input_at {
            return Err(Error::Template(format!(
                "{VERBALIZER_SLOT} must follow {INPUT_SLOT}"
            )));
        }
        if verbalizers.is_empty() {
            return Err(Error::Template("no verbalizers".into()));
        }
        let mut seen = HashSet::new();
        for v in &verbalizers {
            if v.trim().is_empty() {
                return Err(Error::Template("empty verbalizer".into()));
            }
            if !seen.insert(v.as_str()) {
                return Err(Error::Template(format!("duplicate verbalizer {v:?}")));
            }
        }
        Ok(PromptTemplate {
            id: id.into(),
            before_input: pattern[..input_at].to_string(),
            between: pattern[input_at + INPUT_SLOT.len()..verb_at].to_string(),
            after_verbalizer: pattern[verb_at + VERBALIZER_SLOT.len()..].to_string(),
            verbalizers,
            separator: separator.into(),
        })
    }

    /// Aligns a [`TemplateConfig`] with `label_space`.
    pub fn from_config(config: &TemplateConfig, label_space: &[String]) -> Result<Self> {
        if config.verbalizers.len() != label_space.len() {
            return Err(Error::Template(format!(
                "{} verbalizers for {} labels",
                config.verbalizers.len(),
                label_space.len()
            )));
        }
        let verbalizers =
            label_space
                .iter()
                .map(|label| {
                    config.verbalizers.get(label).cloned().ok_or_else(|| {
                        Error::Template(format!("no verbalizer for label {label:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
        Self::new(&config.id, &config.pattern, verbalizers, &config.separator)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pattern(&self) -> String {
        format!(
            "{}{INPUT_SLOT}{}{VERBALIZER_SLOT}{}",
            self.before_input, self.between, self.after_verbalizer
        )
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }

    pub fn verbalizers(&self) -> &[String] {
        &self.verbalizers
    }

    pub fn num_labels(&self) -> usize {
        self.verbalizers.len()
    }

    /// Completion strings scored for each label, in label order.
    pub fn completions(&self) -> Vec<String> {
        self.verbalizers.iter().map(|v| format!(" {v}")).collect()
    }

    fn head(&self, input: &str) -> String {
        let mut s =
            String::with_capacity(self.before_input.len() + input.len() + self.between.len());
        s.push_str(&self.before_input);
        s.push_str(input);
        s.push_str(&self.between);
        s.truncate(s.trim_end().len());
        s
    }

    /// Renders one demonstration with its gold verbalizer.
    pub fn render_demo(&self, example: &Example) -> Result<String> {
        let verbalizer = self
            .verbalizers
            .get(example.label)
            .ok_or_else(|| Error::Template(format!("no verbalizer for label {}", example.label)))?;
        Ok(format!(
            "{} {}{}",
            self.head(&example.text),
            verbalizer,
            self.after_verbalizer
        ))
    }

    /// Renders the query part: everything up to the verbalizer slot.
    pub fn render_query(&self, input: &str) -> String {
        self.head(input)
    }

    /// Recovers the input text of a rendered demonstration.
    pub fn demo_input<'a>(&self, segment: &'a str) -> Option<&'a str> {
        let rest = segment
            .strip_prefix(self.before_input.as_str())?
            .strip_suffix(self.after_verbalizer.as_str())?;
        let head = self
            .verbalizers
            .iter()
            .find_map(|v| rest.strip_suffix(v.as_str())?.strip_suffix(' '))?;
        head.strip_suffix(self.between.trim_end())
    }

    /// Recovers the input text of a rendered query (open verbalizer slot).
    pub fn query_input<'a>(&self, segment: &'a str) -> Option<&'a str> {
        segment
            .strip_prefix(self.before_input.as_str())?
            .strip_suffix(self.between.trim_end())
    }
}

/// Concatenates demonstrations (gold verbalizers filled in) followed by the
/// optional test query whose verbalizer slot is left open.
pub fn render_context(
    template: &PromptTemplate,
    demos: &[&Example],
    test_input: Option<&str>,
) -> Result<String> {
    let mut parts = demos
        .iter()
        .map(|d| template.render_demo(d))
        .collect::<Result<Vec<_>>>()?;
    if let Some(input) = test_input {
        parts.push(template.render_query(input));
    }
    Ok(parts.join(template.separator()))
}

/// Ordered demonstration ids; never contains duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Permutation(Vec<ExampleId>);

impl Permutation {
    pub fn new(ids: Vec<ExampleId>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Permutation(format!("duplicate id {dup}")));
        }
        Ok(Permutation(ids))
    }

    pub fn ids(&self) -> &[ExampleId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: ExampleId) -> bool {
        self.0.contains(&id)
    }

    pub fn resolve<'a>(&self, dataset: &'a Dataset) -> Result<Vec<&'a Example>> {
        dataset.resolve(&self.0)
    }

    /// Checks that every label appears exactly `len / num_labels` times.
    pub fn check_balanced(&self, dataset: &Dataset) -> Result<()> {
        let k = dataset.num_labels();
        if !self.0.len().is_multiple_of(k) {
            return Err(Error::Permutation(format!(
                "{} demonstrations cannot be split evenly over {k} labels",
                self.0.len()
            )));
        }
        let mut counts = vec![0usize; k];
        for e in self.resolve(dataset)? {
            counts[e.label] += 1;
        }
        let quota = self.0.len() / k;
        if counts.iter().any(|&c| c != quota) {
            return Err(Error::Permutation(format!(
                "label counts {counts:?} differ from quota {quota}"
            )));
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for Permutation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ids = Vec::<ExampleId>::deserialize(d)?;
        Permutation::new(ids).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{id}")?;
        }
        write!(f, "]")
    }
}
