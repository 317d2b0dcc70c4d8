//! Stance datasets: labels, instances, and the delimited-text loader.
//!
//! The default column and label-code mapping follows the VAST distribution
//! (`post`, `topic_str`, `label` with `0 = con`, `1 = pro`, `2 = neutral`).
//! Both are configurable through [`ColumnMap`] and [`LabelMap`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dataset file not found: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}: label code `{code}` is not in the label map")]
    UnknownLabel {
        path: PathBuf,
        row: usize,
        code: String,
    },
    #[error("{path}: row {row}: column `{column}` is empty")]
    EmptyField {
        path: PathBuf,
        row: usize,
        column: String,
    },
    #[error("{path}: row {row}: duplicate instance id `{id}`")]
    DuplicateId { path: PathBuf, row: usize, id: String },
    #[error("unknown split `{0}` (expected train, dev or test)")]
    UnknownSplit(String),
    #[error("unknown stance label `{0}`")]
    UnknownStance(String),
}

/// Gold or predicted stance toward a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StanceLabel {
    Positive,
    Negative,
    Neutral,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 3] = [Self::Positive, Self::Negative, Self::Neutral];

    pub fn index(self) -> usize {
        match self {
            Self::Positive => 0,
            Self::Negative => 1,
            Self::Neutral => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn verbalizer(self) -> &'static str {
        match self {
            Self::Positive => "positive",
            Self::Negative => "negative",
            Self::Neutral => "neutral",
        }
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.verbalizer())
    }
}

/// Accepts the verbalizers and VAST's native `pro`/`con` vocabulary.
impl FromStr for StanceLabel {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "positive" | "pro" => Ok(Self::Positive),
            "negative" | "con" => Ok(Self::Negative),
            "neutral" => Ok(Self::Neutral),
            other => Err(CorpusError::UnknownStance(other.to_string())),
        }
    }
}

/// Result of reading a label back out of generated text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoded {
    Label(StanceLabel),
    Invalid,
}

pub fn encode_label(label: StanceLabel) -> &'static str {
    label.verbalizer()
}

/// Lowercase and trim, then exact verbalizer match, then a unique substring
/// match. Anything else is `Invalid`.
pub fn decode_label(text: &str) -> Decoded {
    let normalized = text.trim().to_lowercase();
    if let Some(label) = StanceLabel::ALL
        .iter()
        .find(|l| l.verbalizer() == normalized)
    {
        return Decoded::Label(*label);
    }
    let mut hits = StanceLabel::ALL
        .iter()
        .filter(|l| normalized.contains(l.verbalizer()));
    match (hits.next(), hits.next()) {
        (Some(label), None) => Decoded::Label(*label),
        _ => Decoded::Invalid,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Dev => "dev",
            Self::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "dev" => Ok(Self::Dev),
            "test" => Ok(Self::Test),
            other => Err(CorpusError::UnknownSplit(other.to_string())),
        }
    }
}

/// One labeled example: a document, the target it is about, and the gold stance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub document: String,
    pub target: String,
    pub gold: StanceLabel,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub text: String,
    pub target: String,
    pub label: String,
    /// When unset, ids are synthesized as `<split>-<row>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            text: "post".into(),
            target: "topic_str".into(),
            label: "label".into(),
            id: None,
        }
    }
}

/// Maps raw label codes found in the file to stances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(pub BTreeMap<String, StanceLabel>);

impl Default for LabelMap {
    fn default() -> Self {
        Self(BTreeMap::from([
            ("0".to_string(), StanceLabel::Negative),
            ("1".to_string(), StanceLabel::Positive),
            ("2".to_string(), StanceLabel::Neutral),
        ]))
    }
}

impl LabelMap {
    pub fn get(&self, code: &str) -> Option<StanceLabel> {
        self.0.get(code.trim()).copied()
    }
}

pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Loads one split. Rows come back in file order, one instance per data row.
pub fn load_dataset(
    path: &Path,
    split: Split,
    columns: &ColumnMap,
    labels: &LabelMap,
) -> Result<Vec<Instance>, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let csv_err = |source| CorpusError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let text_col = column(&columns.text)?;
    let target_col = column(&columns.target)?;
    let label_col = column(&columns.label)?;
    let id_col = columns.id.as_deref().map(column).transpose()?;

    let mut instances = Vec::new();
    let mut seen = HashSet::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // 1-based data row, header excluded
        let row = idx + 1;
        let field = |col: usize, name: &str| -> Result<String, CorpusError> {
            let value = normalize_whitespace(record.get(col).unwrap_or(""));
            if value.is_empty() {
                return Err(CorpusError::EmptyField {
                    path: path.to_path_buf(),
                    row,
                    column: name.to_string(),
                });
            }
            Ok(value)
        };
        let document = field(text_col, &columns.text)?;
        let target = field(target_col, &columns.target)?;
        let code = record.get(label_col).unwrap_or("");
        let gold = labels.get(code).ok_or_else(|| CorpusError::UnknownLabel {
            path: path.to_path_buf(),
            row,
            code: code.to_string(),
        })?;
        let id = match id_col {
            Some(col) => field(col, columns.id.as_deref().unwrap_or_default())?,
            None => format!("{split}-{row:05}"),
        };
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                row,
                id,
            });
        }
        instances.push(Instance {
            id,
            document,
            target,
            gold,
            split,
        });
    }
    log::info!("loaded {} {split} rows from {}", instances.len(), path.display());
    Ok(instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn verbalizers() {
        assert_eq!(encode_label(StanceLabel::Positive), "positive");
        assert_eq!(decode_label("positive"), Decoded::Label(StanceLabel::Positive));
        assert_eq!(decode_label("  Negative "), Decoded::Label(StanceLabel::Negative));
        assert_eq!(decode_label("both positive and negative"), Decoded::Invalid);
        assert_eq!(decode_label("it is positive"), Decoded::Label(StanceLabel::Positive));
        assert_eq!(decode_label("stance unclear"), Decoded::Invalid);
        assert_eq!(decode_label(""), Decoded::Invalid);
    }

    #[test]
    fn vast_vocabulary() {
        assert_eq!("pro".parse::<StanceLabel>().unwrap(), StanceLabel::Positive);
        assert_eq!("CON".parse::<StanceLabel>().unwrap(), StanceLabel::Negative);
        assert!("maybe".parse::<StanceLabel>().is_err());
    }

    #[test]
    fn toy_file_maps_codes() {
        let f = write_csv(
            "post,topic_str,label\n\
             \"I love it, truly\",vaccines,1\n\
             hate it,gun control,0\n\
             \"meh  \n whatever\",Taxes,2\n",
        );
        let got = load_dataset(f.path(), Split::Train, &ColumnMap::default(), &LabelMap::default())
            .unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].gold, StanceLabel::Positive);
        assert_eq!(got[1].gold, StanceLabel::Negative);
        assert_eq!(got[2].gold, StanceLabel::Neutral);
        assert_eq!(got[0].document, "I love it, truly");
        assert_eq!(got[2].document, "meh whatever");
        assert_eq!(got[0].id, "train-00001");
        assert_eq!(got[2].split, Split::Train);
    }

    #[test]
    fn empty_file_with_header() {
        let f = write_csv("post,topic_str,label\n");
        let got = load_dataset(f.path(), Split::Dev, &ColumnMap::default(), &LabelMap::default())
            .unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn missing_file() {
        let err = load_dataset(
            Path::new("/nonexistent/vast.csv"),
            Split::Test,
            &ColumnMap::default(),
            &LabelMap::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::MissingFile(_)));
    }

    #[test]
    fn missing_column() {
        let f = write_csv("text,topic_str,label\nx,y,1\n");
        let err = load_dataset(f.path(), Split::Test, &ColumnMap::default(), &LabelMap::default())
            .unwrap_err();
        assert!(matches!(err, CorpusError::MissingColumn { ref column, .. } if column == "post"));
    }

    #[test]
    fn unknown_label_names_row() {
        let f = write_csv("post,topic_str,label\na,b,1\nc,d,7\n");
        let err = load_dataset(f.path(), Split::Test, &ColumnMap::default(), &LabelMap::default())
            .unwrap_err();
        assert!(matches!(err, CorpusError::UnknownLabel { row: 2, ref code, .. } if code == "7"));
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn empty_target_rejected() {
        let f = write_csv("post,topic_str,label\na,  ,1\n");
        let err = load_dataset(f.path(), Split::Test, &ColumnMap::default(), &LabelMap::default())
            .unwrap_err();
        assert!(matches!(err, CorpusError::EmptyField { row: 1, .. }));
    }

    #[test]
    fn configured_id_column_must_be_unique() {
        let columns = ColumnMap {
            id: Some("new_id".into()),
            ..ColumnMap::default()
        };
        let f = write_csv("post,topic_str,label,new_id\na,b,1,x\nc,d,0,y\n");
        let got = load_dataset(f.path(), Split::Test, &columns, &LabelMap::default()).unwrap();
        assert_eq!(got[1].id, "y");

        let f = write_csv("post,topic_str,label,new_id\na,b,1,x\nc,d,0,x\n");
        let err = load_dataset(f.path(), Split::Test, &columns, &LabelMap::default()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { row: 2, .. }));
    }

    #[test]
    fn duplicate_rows_are_kept() {
        let f = write_csv("post,topic_str,label\na,b,1\na,b,1\n");
        let got = load_dataset(f.path(), Split::Test, &ColumnMap::default(), &LabelMap::default())
            .unwrap();
        assert_eq!(got.len(), 2);
        assert_ne!(got[0].id, got[1].id);
    }

    #[test]
    fn custom_label_map_accepts_names() {
        let labels = LabelMap(BTreeMap::from([
            ("pro".to_string(), StanceLabel::Positive),
            ("con".to_string(), StanceLabel::Negative),
            ("neutral".to_string(), StanceLabel::Neutral),
        ]));
        let f = write_csv("post,topic_str,label\na,b,con\n");
        let got = load_dataset(f.path(), Split::Test, &ColumnMap::default(), &labels).unwrap();
        assert_eq!(got[0].gold, StanceLabel::Negative);
    }

    proptest! {
        #[test]
        fn label_round_trip(i in 0usize..3) {
            let label = StanceLabel::from_index(i).unwrap();
            prop_assert_eq!(decode_label(encode_label(label)), Decoded::Label(label));
            prop_assert_eq!(label.index(), i);
        }

        #[test]
        fn load_is_deterministic_and_counts_rows(
            rows in prop::collection::vec(("[a-z]{1,8}( [a-z]{1,8}){0,3}", "[a-z]{1,6}", 0u8..3), 0..20)
        ) {
            let mut content = String::from("post,topic_str,label\n");
            for (doc, target, code) in &rows {
                content.push_str(&format!("\"{doc}\",{target},{code}\n"));
            }
            let f = write_csv(&content);
            let a = load_dataset(f.path(), Split::Train, &ColumnMap::default(), &LabelMap::default()).unwrap();
            let b = load_dataset(f.path(), Split::Train, &ColumnMap::default(), &LabelMap::default()).unwrap();
            prop_assert_eq!(a.len(), rows.len());
            prop_assert_eq!(a, b);
        }
    }
}
