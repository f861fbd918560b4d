use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Class names in label order.
pub const CLASS_NAMES: [&str; 4] = ["happy", "angry", "sad", "neutral"];
pub const NUM_CLASSES: usize = CLASS_NAMES.len();

pub fn class_index(name: &str) -> Option<usize> {
    let name = name.trim();
    CLASS_NAMES.iter().position(|c| c.eq_ignore_ascii_case(name))
}

/// Utterance-level features with labels and speaker identities.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub speakers: Vec<String>,
    pub utterances: Vec<String>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, speakers: Vec<String>, utterances: Vec<String>) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || speakers.len() != n || utterances.len() != n {
            return Err(Error::Config(format!(
                "dataset columns disagree: {n} feature rows, {} labels, {} speakers, {} utterances",
                labels.len(),
                speakers.len(),
                utterances.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                len: NUM_CLASSES,
            });
        }
        Ok(Self {
            features,
            labels,
            speakers,
            utterances,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_names(&self) -> [&'static str; NUM_CLASSES] {
        CLASS_NAMES
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Distinct speakers in sorted order.
    pub fn speaker_set(&self) -> Vec<String> {
        let mut s: Vec<String> = self.speakers.clone();
        s.sort();
        s.dedup();
        s
    }

    /// Row indices grouped by speaker.
    pub fn rows_by_speaker(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.speakers.iter().enumerate() {
            map.entry(s.as_str()).or_default().push(i);
        }
        map
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            speakers: rows.iter().map(|&r| self.speakers[r].clone()).collect(),
            utterances: rows.iter().map(|&r| self.utterances[r].clone()).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(File::create(path)?);
        write!(w, "utterance_id,speaker_id,label")?;
        for j in 0..self.dim() {
            write!(w, ",f{j}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(
                w,
                "{},{},{}",
                self.utterances[i], self.speakers[i], CLASS_NAMES[self.labels[i]]
            )?;
            for v in self.features.row(i) {
                // shortest round-trip representation
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads `utterance_id,speaker_id,label,f0,...` rows.
pub fn load_features_csv(path: &Path) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let expected = ["utterance_id", "speaker_id", "label"];
    if header.len() < 4 || header.iter().take(3).ne(expected.iter().copied()) {
        return Err(parse_err(
            1,
            "header must start with utterance_id,speaker_id,label followed by feature columns".into(),
        ));
    }
    let dim = header.len() - 3;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut speakers = Vec::new();
    let mut utterances = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let label =
            class_index(&record[2]).ok_or_else(|| parse_err(line, format!("unknown label {:?}", &record[2])))?;
        for (j, field) in record.iter().skip(3).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("feature f{j}: {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("feature f{j} is not finite")));
            }
            data.push(v);
        }
        utterances.push(record[0].to_string());
        speakers.push(record[1].to_string());
        labels.push(label);
    }
    let n = labels.len();
    Dataset::new(Matrix::from_vec(n, dim, data)?, labels, speakers, utterances)
}
