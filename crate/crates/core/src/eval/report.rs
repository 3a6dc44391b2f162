use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::{average_confusion, ConfusionMatrix, Scores};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoldScore {
    pub ua: f64,
    pub wa: f64,
}

/// Metrics of one evaluation or of a whole cross-validation run.
///
/// Text form, one `key = value` per line, then the row-normalized matrix and
/// the raw counts as whitespace-separated rows:
///
/// ```text
/// ua = 0.6
/// wa = 0.58
/// classes = neutral,happy,angry,sad
/// folds = 2
/// fold.0.ua = 0.62
/// fold.0.wa = 0.6
/// ...
/// [confusion]
/// 0.5 0.25 0.25 0
/// ...
/// [counts]
/// 2 1 1 0
/// ...
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub ua: f64,
    pub wa: f64,
    pub confusion: ConfusionMatrix,
    pub folds: Vec<FoldScore>,
}

impl EvalReport {
    pub fn single(scores: Scores, class_names: Vec<String>) -> Self {
        Self {
            class_names,
            ua: scores.ua,
            wa: scores.wa,
            confusion: scores.confusion,
            folds: Vec::new(),
        }
    }

    /// Mean UA and WA over folds with the averaged normalized confusion.
    pub fn from_folds(folds: &[Scores], class_names: Vec<String>) -> Result<Self> {
        let confusions: Vec<ConfusionMatrix> = folds.iter().map(|s| s.confusion.clone()).collect();
        let confusion = average_confusion(&confusions)?;
        let n = folds.len() as f64;
        Ok(Self {
            class_names,
            ua: folds.iter().map(|s| s.ua).sum::<f64>() / n,
            wa: folds.iter().map(|s| s.wa).sum::<f64>() / n,
            confusion,
            folds: folds
                .iter()
                .map(|s| FoldScore { ua: s.ua, wa: s.wa })
                .collect(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let n = self.confusion.n_classes();
        writeln!(out, "ua = {}", self.ua).unwrap();
        writeln!(out, "wa = {}", self.wa).unwrap();
        writeln!(out, "classes = {}", self.class_names.join(",")).unwrap();
        writeln!(out, "folds = {}", self.folds.len()).unwrap();
        for (k, f) in self.folds.iter().enumerate() {
            writeln!(out, "fold.{k}.ua = {}", f.ua).unwrap();
            writeln!(out, "fold.{k}.wa = {}", f.wa).unwrap();
        }
        out.push_str("[confusion]\n");
        for t in 0..n {
            let row: Vec<String> = self
                .confusion
                .normalized_row(t)
                .iter()
                .map(f64::to_string)
                .collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out.push_str("[counts]\n");
        for t in 0..n {
            let row: Vec<String> = (0..n)
                .map(|p| self.confusion.count(t, p).to_string())
                .collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }
}

/// Parsed form of [`EvalReport::to_text`]: key/value pairs and both matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedReport {
    pub values: Vec<(String, String)>,
    pub confusion: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
}

impl ParsedReport {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.values
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)
            .ok_or_else(|| Error::Container(format!("report lacks {key}")))?
            .parse()
            .map_err(|_| Error::Container(format!("report value {key} is not a number")))
    }

    pub fn parse(text: &str) -> Result<Self> {
        enum Section {
            Values,
            Confusion,
            Counts,
        }
        let mut section = Section::Values;
        let mut parsed = Self {
            values: Vec::new(),
            confusion: Vec::new(),
            counts: Vec::new(),
        };
        let bad = |line: &str| Error::Container(format!("bad report line {line:?}"));
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            match line {
                "[confusion]" => section = Section::Confusion,
                "[counts]" => section = Section::Counts,
                _ => match section {
                    Section::Values => {
                        let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
                        parsed
                            .values
                            .push((k.trim().to_string(), v.trim().to_string()));
                    }
                    Section::Confusion => parsed.confusion.push(
                        line.split_whitespace()
                            .map(|x| x.parse().map_err(|_| bad(line)))
                            .collect::<Result<_>>()?,
                    ),
                    Section::Counts => parsed.counts.push(
                        line.split_whitespace()
                            .map(|x| x.parse().map_err(|_| bad(line)))
                            .collect::<Result<_>>()?,
                    ),
                },
            }
        }
        Ok(parsed)
    }
}
