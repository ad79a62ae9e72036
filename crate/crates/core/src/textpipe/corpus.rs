use std::path::Path;

use super::{preprocess, Label, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledRecord {
    pub text: String,
    pub label: Label,
}

/// Token-id streams with optional per-stream labels.
#[derive(Clone, Debug, PartialEq)]
pub struct NumericalizedCorpus {
    pub streams: Vec<Vec<u32>>,
    pub labels: Option<Vec<Label>>,
    pub split: SplitTag,
}

impl NumericalizedCorpus {
    pub fn unlabeled(streams: Vec<Vec<u32>>, split: SplitTag) -> Self {
        Self {
            streams,
            labels: None,
            split,
        }
    }

    pub fn labeled(streams: Vec<Vec<u32>>, labels: Vec<Label>, split: SplitTag) -> Result<Self> {
        if streams.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} streams but {} labels",
                streams.len(),
                labels.len()
            )));
        }
        Ok(Self {
            streams,
            labels: Some(labels),
            split,
        })
    }

    pub fn from_texts<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        vocab: &Vocabulary,
        split: SplitTag,
    ) -> Self {
        let streams = texts
            .into_iter()
            .map(|t| vocab.numericalize(&preprocess(t)))
            .collect();
        Self::unlabeled(streams, split)
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.streams.iter().map(Vec::len).sum()
    }

    /// Every id is below `vocab_size`.
    pub fn check_ids(&self, vocab_size: usize) -> Result<()> {
        for (i, s) in self.streams.iter().enumerate() {
            if let Some(bad) = s.iter().find(|&&id| id as usize >= vocab_size) {
                return Err(Error::invalid(format!(
                    "stream {i}: id {bad} outside vocabulary of {vocab_size}"
                )));
            }
        }
        Ok(())
    }
}

pub fn numericalize_labeled(
    records: &[LabeledRecord],
    vocab: &Vocabulary,
    split: SplitTag,
) -> NumericalizedCorpus {
    NumericalizedCorpus {
        streams: records
            .iter()
            .map(|r| vocab.numericalize(&preprocess(&r.text)))
            .collect(),
        labels: Some(records.iter().map(|r| r.label).collect()),
        split,
    }
}

/// Reads a UTF-8 CSV with header `text,label` and labels `0`/`1`.
pub fn load_labeled_csv(path: &Path) -> Result<Vec<LabeledRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_labeled_csv(file, path)
}

pub(crate) fn read_labeled_csv<R: std::io::Read>(reader: R, path: &Path) -> Result<Vec<LabeledRecord>> {
    let csv_err = |line: u64, reason: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "text" || &headers[1] != "label" {
        return Err(csv_err(
            1,
            format!("expected header `text,label`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            csv_err(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let label = match &row[1] {
            "0" => Label::NotHate,
            "1" => Label::Hate,
            other => return Err(csv_err(line, format!("label must be 0 or 1, got {other:?}"))),
        };
        records.push(LabeledRecord {
            text: row[0].to_string(),
            label,
        });
    }
    Ok(records)
}

/// One document per line; blank lines are skipped.
pub fn load_corpus_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

/// Seeded disjoint partition of `0..n` with sizes following cumulative rounding.
pub fn split_indices(n: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() {
        return Err(Error::invalid("no split fractions given"));
    }
    if let Some(f) = fractions.iter().find(|&&f| !(f > 0.0)) {
        return Err(Error::invalid(format!("split fraction {f} must be positive")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {total}, not 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let mut parts = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut start = 0;
    for (i, f) in fractions.iter().enumerate() {
        cum += f;
        let end = if i + 1 == fractions.len() {
            n
        } else {
            ((cum * n as f64).round() as usize).min(n)
        };
        parts.push(order[start..end].to_vec());
        start = end;
    }
    Ok(parts)
}

pub fn split_corpus<R: Clone>(items: &[R], fractions: &[f64], seed: u64) -> Result<Vec<Vec<R>>> {
    Ok(split_indices(items.len(), fractions, seed)?
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| items[i].clone()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vec<LabeledRecord>> {
        read_labeled_csv(s.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn two_valid_rows() {
        let r = parse("text,label\nhello po,0\nbwisit ka,1\n").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].label, Label::Hate);
    }

    #[test]
    fn bad_label_names_line() {
        let err = parse("text,label\nok,0\nbad,2\n").unwrap_err();
        match err {
            Error::Csv { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn malformed_row_names_line() {
        let err = parse("text,label\nok,0\nextra,1,x\n").unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");
        assert!(parse("txt,lbl\na,0\n").is_err());
    }

    #[test]
    fn quoted_comma_is_one_field() {
        let r = parse("text,label\n\"oo, tama \"\"ka\"\"\",0\n").unwrap();
        assert_eq!(r[0].text, "oo, tama \"ka\"");
    }

    #[test]
    fn ninety_ten() {
        let items: Vec<usize> = (0..100).collect();
        let parts = split_corpus(&items, &[0.9, 0.1], 1).unwrap();
        assert_eq!((parts[0].len(), parts[1].len()), (90, 10));
        let mut all: Vec<usize> = parts.concat();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(parts, split_corpus(&items, &[0.9, 0.1], 1).unwrap());
    }

    #[test]
    fn identity_partition_and_errors() {
        let items: Vec<usize> = (0..10).collect();
        let parts = split_corpus(&items, &[1.0], 3).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].len(), 10);
        assert!(split_corpus(&items, &[1.0, 0.0], 3).is_err());
        assert!(split_corpus(&items, &[0.5, 0.4], 3).is_err());
    }

    #[test]
    fn labeled_checks_lengths() {
        assert!(NumericalizedCorpus::labeled(vec![vec![1]], vec![], SplitTag::Train).is_err());
        let c = NumericalizedCorpus::unlabeled(vec![vec![1, 9]], SplitTag::Valid);
        assert!(c.check_ids(9).is_err());
        assert!(c.check_ids(10).is_ok());
    }
}
