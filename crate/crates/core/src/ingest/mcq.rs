//! Tabular MCQ ingest.
//!
//! Input format: UTF-8, tab-separated, header row required. Columns:
//! `id`, `question`, `option_1` .. `option_M`, `answer_label`, `image_path`.
//! Rows whose non-empty option count differs from the requested M are
//! excluded and counted in the skip report rather than treated as errors.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    position_label, ModalityAtom, OptionSlot, ProbeItem, ProbeMode, SlotContent,
};

/// Counts of rows excluded by the option-count filter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub total_rows: usize,
    pub emitted: usize,
    /// Rows whose non-empty option count was not exactly M.
    pub skipped_option_count: usize,
}

/// Result of an MCQ ingest: the probes plus the skip accounting.
#[derive(Debug, Clone)]
pub struct McqIngest {
    pub probes: Vec<ProbeItem>,
    pub report: SkipReport,
}

/// Read a tabular MCQ dataset, keeping only rows with exactly `m` non-empty
/// options.
///
/// `correct_index` comes from the answer column; option labels are assigned
/// by column position. Image paths resolve relative to the dataset file's
/// directory.
pub fn ingest_mcq(path: &Path, m: usize) -> Result<McqIngest> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "option-count filter must be >= 2, got {m}"
        )));
    }
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("id").ok_or_else(|| malformed(path, 1, "missing column id".into()))?;
    let question_col =
        col("question").ok_or_else(|| malformed(path, 1, "missing column question".into()))?;
    let answer_col = col("answer_label")
        .ok_or_else(|| malformed(path, 1, "missing column answer_label".into()))?;
    let image_col = col("image_path")
        .ok_or_else(|| malformed(path, 1, "missing column image_path".into()))?;
    let mut option_cols = Vec::new();
    for i in 1.. {
        match col(&format!("option_{i}")) {
            Some(c) => option_cols.push(c),
            None => break,
        }
    }
    if option_cols.len() < m {
        return Err(malformed(
            path,
            1,
            format!("header has {} option columns, need {m}", option_cols.len()),
        ));
    }

    let mut probes = Vec::new();
    let mut report = SkipReport::default();
    let mut seen_ids = HashSet::new();

    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record = record.map_err(|e| malformed(path, row, e.to_string()))?;
        report.total_rows += 1;

        let field = |c: usize| record.get(c).map(str::trim).unwrap_or("");
        let id = field(id_col);
        if id.is_empty() {
            return Err(malformed(path, row, "empty id".into()));
        }
        let question = field(question_col);
        if question.is_empty() {
            return Err(malformed(path, row, "empty question".into()));
        }

        let options: Vec<&str> = option_cols
            .iter()
            .map(|&c| field(c))
            .filter(|s| !s.is_empty())
            .collect();
        if options.len() != m {
            report.skipped_option_count += 1;
            continue;
        }

        if !seen_ids.insert(id.to_string()) {
            return Err(Error::DuplicateId { id: id.to_string() });
        }

        let answer = field(answer_col);
        let correct_index = (1..=m)
            .find(|&k| position_label(k).eq_ignore_ascii_case(answer))
            .ok_or_else(|| {
                malformed(path, row, format!("answer label {answer:?} not in 1..={m}"))
            })?;

        let image_raw = field(image_col);
        if image_raw.is_empty() {
            return Err(malformed(path, row, "empty image_path".into()));
        }
        let anchor = ModalityAtom::image_ref(&base, image_raw, None)?;

        let slots: Vec<OptionSlot> = options
            .iter()
            .enumerate()
            .map(|(j, text)| OptionSlot {
                label: position_label(j + 1),
                content: SlotContent::Single(ModalityAtom::text(*text)),
            })
            .collect();

        let item = ProbeItem {
            id: id.to_string(),
            mode: ProbeMode::TextOnly,
            stem: question.to_string(),
            anchor: Some(anchor),
            slots,
            correct_index,
            rag_images: None,
            metadata: vec![("source".into(), path.display().to_string())],
        };
        item.validate()?;
        probes.push(item);
        report.emitted += 1;
    }

    Ok(McqIngest { probes, report })
}

fn malformed(path: &Path, row: usize, reason: String) -> Error {
    Error::MalformedRow {
        path: path.to_path_buf(),
        row,
        reason,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_dataset(dir: &Path, rows: &[&str]) -> std::path::PathBuf {
        let img = dir.join("img.jpg");
        fs::write(&img, b"fake jpeg bytes").unwrap();
        let path = dir.join("probes.tsv");
        let mut text = String::from(
            "id\tquestion\toption_1\toption_2\toption_3\toption_4\tanswer_label\timage_path\n",
        );
        for row in rows {
            text.push_str(row);
            text.push('\n');
        }
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn answer_letter_maps_to_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(
            dir.path(),
            &["q1\tWhat?\tw\tx\ty\tz\tC\timg.jpg"],
        );
        let out = ingest_mcq(&path, 4).unwrap();
        assert_eq!(out.probes.len(), 1);
        assert_eq!(out.probes[0].correct_index, 3);
        assert_eq!(out.probes[0].correct_label(), "C");
    }

    #[test]
    fn three_option_row_is_skipped_under_m4() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(
            dir.path(),
            &[
                "q1\tWhat?\tw\tx\ty\t\tA\timg.jpg",
                "q2\tWhich?\tw\tx\ty\tz\tB\timg.jpg",
            ],
        );
        let out = ingest_mcq(&path, 4).unwrap();
        assert_eq!(out.probes.len(), 1);
        assert_eq!(out.probes[0].id, "q2");
        assert_eq!(
            out.report,
            SkipReport {
                total_rows: 2,
                emitted: 1,
                skipped_option_count: 1
            }
        );
    }

    #[test]
    fn duplicate_id_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(
            dir.path(),
            &[
                "q1\tWhat?\tw\tx\ty\tz\tA\timg.jpg",
                "q1\tWhich?\ta\tb\tc\td\tB\timg.jpg",
            ],
        );
        match ingest_mcq(&path, 4) {
            Err(Error::DuplicateId { id }) => assert_eq!(id, "q1"),
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_answer_carries_row_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(
            dir.path(),
            &["q1\tWhat?\tw\tx\ty\tz\tE\timg.jpg"],
        );
        match ingest_mcq(&path, 4) {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected malformed row error, got {other:?}"),
        }
    }

    #[test]
    fn missing_image_is_a_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(
            dir.path(),
            &["q1\tWhat?\tw\tx\ty\tz\tA\tnope.jpg"],
        );
        match ingest_mcq(&path, 4) {
            Err(Error::UnresolvablePath { path: p, .. }) => assert_eq!(p, "nope.jpg"),
            other => panic!("expected unresolvable path error, got {other:?}"),
        }
    }

    #[test]
    fn large_file_scale() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<String> = (0..4200)
            .map(|i| format!("q{i}\tWhat is {i}?\tw{i}\tx{i}\ty{i}\tz{i}\tD\timg.jpg"))
            .collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let path = write_dataset(dir.path(), &refs);
        let out = ingest_mcq(&path, 4).unwrap();
        assert!(out.probes.len() >= 4000);
        assert_eq!(out.probes.len(), 4200);
    }
}
