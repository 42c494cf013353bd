//! In-KB micro-averaged precision/recall/F1 and QA accuracy.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::attribution::ErrorRow;
use super::{io_err, BenchmarkDataset, EvalError};
use crate::candidates::MentionKey;
use crate::kb::entity_names_match;
use crate::pipeline::RunStats;

/// How a prediction was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionSource {
    /// Parsed from a multiple-choice selection response.
    Selection,
    /// Parsed from a free-form entity-name response.
    FreeText,
    /// The response did not resolve to any option.
    Unparseable,
    /// The model call failed and the mention fell back to no answer.
    LlmFailure,
    /// Loaded from a predictions file of unknown origin.
    #[default]
    External,
}

/// One system answer: an entity id, or `None` for an abstention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub mention: MentionKey,
    pub decision: Option<String>,
    #[serde(default)]
    pub source: PredictionSource,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreOptions {
    /// When true an abstention counts as a false positive, which makes
    /// precision, recall, and F1 all collapse to accuracy.
    pub strict_abstention: bool,
    /// When true mentions without a prediction are scored as abstentions
    /// (with a warning) instead of failing.
    pub allow_missing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MentionOutcome {
    Correct,
    Wrong,
    Abstained,
}

/// Per-mention scoring detail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionRow {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub gold: String,
    pub predicted: Option<String>,
    pub outcome: MentionOutcome,
}

impl MentionRow {
    pub fn key(&self) -> MentionKey {
        MentionKey { doc_id: self.doc_id.clone(), start: self.start, end: self.end }
    }
}

/// Full evaluation output; serializes deterministically (rows sorted by
/// document id and span, no unordered maps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub variant: Option<String>,
    pub mentions: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub micro_f1: f64,
    pub candidate_recall: Option<f64>,
    pub strict_abstention: bool,
    /// True when not every mention was actually answered (budget stop or
    /// tolerated missing predictions).
    pub partial: bool,
    pub warnings: Vec<String>,
    pub rows: Vec<MentionRow>,
    pub errors: Vec<ErrorRow>,
    pub config: serde_json::Value,
    pub run_stats: Option<RunStats>,
}

fn ratio(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Scores predictions against the gold-labelled mentions of a dataset.
///
/// A prediction is a true positive when its entity matches the gold label
/// under name normalization, a false positive when it names any other
/// entity, and (only with `strict_abstention`) also when it abstains. False
/// negatives are the gold mentions not answered correctly, so micro recall
/// has the full gold count as its denominator.
pub fn score_ed(
    predictions: &[Prediction],
    dataset: &BenchmarkDataset,
    opts: &ScoreOptions,
) -> Result<EvalReport, EvalError> {
    let mut by_key: HashMap<&MentionKey, &Prediction> = HashMap::new();
    for p in predictions {
        if by_key.insert(&p.mention, p).is_some() {
            return Err(EvalError::DuplicatePrediction {
                doc_id: p.mention.doc_id.clone(),
                start: p.mention.start,
                end: p.mention.end,
            });
        }
    }

    let mut known: HashSet<MentionKey> = HashSet::new();
    let mut gold_mentions: Vec<(MentionKey, &str, &str)> = Vec::new();
    for (_, mention) in dataset.iter_mentions() {
        known.insert(mention.key());
        if let Some(gold) = mention.gold_entity.as_deref() {
            gold_mentions.push((mention.key(), gold, mention.surface.as_str()));
        }
    }
    for p in predictions {
        if !known.contains(&p.mention) {
            return Err(EvalError::UnknownMention {
                doc_id: p.mention.doc_id.clone(),
                start: p.mention.start,
                end: p.mention.end,
            });
        }
    }
    gold_mentions.sort_by(|a, b| a.0.cmp(&b.0));

    let mut warnings = Vec::new();
    let mut rows = Vec::with_capacity(gold_mentions.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut missing_tolerated = false;
    for (key, gold, surface) in &gold_mentions {
        let decision = match by_key.get(key) {
            Some(p) => p.decision.clone(),
            None if opts.allow_missing => {
                warnings.push(format!(
                    "no prediction for mention {} {}..{}; scored as an abstention",
                    key.doc_id, key.start, key.end
                ));
                missing_tolerated = true;
                None
            }
            None => {
                return Err(EvalError::MissingPrediction {
                    doc_id: key.doc_id.clone(),
                    start: key.start,
                    end: key.end,
                })
            }
        };
        let outcome = match decision.as_deref() {
            Some(predicted) if entity_names_match(predicted, gold) => {
                tp += 1;
                MentionOutcome::Correct
            }
            Some(_) => {
                fp += 1;
                MentionOutcome::Wrong
            }
            None => {
                if opts.strict_abstention {
                    fp += 1;
                }
                MentionOutcome::Abstained
            }
        };
        rows.push(MentionRow {
            doc_id: key.doc_id.clone(),
            start: key.start,
            end: key.end,
            surface: surface.to_string(),
            gold: gold.to_string(),
            predicted: decision,
            outcome,
        });
    }

    let fn_count = gold_mentions.len() - tp;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_count);
    Ok(EvalReport {
        dataset: dataset.name.clone(),
        variant: None,
        mentions: gold_mentions.len(),
        tp,
        fp,
        fn_count,
        precision,
        recall,
        micro_f1: f1(precision, recall),
        candidate_recall: None,
        strict_abstention: opts.strict_abstention,
        partial: missing_tolerated,
        warnings,
        rows,
        errors: Vec::new(),
        config: serde_json::Value::Null,
        run_stats: None,
    })
}

/// Multiple-choice accuracy over option letters, case-insensitively.
pub fn score_qa(predicted: &[char], gold: &[char]) -> Result<f64, EvalError> {
    if predicted.len() != gold.len() {
        return Err(EvalError::LengthMismatch { got: predicted.len(), expected: gold.len() });
    }
    if gold.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let correct = predicted
        .iter()
        .zip(gold)
        .filter(|(p, g)| p.to_ascii_uppercase() == g.to_ascii_uppercase())
        .count();
    Ok(correct as f64 / gold.len() as f64)
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionLine {
    doc_id: String,
    start: usize,
    end: usize,
    decision: Option<String>,
    #[serde(default)]
    source: PredictionSource,
}

/// Writes predictions as JSONL, sorted by document id and span so identical
/// prediction sets always produce identical bytes.
pub fn write_predictions(predictions: &[Prediction], path: &Path) -> Result<(), EvalError> {
    let mut sorted: Vec<&Prediction> = predictions.iter().collect();
    sorted.sort_by(|a, b| a.mention.cmp(&b.mention));
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    for p in sorted {
        let line = PredictionLine {
            doc_id: p.mention.doc_id.clone(),
            start: p.mention.start,
            end: p.mention.end,
            decision: p.decision.clone(),
            source: p.source,
        };
        let json = serde_json::to_string(&line).expect("prediction serializes");
        writeln!(writer, "{json}").map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut predictions = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PredictionLine = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        predictions.push(Prediction {
            mention: MentionKey { doc_id: parsed.doc_id, start: parsed.start, end: parsed.end },
            decision: parsed.decision,
            source: parsed.source,
        });
    }
    Ok(predictions)
}

/// Writes attributed errors as CSV for manual inspection.
pub fn write_errors_csv(errors: &[ErrorRow], path: &Path) -> Result<(), EvalError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    writer
        .write_record(["doc_id", "start", "end", "surface", "gold", "predicted", "source", "severity"])
        .map_err(|e| csv_err(path, e))?;
    for row in errors {
        writer
            .write_record([
                row.doc_id.as_str(),
                &row.start.to_string(),
                &row.end.to_string(),
                row.surface.as_str(),
                row.gold.as_str(),
                row.predicted.as_deref().unwrap_or(""),
                row.source.as_str(),
                row.severity.as_deref().unwrap_or(""),
            ])
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

fn csv_err(path: &Path, err: csv::Error) -> EvalError {
    EvalError::Parse { path: path.display().to_string(), line: 0, msg: err.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::Document;
    use crate::eval::attribution::ErrorSource;

    fn mention(doc: &str, start: usize, end: usize, surface: &str, gold: Option<&str>) -> crate::candidates::Mention {
        crate::candidates::Mention {
            doc_id: doc.to_string(),
            start,
            end,
            surface: surface.to_string(),
            gold_entity: gold.map(String::from),
        }
    }

    fn key(doc: &str, start: usize, end: usize) -> MentionKey {
        MentionKey { doc_id: doc.to_string(), start, end }
    }

    fn prediction(doc: &str, start: usize, end: usize, decision: Option<&str>) -> Prediction {
        Prediction {
            mention: key(doc, start, end),
            decision: decision.map(String::from),
            source: PredictionSource::External,
        }
    }

    /// Dataset whose surfaces are irrelevant: mentions are laid out on a
    /// synthetic text so spans stay valid.
    fn dataset_from_golds(golds: &[&str]) -> BenchmarkDataset {
        let text = "x".repeat(2 * golds.len() + 2);
        let mentions = golds
            .iter()
            .enumerate()
            .map(|(i, gold)| mention("d", 2 * i, 2 * i + 1, "x", Some(gold)))
            .collect();
        BenchmarkDataset {
            name: "synthetic".to_string(),
            documents: vec![Document { id: "d".to_string(), text, mentions }],
        }
    }

    /// Independent recount with nested loops and no shared helpers.
    fn naive_counts(
        golds: &[&str],
        decisions: &[Option<&str>],
        strict: bool,
    ) -> (usize, usize, usize) {
        let mut tp = 0;
        let mut fp = 0;
        for (gold, decision) in golds.iter().zip(decisions) {
            match decision {
                Some(d) => {
                    if crate::kb::normalize_entity_name(d)
                        == crate::kb::normalize_entity_name(gold)
                    {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
                None => {
                    if strict {
                        fp += 1;
                    }
                }
            }
        }
        (tp, fp, golds.len() - tp)
    }

    fn score(golds: &[&str], decisions: &[Option<&str>], strict: bool) -> EvalReport {
        let dataset = dataset_from_golds(golds);
        let predictions: Vec<Prediction> = decisions
            .iter()
            .enumerate()
            .map(|(i, d)| prediction("d", 2 * i, 2 * i + 1, *d))
            .collect();
        score_ed(
            &predictions,
            &dataset,
            &ScoreOptions { strict_abstention: strict, allow_missing: false },
        )
        .unwrap()
    }

    #[test]
    fn hand_case_two_correct_one_wrong_one_abstained() {
        let golds = ["E1", "E2", "E3", "E4"];
        let decisions = [Some("E1"), Some("E2"), Some("E9"), None];

        let report = score(&golds, &decisions, false);
        assert_eq!((report.tp, report.fp, report.fn_count), (2, 1, 2));
        assert!((report.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.recall - 0.5).abs() < 1e-12);
        assert!((report.micro_f1 - 4.0 / 7.0).abs() < 1e-12);

        // Strict abstentions collapse everything to accuracy.
        let strict = score(&golds, &decisions, true);
        assert_eq!((strict.tp, strict.fp, strict.fn_count), (2, 2, 2));
        assert!((strict.precision - 0.5).abs() < 1e-12);
        assert!((strict.recall - 0.5).abs() < 1e-12);
        assert!((strict.micro_f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trivial_cases() {
        let all_right = score(&["A", "B"], &[Some("A"), Some("B")], false);
        assert_eq!(all_right.micro_f1, 1.0);
        assert_eq!(all_right.fn_count, 0);

        let all_wrong = score(&["A", "B"], &[Some("B"), Some("A")], false);
        assert_eq!(all_wrong.micro_f1, 0.0);
        assert_eq!(all_wrong.precision, 0.0);

        let all_abstain = score(&["A", "B"], &[None, None], false);
        assert_eq!((all_abstain.tp, all_abstain.fp, all_abstain.fn_count), (0, 0, 2));
        assert_eq!(all_abstain.precision, 0.0);
        assert_eq!(all_abstain.micro_f1, 0.0);
    }

    #[test]
    fn matching_is_name_normalized() {
        let report = score(&["George_W._Bush"], &[Some("george w. bush")], false);
        assert_eq!(report.tp, 1);
        assert_eq!(report.rows[0].outcome, MentionOutcome::Correct);
    }

    #[test]
    fn randomized_scores_match_naive_recount() {
        let mut state = 0x5eed_cafe_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as usize
        };
        let pool = ["E1", "E2", "E3", "E4", "E5"];
        for round in 0..120 {
            let n = 1 + next() % 40;
            let golds: Vec<&str> = (0..n).map(|_| pool[next() % pool.len()]).collect();
            let decisions: Vec<Option<&str>> = (0..n)
                .map(|i| match next() % 4 {
                    0 => None,
                    1 => Some(golds[i]),
                    _ => Some(pool[next() % pool.len()]),
                })
                .collect();
            let strict = next() % 2 == 0;
            let (tp, fp, fn_count) = naive_counts(&golds, &decisions, strict);
            let report = score(&golds, &decisions, strict);
            assert_eq!(
                (report.tp, report.fp, report.fn_count),
                (tp, fp, fn_count),
                "round {round}"
            );
            let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let r = if tp + fn_count == 0 { 0.0 } else { tp as f64 / (tp + fn_count) as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            assert!((report.precision - p).abs() < 1e-12, "round {round}");
            assert!((report.recall - r).abs() < 1e-12, "round {round}");
            assert!((report.micro_f1 - f).abs() < 1e-12, "round {round}");
        }
    }

    #[test]
    fn duplicate_predictions_are_rejected() {
        let dataset = dataset_from_golds(&["A"]);
        let predictions = vec![prediction("d", 0, 1, Some("A")), prediction("d", 0, 1, Some("A"))];
        assert!(matches!(
            score_ed(&predictions, &dataset, &ScoreOptions::default()),
            Err(EvalError::DuplicatePrediction { start: 0, end: 1, .. })
        ));
    }

    #[test]
    fn unknown_mentions_are_rejected() {
        let dataset = dataset_from_golds(&["A"]);
        let predictions = vec![prediction("d", 0, 1, Some("A")), prediction("other", 5, 9, None)];
        assert!(matches!(
            score_ed(&predictions, &dataset, &ScoreOptions::default()),
            Err(EvalError::UnknownMention { start: 5, end: 9, .. })
        ));
    }

    #[test]
    fn missing_predictions_error_or_warn() {
        let dataset = dataset_from_golds(&["A", "B"]);
        let predictions = vec![prediction("d", 0, 1, Some("A"))];
        assert!(matches!(
            score_ed(&predictions, &dataset, &ScoreOptions::default()),
            Err(EvalError::MissingPrediction { start: 2, end: 3, .. })
        ));

        let report = score_ed(
            &predictions,
            &dataset,
            &ScoreOptions { strict_abstention: false, allow_missing: true },
        )
        .unwrap();
        assert!(report.partial);
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.rows[1].outcome, MentionOutcome::Abstained);
        assert_eq!((report.tp, report.fp, report.fn_count), (1, 0, 1));
    }

    #[test]
    fn qa_accuracy_counts_case_insensitive_matches() {
        assert_eq!(score_qa(&['a', 'B', 'c', 'D'], &['A', 'B', 'C', 'A']).unwrap(), 0.75);
        assert_eq!(score_qa(&['A'], &['B']).unwrap(), 0.0);
        assert!(matches!(score_qa(&[], &[]), Err(EvalError::EmptySet)));
        assert!(matches!(
            score_qa(&['A'], &['A', 'B']),
            Err(EvalError::LengthMismatch { got: 1, expected: 2 })
        ));
    }

    #[test]
    fn predictions_round_trip_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        let predictions = vec![
            prediction("d2", 5, 9, None),
            prediction("d1", 7, 9, Some("B")),
            prediction("d1", 0, 3, Some("A")),
        ];
        write_predictions(&predictions, &path).unwrap();
        let loaded = read_predictions(&path).unwrap();
        let keys: Vec<(&str, usize)> =
            loaded.iter().map(|p| (p.mention.doc_id.as_str(), p.mention.start)).collect();
        assert_eq!(keys, vec![("d1", 0), ("d1", 7), ("d2", 5)]);
        assert_eq!(loaded[0].decision.as_deref(), Some("A"));
        assert_eq!(loaded[2].decision, None);

        // Writing the loaded set again produces identical bytes.
        let path2 = dir.path().join("preds2.jsonl");
        write_predictions(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn error_rows_export_as_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("errors.csv");
        let rows = vec![ErrorRow {
            doc_id: "d1".to_string(),
            start: 3,
            end: 8,
            surface: "Paris".to_string(),
            gold: "Paris_(mythology)".to_string(),
            predicted: Some("Paris".to_string()),
            source: ErrorSource::Step3Selection,
            severity: None,
        }];
        write_errors_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "doc_id,start,end,surface,gold,predicted,source,severity"
        );
        assert_eq!(lines.next().unwrap(), "d1,3,8,Paris,Paris_(mythology),Paris,step3-selection,");
    }

    #[test]
    fn report_json_is_deterministic_and_uses_fn_key() {
        let report = score(&["A"], &[Some("A")], false);
        let a = serde_json::to_string(&report).unwrap();
        let b = serde_json::to_string(&report.clone()).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"fn\":0"));
        let back: EvalReport = serde_json::from_str(&a).unwrap();
        assert_eq!(back, report);
    }
}
