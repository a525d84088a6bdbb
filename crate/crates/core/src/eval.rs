//! Scoring of model predictions for grounding, VQA and counting.

use std::io::BufRead;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, NormBox};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ground truth, tagged by task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", content = "ground_truth", rename_all = "snake_case")]
pub enum Target {
    Grounding(NormBox),
    /// Reference answers, usually ten.
    Vqa(Vec<String>),
    Counting(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    #[serde(flatten)]
    pub target: Target,
    pub prediction_text: String,
}

impl EvalItem {
    pub fn new(item_id: impl Into<String>, target: Target, prediction_text: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            target,
            prediction_text: prediction_text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric_name: String,
    /// Mean item score in percent; 0 when there are no items.
    pub value: f64,
    pub item_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub per_item: Vec<ItemScore>,
}

const VQA_NOTE: &str = "VQA score = min(#references equal to the normalized prediction / 3, 1)";

fn finish(metric: &str, per_item: Vec<ItemScore>) -> EvalResult {
    let n = per_item.len();
    let value = if n == 0 {
        0.0
    } else {
        per_item.iter().map(|s| s.score).sum::<f64>() / n as f64 * 100.0
    };
    EvalResult {
        metric_name: metric.to_string(),
        value,
        item_count: n,
        iou_threshold: None,
        note: None,
        per_item,
    }
}

fn score_all<'a>(
    items: impl IntoParallelIterator<Item = &'a EvalItem>,
    f: impl Fn(&EvalItem) -> Option<f64> + Sync,
) -> Vec<ItemScore> {
    items
        .into_par_iter()
        .filter_map(|it| {
            f(it).map(|score| ItemScore {
                item_id: it.item_id.clone(),
                score,
            })
        })
        .collect()
}

/// Score for one grounding prediction: the first parsed box must reach
/// `threshold` IoU with the target.
pub fn grounding_score(target: &NormBox, prediction: &str, threshold: f64) -> f64 {
    match geometry::parse_coords(prediction).first() {
        Some(b) if geometry::iou_meets(geometry::iou(target, b), threshold) => 1.0,
        _ => 0.0,
    }
}

/// Accuracy of grounding items (other items are ignored).
pub fn eval_grounding(items: &[EvalItem], iou_threshold: f64) -> EvalResult {
    let per_item = score_all(items, |it| match &it.target {
        Target::Grounding(b) => Some(grounding_score(b, &it.prediction_text, iou_threshold)),
        _ => None,
    });
    let mut r = finish("grounding_accuracy", per_item);
    r.iou_threshold = Some(iou_threshold);
    r
}

/// Lowercase, strip punctuation, drop articles, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn vqa_score(references: &[String], prediction: &str) -> f64 {
    let p = normalize_answer(prediction);
    let matches = references.iter().filter(|r| normalize_answer(r) == p).count();
    (matches as f64 / 3.0).min(1.0)
}

pub fn eval_vqa(items: &[EvalItem]) -> EvalResult {
    let per_item = score_all(items, |it| match &it.target {
        Target::Vqa(refs) => Some(vqa_score(refs, &it.prediction_text)),
        _ => None,
    });
    let mut r = finish("vqa_score", per_item);
    r.note = Some(VQA_NOTE.to_string());
    r
}

fn first_integer(s: &str) -> Option<u64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\d+").expect("static regex"));
    re.find(s).and_then(|m| m.as_str().parse().ok())
}

pub fn counting_score(target: u64, prediction: &str) -> f64 {
    if first_integer(prediction) == Some(target) {
        1.0
    } else {
        0.0
    }
}

pub fn eval_counting(items: &[EvalItem]) -> EvalResult {
    let per_item = score_all(items, |it| match &it.target {
        Target::Counting(n) => Some(counting_score(*n, &it.prediction_text)),
        _ => None,
    });
    finish("counting_accuracy", per_item)
}

/// One result per task present in `items`, in the order grounding, VQA,
/// counting.
pub fn evaluate(items: &[EvalItem], iou_threshold: f64) -> Vec<EvalResult> {
    let has = |f: fn(&Target) -> bool| items.iter().any(|i| f(&i.target));
    let mut out = Vec::new();
    if has(|t| matches!(t, Target::Grounding(_))) {
        out.push(eval_grounding(items, iou_threshold));
    }
    if has(|t| matches!(t, Target::Vqa(_))) {
        out.push(eval_vqa(items));
    }
    if has(|t| matches!(t, Target::Counting(_))) {
        out.push(eval_counting(items));
    }
    out
}

/// Read JSON-lines eval items; blank lines are skipped.
pub fn read_items<R: BufRead>(input: R) -> Result<Vec<EvalItem>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: EvalItem = serde_json::from_str(&line).map_err(|e| EvalError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Target::Vqa(refs) = &item.target {
            if refs.is_empty() {
                return Err(EvalError::Line {
                    line: i + 1,
                    message: "vqa item without reference answers".into(),
                });
            }
        }
        out.push(item);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nb(a: f64, b: f64, c: f64, d: f64) -> NormBox {
        NormBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn grounding_examples() {
        let gt = nb(0.1, 0.1, 0.5, 0.5);
        let items = vec![
            EvalItem::new("a", Target::Grounding(gt), "[0.100,0.100,0.500,0.500]"),
            EvalItem::new("b", Target::Grounding(gt), "no box here"),
        ];
        let r = eval_grounding(&items, 0.5);
        assert_eq!(r.item_count, 2);
        assert_eq!(r.value, 50.0);
        assert_eq!(r.per_item[1].score, 0.0);
    }

    #[test]
    fn vqa_examples() {
        let refs = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(vqa_score(&refs(&["dog"; 10]), "dog"), 1.0);
        assert_eq!(vqa_score(&refs(&["dog", "cat", "cat"]), "dog"), 1.0 / 3.0);
        assert_eq!(vqa_score(&refs(&["dog"]), "The DOG."), 1.0 / 3.0);
        assert_eq!(normalize_answer("  A  big, red   hat! "), "big red hat");
    }

    #[test]
    fn counting_examples() {
        assert_eq!(counting_score(3, "3"), 1.0);
        assert_eq!(counting_score(3, "there are 3 dogs"), 1.0);
        assert_eq!(counting_score(3, "three"), 0.0);
        assert_eq!(counting_score(3, "13"), 0.0);
    }

    #[test]
    fn item_wire_format() {
        let line = r#"{"item_id":"q1","task":"vqa","ground_truth":["yes","yes"],"prediction_text":"yes"}"#;
        let items = read_items(line.as_bytes()).unwrap();
        assert_eq!(items[0].target, Target::Vqa(vec!["yes".into(), "yes".into()]));
        let back = serde_json::to_string(&items[0]).unwrap();
        assert_eq!(back, line);

        let g = r#"{"item_id":"g","task":"grounding","ground_truth":[0.1,0.1,0.2,0.2],"prediction_text":""}"#;
        assert!(matches!(read_items(g.as_bytes()).unwrap()[0].target, Target::Grounding(_)));

        let bad = format!("{g}\n{{\"item_id\":\"x\"");
        assert!(matches!(read_items(bad.as_bytes()), Err(EvalError::Line { line: 2, .. })));
    }
}
