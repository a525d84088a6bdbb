//! Self-consistent bootstrapping of referring expressions from detection boxes.
//!
//! For every candidate box the model first writes a description of the boxed
//! object (grounding caption), then locates that description again (visual
//! grounding). The pair is kept only when the re-grounded box overlaps the
//! original with IoU of at least `lambda`.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, CoordText, NormBox};
use crate::model::{ExpressionSource, ImageBundle, ImageRecord, ObjectAnn, ReferringExpression};

pub mod client;
pub mod mock;

pub use client::{HttpTransport, PromptedClient, TranscriptTransport, Transport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("bad response: {0}")]
    Protocol(String),
}

/// A multimodal model able to caption a box and to ground a phrase.
///
/// Both calls return the model's raw text. Implementations are shared across
/// worker threads; unless documented otherwise they must not keep per-call
/// state.
pub trait ModelClient: Send + Sync {
    fn describe(&self, image: &ImageRecord, coords: &CoordText) -> Result<String, ClientError>;
    fn ground(&self, image: &ImageRecord, description: &str) -> Result<String, ClientError>;
}

impl<C: ModelClient + ?Sized> ModelClient for &C {
    fn describe(&self, image: &ImageRecord, coords: &CoordText) -> Result<String, ClientError> {
        (**self).describe(image, coords)
    }
    fn ground(&self, image: &ImageRecord, description: &str) -> Result<String, ClientError> {
        (**self).ground(image, description)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub lambda: f64,
    pub max_objects_per_image: usize,
    pub min_object_area: f64,
    pub max_inflight_requests: usize,
    /// Retries after the first attempt of each call.
    pub retry_limit: u32,
    #[serde(with = "secs")]
    pub request_timeout: Duration,
    /// Abort when more than this fraction of candidates fail.
    pub abort_failure_rate: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            max_objects_per_image: 15,
            min_object_area: 2000.0,
            max_inflight_requests: 8,
            retry_limit: 2,
            request_timeout: Duration::from_secs(60),
            abort_failure_rate: 0.5,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), BootstrapError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(BootstrapError::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.max_inflight_requests == 0 {
            return Err(BootstrapError::Config("max_inflight_requests must be >= 1".into()));
        }
        Ok(())
    }

    pub fn filter(&self) -> crate::ingest::FilterConfig {
        crate::ingest::FilterConfig {
            max_objects: self.max_objects_per_image,
            min_area: self.min_object_area,
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub generated: u64,
    pub retained: u64,
    pub filtered: u64,
    pub no_box_parsed: u64,
    pub request_failures: u64,
    pub mean_iou_retained: f64,
}

impl BootstrapReport {
    /// `generated = retained + filtered + no_box_parsed`.
    pub fn reconciles(&self) -> bool {
        self.generated == self.retained + self.filtered + self.no_box_parsed
    }
}

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error("invalid bootstrap config: {0}")]
    Config(String),
    #[error("{failures} of {candidates} candidates failed, above the abort threshold")]
    FailureRate {
        failures: u64,
        candidates: u64,
        report: BootstrapReport,
    },
}

fn with_retries<T>(
    cfg: &BootstrapConfig,
    mut call: impl FnMut() -> Result<T, ClientError>,
) -> Result<T, ClientError> {
    let mut last = None;
    for attempt in 0..=cfg.retry_limit {
        match call() {
            Ok(v) => return Ok(v),
            Err(e) => {
                log::debug!("attempt {} failed: {e}", attempt + 1);
                last = Some(e);
            }
        }
    }
    Err(last.unwrap_or(ClientError::Timeout))
}

/// Remove coordinate tuples from a description and tidy whitespace.
pub fn clean_description(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(open) = rest.find('[') {
        let Some(len) = rest[open..].find(']') else {
            break;
        };
        let inner = &rest[open + 1..open + len];
        out.push_str(&rest[..open]);
        let numeric = !inner.trim().is_empty()
            && inner
                .chars()
                .all(|c| c.is_ascii_digit() || matches!(c, '.' | ',' | ' ' | '-' | '+'));
        if !numeric {
            out.push_str(&rest[open..=open + len]);
        }
        rest = &rest[open + len + 1..];
    }
    out.push_str(rest);
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Ask the model to describe the object. An empty string means the model
/// produced no usable text.
pub fn describe_object<C: ModelClient + ?Sized>(
    client: &C,
    image: &ImageRecord,
    obj: &ObjectAnn,
    cfg: &BootstrapConfig,
) -> Result<String, ClientError> {
    let coords = geometry::normalize(&obj.bbox, image)
        .and_then(|b| geometry::quantize(&b))
        .map_err(|e| ClientError::Protocol(e.to_string()))?;
    let raw = with_retries(cfg, || client.describe(image, &coords))?;
    Ok(clean_description(&raw))
}

/// Ask the model to locate `description`; the first box in its answer wins.
pub fn ground_description<C: ModelClient + ?Sized>(
    client: &C,
    image: &ImageRecord,
    description: &str,
    cfg: &BootstrapConfig,
) -> Result<Option<NormBox>, ClientError> {
    let raw = with_retries(cfg, || client.ground(image, description))?;
    Ok(geometry::parse_coords(&raw).into_iter().next())
}

/// Keep a description iff the re-grounded box exists and `iou >= lambda`.
pub fn self_consistent_filter(gt: &NormBox, predicted: Option<&NormBox>, lambda: f64) -> bool {
    predicted.is_some_and(|p| geometry::iou_meets(geometry::iou(gt, p), lambda))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOutput {
    /// One record per candidate that got a description, sorted by
    /// `(image_id, object_id)`.
    pub expressions: Vec<ReferringExpression>,
    pub report: BootstrapReport,
}

enum Outcome {
    Failed,
    Record(ReferringExpression),
}

fn bootstrap_object<C: ModelClient + ?Sized>(
    client: &C,
    bundle: &ImageBundle,
    obj: &ObjectAnn,
    cfg: &BootstrapConfig,
) -> Outcome {
    let image = &bundle.image;
    let Ok(gt) = geometry::normalize(&obj.bbox, image).and_then(|b| geometry::quantize(&b)) else {
        return Outcome::Failed;
    };
    let gt = gt.to_box();
    let text = match describe_object(client, image, obj, cfg) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("describe {}/{} failed: {e}", image.image_id, obj.object_id);
            return Outcome::Failed;
        }
    };
    let predicted = if text.is_empty() {
        None
    } else {
        match ground_description(client, image, &text, cfg) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("ground {}/{} failed: {e}", image.image_id, obj.object_id);
                return Outcome::Failed;
            }
        }
    };
    let iou = predicted.map(|p| geometry::iou(&gt, &p));
    Outcome::Record(ReferringExpression {
        image_id: image.image_id.clone(),
        object_id: Some(obj.object_id.clone()),
        bbox: obj.bbox,
        retained: !text.is_empty() && self_consistent_filter(&gt, predicted.as_ref(), cfg.lambda),
        text,
        source: ExpressionSource::Bootstrapped,
        predicted_box: predicted,
        iou,
    })
}

/// Bootstrap every candidate object of `bundles`.
///
/// Up to `max_inflight_requests` objects are processed concurrently; both
/// calls for one object go to the same client in sequence. The output does
/// not depend on the concurrency level.
pub fn run_bootstrap<C: ModelClient + ?Sized>(
    client: &C,
    bundles: &[ImageBundle],
    cfg: &BootstrapConfig,
) -> Result<BootstrapOutput, BootstrapError> {
    cfg.validate()?;
    let jobs: Vec<(&ImageBundle, &ObjectAnn)> = bundles
        .iter()
        .flat_map(|b| {
            b.candidates
                .iter()
                .filter_map(move |id| b.object(id).map(|o| (b, o)))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_inflight_requests)
        .build()
        .map_err(|e| BootstrapError::Config(e.to_string()))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        jobs.par_iter()
            .map(|(b, o)| bootstrap_object(client, b, o, cfg))
            .collect()
    });

    let mut failures = 0u64;
    let mut expressions = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Outcome::Failed => failures += 1,
            Outcome::Record(r) => expressions.push(r),
        }
    }
    expressions.sort_by(|a, b| (&a.image_id, &a.object_id).cmp(&(&b.image_id, &b.object_id)));

    let mut report = tally(&expressions);
    report.request_failures = failures;
    let candidates = jobs.len() as u64;
    if candidates > 0 && failures as f64 / candidates as f64 > cfg.abort_failure_rate {
        return Err(BootstrapError::FailureRate {
            failures,
            candidates,
            report,
        });
    }
    Ok(BootstrapOutput { expressions, report })
}

fn tally(expressions: &[ReferringExpression]) -> BootstrapReport {
    let mut r = BootstrapReport::default();
    let mut iou_sum = 0.0;
    for e in expressions {
        r.generated += 1;
        if e.retained {
            r.retained += 1;
            iou_sum += e.iou.unwrap_or(0.0);
        } else if e.text.is_empty() || e.predicted_box.is_some() {
            r.filtered += 1;
        } else {
            r.no_box_parsed += 1;
        }
    }
    if r.retained > 0 {
        r.mean_iou_retained = iou_sum / r.retained as f64;
    }
    r
}

/// Re-apply the filter at a new threshold using the stored predictions.
pub fn refilter(expressions: &mut [ReferringExpression], lambda: f64) -> BootstrapReport {
    for e in expressions.iter_mut() {
        if e.source == ExpressionSource::Bootstrapped {
            e.retained = !e.text.is_empty() && e.iou.is_some_and(|v| geometry::iou_meets(v, lambda));
        }
    }
    tally(expressions)
}

/// Attach retained expressions to the bundles of their images.
pub fn attach_expressions(bundles: &mut [ImageBundle], expressions: &[ReferringExpression]) {
    let mut by_image: std::collections::HashMap<&str, Vec<&ReferringExpression>> =
        std::collections::HashMap::new();
    for e in expressions.iter().filter(|e| e.retained) {
        by_image.entry(e.image_id.as_str()).or_default().push(e);
    }
    for b in bundles {
        if let Some(list) = by_image.get(b.image.image_id.as_str()) {
            b.expressions.extend(list.iter().map(|e| (*e).clone()));
        }
    }
}
