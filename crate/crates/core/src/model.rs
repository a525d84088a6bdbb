//! Annotation data model shared by every stage of the pipeline.
//!
//! All types are plain values: once built they are never mutated in place by
//! the pipeline, so they can be shared freely between worker threads.

use std::collections::HashSet;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// An image as seen by the pipeline: an opaque URI plus its pixel size.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub uri: String,
    pub width: u32,
    pub height: u32,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, uri: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            image_id: image_id.into(),
            uri: uri.into(),
            width,
            height,
        }
    }
}

/// Axis-aligned box in pixel coordinates (top-left and bottom-right corners).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl PixelBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Box from the `x, y, w, h` convention used by most annotation files.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Clamp all corners into `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: u32, height: u32) -> Self {
        let (w, h) = (f64::from(width), f64::from(height));
        Self::new(
            self.x_min.clamp(0.0, w),
            self.y_min.clamp(0.0, h),
            self.x_max.clamp(0.0, w),
            self.y_max.clamp(0.0, h),
        )
    }

    /// First rule this box violates inside an image of the given size, if any.
    pub fn violation(&self, width: u32, height: u32) -> Option<Rule> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Some(Rule::FiniteCoordinates);
        }
        if coords.iter().any(|&c| c < 0.0) {
            return Some(Rule::NonNegative);
        }
        if self.x_min >= self.x_max {
            return Some(Rule::XOrdered);
        }
        if self.y_min >= self.y_max {
            return Some(Rule::YOrdered);
        }
        if self.x_max > f64::from(width) || self.y_max > f64::from(height) {
            return Some(Rule::WithinImage);
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnn {
    pub object_id: String,
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationTriplet {
    pub subject_id: String,
    pub predicate: String,
    pub object_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDesc {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub phrase: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpressionSource {
    Annotated,
    Bootstrapped,
}

/// A referring expression paired with the box it refers to.
///
/// Bootstrapped expressions carry the box the model predicted for the text and
/// the IoU against the annotated box, so they can be re-filtered later at a
/// different threshold without querying the model again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferringExpression {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<String>,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub text: String,
    pub source: ExpressionSource,
    #[serde(default)]
    pub predicted_box: Option<crate::geometry::NormBox>,
    #[serde(default)]
    pub iou: Option<f64>,
    pub retained: bool,
}

/// Everything known about one image: its objects, relations, regions and any
/// referring expressions attached by bootstrapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBundle {
    pub image: ImageRecord,
    #[serde(default)]
    pub objects: Vec<ObjectAnn>,
    #[serde(default)]
    pub relations: Vec<RelationTriplet>,
    #[serde(default)]
    pub regions: Vec<RegionDesc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expressions: Vec<ReferringExpression>,
    /// Object ids eligible for description bootstrapping.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
}

impl ImageBundle {
    pub fn new(image: ImageRecord) -> Self {
        Self {
            image,
            objects: Vec::new(),
            relations: Vec::new(),
            regions: Vec::new(),
            expressions: Vec::new(),
            candidates: Vec::new(),
        }
    }

    pub fn object(&self, object_id: &str) -> Option<&ObjectAnn> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_image_bundle(&self.image, &self.objects, &self.relations, &self.regions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    RelationQa,
    RelationDetect,
    Spatial,
    Counting,
    Detection,
    Grounding,
    GroundCaption,
    MultichoiceVqa,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::RelationQa,
        Task::RelationDetect,
        Task::Spatial,
        Task::Counting,
        Task::Detection,
        Task::Grounding,
        Task::GroundCaption,
        Task::MultichoiceVqa,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::RelationQa => "relation_qa",
            Task::RelationDetect => "relation_detect",
            Task::Spatial => "spatial",
            Task::Counting => "counting",
            Task::Detection => "detection",
            Task::Grounding => "grounding",
            Task::GroundCaption => "ground_caption",
            Task::MultichoiceVqa => "multichoice_vqa",
        }
    }

    /// Valid variant numbers for this task. Tasks without variants use `1`.
    pub fn variants(&self) -> std::ops::RangeInclusive<u8> {
        match self {
            Task::RelationDetect | Task::Spatial => 1..=3,
            Task::Counting | Task::Detection => 1..=2,
            _ => 1..=1,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "from")]
    pub role: Role,
    #[serde(rename = "value")]
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

/// One instruction-tuning conversation about an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSample {
    #[serde(rename = "image")]
    pub image_id: String,
    #[serde(rename = "conversations")]
    pub turns: Vec<Turn>,
    pub task: Task,
    pub provenance: String,
}

impl DialogueSample {
    pub fn single_turn(
        image_id: impl Into<String>,
        task: Task,
        user: impl Into<String>,
        assistant: impl Into<String>,
        provenance: impl Into<String>,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            turns: vec![Turn::user(user), Turn::assistant(assistant)],
            task,
            provenance: provenance.into(),
        }
    }

    /// Rules of the dialogue format this sample breaks, empty when well-formed.
    pub fn violations(&self) -> Vec<Rule> {
        let mut out = Vec::new();
        if self.turns.is_empty() {
            out.push(Rule::NonEmptyTurns);
            return out;
        }
        if self.turns[0].role != Role::User {
            out.push(Rule::FirstTurnUser);
        }
        if self.turns.windows(2).any(|w| w[0].role == w[1].role) {
            out.push(Rule::AlternatingRoles);
        }
        if self.turns.last().map(|t| t.role) != Some(Role::Assistant) {
            out.push(Rule::LastTurnAssistant);
        }
        if self.turns.iter().any(|t| has_placeholder(&t.text)) {
            out.push(Rule::NoPlaceholders);
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[A-Za-z_]+>").expect("static regex"))
}

/// True when `text` still contains a `<name>` placeholder token.
pub fn has_placeholder(text: &str) -> bool {
    placeholder_re().is_match(text)
}

/// Lowercase a category name and collapse internal whitespace.
pub fn canonical_category(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// A validation rule. `Display` renders the rule the way it is usually written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    PositiveImageSize,
    FiniteCoordinates,
    NonNegative,
    XOrdered,
    YOrdered,
    WithinImage,
    NonEmptyCategory,
    UniqueObjectId,
    ImageIdMatches,
    SubjectNotObject,
    SubjectResolves,
    ObjectResolves,
    NonEmptyPhrase,
    NonEmptyTurns,
    FirstTurnUser,
    AlternatingRoles,
    LastTurnAssistant,
    NoPlaceholders,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::PositiveImageSize => "width >= 1 and height >= 1",
            Rule::FiniteCoordinates => "coordinates finite",
            Rule::NonNegative => "coordinates >= 0",
            Rule::XOrdered => "x_min < x_max",
            Rule::YOrdered => "y_min < y_max",
            Rule::WithinImage => "box within image",
            Rule::NonEmptyCategory => "category non-empty",
            Rule::UniqueObjectId => "object_id unique in image",
            Rule::ImageIdMatches => "image_id matches image",
            Rule::SubjectNotObject => "subject ≠ object",
            Rule::SubjectResolves => "subject_id resolves",
            Rule::ObjectResolves => "object_id resolves",
            Rule::NonEmptyPhrase => "phrase non-empty",
            Rule::NonEmptyTurns => "turns non-empty",
            Rule::FirstTurnUser => "first turn is user",
            Rule::AlternatingRoles => "roles alternate",
            Rule::LastTurnAssistant => "last turn is assistant",
            Rule::NoPlaceholders => "no unsubstituted placeholders",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Image,
    Object,
    Relation,
    Region,
}

/// One broken rule, pointing at the offending record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: Subject,
    /// Object id, `subject->object` for relations, region index for regions.
    pub id: String,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {}: {}", self.kind, self.id, self.rule)
    }
}

/// Check every invariant of one image's annotations. Violations are returned
/// as data; an empty report means the bundle is well-formed.
pub fn validate_image_bundle(
    record: &ImageRecord,
    objects: &[ObjectAnn],
    relations: &[RelationTriplet],
    regions: &[RegionDesc],
) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut push = |kind, id: &str, rule| {
        report.push(Violation {
            kind,
            id: id.to_string(),
            rule,
        })
    };

    if record.width == 0 || record.height == 0 {
        push(Subject::Image, &record.image_id, Rule::PositiveImageSize);
    }

    let mut seen = HashSet::new();
    for obj in objects {
        if obj.image_id != record.image_id {
            push(Subject::Object, &obj.object_id, Rule::ImageIdMatches);
        }
        if let Some(rule) = obj.bbox.violation(record.width, record.height) {
            push(Subject::Object, &obj.object_id, rule);
        }
        if obj.category.trim().is_empty() {
            push(Subject::Object, &obj.object_id, Rule::NonEmptyCategory);
        }
        if !seen.insert(obj.object_id.as_str()) {
            push(Subject::Object, &obj.object_id, Rule::UniqueObjectId);
        }
    }

    for rel in relations {
        let id = format!("{}->{}", rel.subject_id, rel.object_id);
        if rel.subject_id == rel.object_id {
            push(Subject::Relation, &id, Rule::SubjectNotObject);
        }
        if !seen.contains(rel.subject_id.as_str()) {
            push(Subject::Relation, &id, Rule::SubjectResolves);
        }
        if !seen.contains(rel.object_id.as_str()) {
            push(Subject::Relation, &id, Rule::ObjectResolves);
        }
    }

    for (idx, region) in regions.iter().enumerate() {
        let id = idx.to_string();
        if region.image_id != record.image_id {
            push(Subject::Region, &id, Rule::ImageIdMatches);
        }
        if let Some(rule) = region.bbox.violation(record.width, record.height) {
            push(Subject::Region, &id, rule);
        }
        if region.phrase.trim().is_empty() {
            push(Subject::Region, &id, Rule::NonEmptyPhrase);
        }
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: &str, b: PixelBox) -> ObjectAnn {
        ObjectAnn {
            object_id: id.into(),
            image_id: "img".into(),
            bbox: b,
            category: "hat".into(),
        }
    }

    fn image() -> ImageRecord {
        ImageRecord::new("img", "img.jpg", 100, 100)
    }

    #[test]
    fn clean_bundle_has_empty_report() {
        let objects = [obj("1", PixelBox::new(10.0, 10.0, 20.0, 20.0))];
        assert!(validate_image_bundle(&image(), &objects, &[], &[]).is_empty());
    }

    #[test]
    fn inverted_box_is_reported() {
        let objects = [obj("1", PixelBox::new(20.0, 10.0, 10.0, 20.0))];
        let report = validate_image_bundle(&image(), &objects, &[], &[]);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].rule.to_string(), "x_min < x_max");
        assert_eq!(report[0].id, "1");
    }

    #[test]
    fn self_relation_is_reported() {
        let objects = [obj("1", PixelBox::new(10.0, 10.0, 20.0, 20.0))];
        let relations = [RelationTriplet {
            subject_id: "1".into(),
            predicate: "near".into(),
            object_id: "1".into(),
        }];
        let report = validate_image_bundle(&image(), &objects, &relations, &[]);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].rule.to_string(), "subject ≠ object");
    }

    #[test]
    fn dangling_relation_and_duplicates() {
        let objects = [
            obj("1", PixelBox::new(10.0, 10.0, 20.0, 20.0)),
            obj("1", PixelBox::new(30.0, 10.0, 40.0, 20.0)),
        ];
        let relations = [RelationTriplet {
            subject_id: "1".into(),
            predicate: "on".into(),
            object_id: "9".into(),
        }];
        let rules: Vec<Rule> = validate_image_bundle(&image(), &objects, &relations, &[])
            .into_iter()
            .map(|v| v.rule)
            .collect();
        assert_eq!(rules, vec![Rule::UniqueObjectId, Rule::ObjectResolves]);
    }

    #[test]
    fn zero_area_and_out_of_bounds() {
        assert_eq!(
            PixelBox::new(5.0, 5.0, 5.0, 9.0).violation(10, 10),
            Some(Rule::XOrdered)
        );
        assert_eq!(
            PixelBox::new(5.0, 5.0, 11.0, 9.0).violation(10, 10),
            Some(Rule::WithinImage)
        );
        assert_eq!(
            PixelBox::new(5.0, 5.0, 11.0, 9.0).clamp_to(10, 10).violation(10, 10),
            None
        );
    }

    #[test]
    fn blank_region_phrase() {
        let regions = [RegionDesc {
            image_id: "img".into(),
            bbox: PixelBox::new(0.0, 0.0, 5.0, 5.0),
            phrase: "   ".into(),
        }];
        let report = validate_image_bundle(&image(), &[], &[], &regions);
        assert_eq!(report[0].rule, Rule::NonEmptyPhrase);
    }

    #[test]
    fn category_canonical_form() {
        assert_eq!(canonical_category("  Tennis   Racket "), "tennis racket");
    }

    #[test]
    fn dialogue_rules() {
        let ok = DialogueSample::single_turn("i", Task::Counting, "How many?", "3", "t");
        assert!(ok.is_valid());

        let mut bad = ok.clone();
        bad.turns.push(Turn::assistant("again"));
        assert_eq!(
            bad.violations(),
            vec![Rule::AlternatingRoles]
        );

        let residual = DialogueSample::single_turn("i", Task::Counting, "Count <category>.", "3", "t");
        assert_eq!(residual.violations(), vec![Rule::NoPlaceholders]);

        let empty = DialogueSample {
            turns: vec![],
            ..ok
        };
        assert_eq!(empty.violations(), vec![Rule::NonEmptyTurns]);
    }

    #[test]
    fn sample_serde_field_names() {
        let s = DialogueSample::single_turn("7", Task::Grounding, "q", "a", "vg/x");
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["image"], "7");
        assert_eq!(json["conversations"][0]["from"], "user");
        assert_eq!(json["conversations"][1]["value"], "a");
        assert_eq!(json["task"], "grounding");
    }
}
