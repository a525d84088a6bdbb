//! Parsing of scene-graph and detection corpora into [`ImageBundle`]s, plus
//! the preprocessing filters applied before bootstrapping.
//!
//! Both input schemas may be given either as a single JSON array of records or
//! as a stream of whitespace/newline separated JSON records; the form is
//! detected from the first non-whitespace byte. Array input is consumed one
//! element at a time, so memory is bounded by the largest record.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, BufReader, Read};
use std::rc::Rc;

use serde::de::{DeserializeOwned, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::model::{
    canonical_category, ImageBundle, ImageRecord, ObjectAnn, PixelBox, RegionDesc,
    RelationTriplet,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Record counts for one ingested corpus. All counters add commutatively, so
/// stats from independent shards can be merged in any order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub image_count: u64,
    pub object_count: u64,
    pub relation_count: u64,
    pub region_count: u64,
    pub images_invalid: u64,
    pub objects_invalid: u64,
    pub relations_invalid: u64,
    pub regions_invalid: u64,
    pub images_dropped_by_object_cap: u64,
    pub objects_in_dropped_images: u64,
    pub relations_in_dropped_images: u64,
    pub regions_in_dropped_images: u64,
    /// Objects kept for task generation but excluded from bootstrapping.
    pub objects_dropped_by_area: u64,
    pub bootstrap_candidates: u64,
}

impl CorpusStats {
    pub fn merge(&mut self, o: &CorpusStats) {
        self.image_count += o.image_count;
        self.object_count += o.object_count;
        self.relation_count += o.relation_count;
        self.region_count += o.region_count;
        self.images_invalid += o.images_invalid;
        self.objects_invalid += o.objects_invalid;
        self.relations_invalid += o.relations_invalid;
        self.regions_invalid += o.regions_invalid;
        self.images_dropped_by_object_cap += o.images_dropped_by_object_cap;
        self.objects_in_dropped_images += o.objects_in_dropped_images;
        self.relations_in_dropped_images += o.relations_in_dropped_images;
        self.regions_in_dropped_images += o.regions_in_dropped_images;
        self.objects_dropped_by_area += o.objects_dropped_by_area;
        self.bootstrap_candidates += o.bootstrap_candidates;
    }

    /// Fold in the stats returned by [`filter_for_bootstrap`]: kept counts
    /// replace the loaded ones and the drop counters are added.
    pub fn apply_filter(&mut self, f: &CorpusStats) {
        let invalid = CorpusStats {
            images_invalid: self.images_invalid,
            objects_invalid: self.objects_invalid,
            relations_invalid: self.relations_invalid,
            regions_invalid: self.regions_invalid,
            ..CorpusStats::default()
        };
        *self = *f;
        self.merge(&invalid);
    }

    pub fn images_in(&self) -> u64 {
        self.image_count + self.images_invalid + self.images_dropped_by_object_cap
    }
    pub fn objects_in(&self) -> u64 {
        self.object_count + self.objects_invalid + self.objects_in_dropped_images
    }
    pub fn relations_in(&self) -> u64 {
        self.relation_count + self.relations_invalid + self.relations_in_dropped_images
    }
    pub fn regions_in(&self) -> u64 {
        self.region_count + self.regions_invalid + self.regions_in_dropped_images
    }

    /// Counts of what a set of bundles holds, with all drop counters at zero.
    pub fn of_bundles(bundles: &[ImageBundle]) -> Self {
        let mut s = CorpusStats::default();
        for b in bundles {
            s.image_count += 1;
            s.object_count += b.objects.len() as u64;
            s.relation_count += b.relations.len() as u64;
            s.region_count += b.regions.len() as u64;
        }
        s
    }
}

/// Ids appear as numbers in some corpora and strings in others.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Id(String);

impl<'de> Deserialize<'de> for Id {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        Ok(Id(match Raw::deserialize(d)? {
            Raw::Int(i) => i.to_string(),
            Raw::Str(s) => s,
        }))
    }
}

#[derive(Debug, Deserialize)]
struct SceneRecord {
    image_id: Id,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
    #[serde(default, alias = "url")]
    uri: Option<String>,
    #[serde(default)]
    objects: Vec<SceneObject>,
    #[serde(default)]
    relationships: Vec<SceneRelation>,
    #[serde(default)]
    regions: Vec<SceneRegion>,
}

#[derive(Debug, Deserialize)]
struct SceneObject {
    object_id: Id,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    #[serde(default)]
    names: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct SceneRelation {
    subject_id: Id,
    predicate: String,
    object_id: Id,
}

#[derive(Debug, Deserialize)]
struct SceneRegion {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    phrase: String,
}

#[derive(Debug, Default, Deserialize)]
struct DetectionDoc {
    #[serde(default)]
    images: Vec<DetectionImage>,
    #[serde(default)]
    annotations: Vec<DetectionAnn>,
    #[serde(default)]
    categories: Vec<DetectionCategory>,
}

#[derive(Debug, Deserialize)]
struct DetectionImage {
    id: Id,
    #[serde(default)]
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct DetectionAnn {
    id: Id,
    image_id: Id,
    category_id: Id,
    bbox: [f64; 4],
}

#[derive(Debug, Deserialize)]
struct DetectionCategory {
    id: Id,
    name: String,
}

struct CountingReader<R> {
    inner: R,
    count: Rc<Cell<u64>>,
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.count.set(self.count.get() + n as u64);
        Ok(n)
    }
}

struct SeqEach<'f, T, F> {
    f: &'f mut F,
    _t: std::marker::PhantomData<T>,
}

impl<'de, T, F> Visitor<'de> for SeqEach<'_, T, F>
where
    T: Deserialize<'de>,
    F: FnMut(T),
{
    type Value = ();

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("an array of records")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<(), A::Error> {
        while let Some(item) = seq.next_element::<T>()? {
            (self.f)(item);
        }
        Ok(())
    }
}

/// Stream records of type `T` from `source`, calling `f` for each one.
///
/// Accepts a top-level JSON array or a sequence of JSON values (JSON lines).
/// Errors report the byte offset where parsing stopped.
pub fn for_each_record<T, R, F>(source: R, mut f: F) -> Result<(), IngestError>
where
    T: DeserializeOwned,
    R: Read,
    F: FnMut(T),
{
    let mut buffered = BufReader::new(source);
    let mut skipped = 0u64;
    let first = loop {
        let buf = buffered.fill_buf()?;
        if buf.is_empty() {
            return Ok(());
        }
        match buf.iter().position(|b| !b.is_ascii_whitespace()) {
            Some(i) => {
                let b = buf[i];
                buffered.consume(i);
                skipped += i as u64;
                break b;
            }
            None => {
                let n = buf.len();
                buffered.consume(n);
                skipped += n as u64;
            }
        }
    };

    let count = Rc::new(Cell::new(skipped));
    let reader = CountingReader {
        inner: buffered,
        count: Rc::clone(&count),
    };
    let parse_err = |e: serde_json::Error| {
        if e.is_io() {
            IngestError::Io(e.into())
        } else {
            IngestError::Parse {
                offset: count.get(),
                message: e.to_string(),
            }
        }
    };

    let mut de = serde_json::Deserializer::from_reader(reader);
    if first == b'[' {
        de.deserialize_seq(SeqEach {
            f: &mut f,
            _t: std::marker::PhantomData,
        })
        .map_err(parse_err)?;
        de.end().map_err(parse_err)?;
    } else {
        for item in de.into_iter::<T>() {
            f(item.map_err(parse_err)?);
        }
    }
    Ok(())
}

fn clamped_box(x: f64, y: f64, w: f64, h: f64, image: &ImageRecord) -> Option<PixelBox> {
    let b = PixelBox::from_xywh(x, y, w, h);
    // inverted boxes (negative extent) are rejected before clamping
    if !(b.x_min < b.x_max && b.y_min < b.y_max) {
        return None;
    }
    let c = b.clamp_to(image.width, image.height);
    c.violation(image.width, image.height).is_none().then_some(c)
}

struct BundleBuilder {
    bundle: ImageBundle,
    ids: HashSet<String>,
}

impl BundleBuilder {
    fn new(image: ImageRecord) -> Self {
        Self {
            bundle: ImageBundle::new(image),
            ids: HashSet::new(),
        }
    }

    fn add_object(&mut self, id: String, b: Option<PixelBox>, category: String, stats: &mut CorpusStats) {
        match b {
            Some(bbox) if !category.is_empty() && !self.ids.contains(&id) => {
                self.ids.insert(id.clone());
                self.bundle.objects.push(ObjectAnn {
                    object_id: id,
                    image_id: self.bundle.image.image_id.clone(),
                    bbox,
                    category,
                });
                stats.object_count += 1;
            }
            _ => stats.objects_invalid += 1,
        }
    }

    fn add_relation(&mut self, rel: SceneRelation, stats: &mut CorpusStats) {
        let ok = rel.subject_id != rel.object_id
            && self.ids.contains(&rel.subject_id.0)
            && self.ids.contains(&rel.object_id.0)
            && !rel.predicate.trim().is_empty();
        if ok {
            self.bundle.relations.push(RelationTriplet {
                subject_id: rel.subject_id.0,
                predicate: rel.predicate.trim().to_string(),
                object_id: rel.object_id.0,
            });
            stats.relation_count += 1;
        } else {
            stats.relations_invalid += 1;
        }
    }

    fn add_region(&mut self, reg: SceneRegion, stats: &mut CorpusStats) {
        let phrase = reg.phrase.trim();
        match clamped_box(reg.x, reg.y, reg.w, reg.h, &self.bundle.image) {
            Some(bbox) if !phrase.is_empty() => {
                self.bundle.regions.push(RegionDesc {
                    image_id: self.bundle.image.image_id.clone(),
                    bbox,
                    phrase: phrase.to_string(),
                });
                stats.region_count += 1;
            }
            _ => stats.regions_invalid += 1,
        }
    }

    fn finish(self) -> ImageBundle {
        debug_assert!(self.bundle.validate().is_empty(), "{:?}", self.bundle.validate());
        self.bundle
    }
}

/// Parse a scene-graph corpus split across three streams.
///
/// `objects_source` provides the image records (`image_id`, `width`,
/// `height`, `objects`); the other two provide `relationships` and `regions`
/// for the same image ids. Any of the streams may be empty. Invalid records
/// are dropped and counted, never fatal.
pub fn load_scene_graph<A: Read, B: Read, C: Read>(
    objects_source: A,
    relations_source: B,
    regions_source: C,
) -> Result<(Vec<ImageBundle>, CorpusStats), IngestError> {
    let mut stats = CorpusStats::default();

    let mut relations: HashMap<String, Vec<SceneRelation>> = HashMap::new();
    for_each_record(relations_source, |r: SceneRecord| {
        relations.entry(r.image_id.0).or_default().extend(r.relationships);
    })?;
    let mut regions: HashMap<String, Vec<SceneRegion>> = HashMap::new();
    for_each_record(regions_source, |r: SceneRecord| {
        regions.entry(r.image_id.0).or_default().extend(r.regions);
    })?;

    let mut bundles = Vec::new();
    let mut seen_images = HashSet::new();
    for_each_record(objects_source, |r: SceneRecord| {
        let image_id = r.image_id.0;
        let rels = relations.remove(&image_id).unwrap_or_default();
        let regs = regions.remove(&image_id).unwrap_or_default();
        let size_ok = matches!((r.width, r.height), (Some(w), Some(h)) if w >= 1 && h >= 1);
        if !size_ok || !seen_images.insert(image_id.clone()) {
            stats.images_invalid += 1;
            stats.objects_invalid += r.objects.len() as u64;
            stats.relations_invalid += rels.len() as u64;
            stats.regions_invalid += regs.len() as u64;
            return;
        }
        let image = ImageRecord {
            uri: r.uri.unwrap_or_else(|| image_id.clone()),
            image_id,
            width: r.width.unwrap_or(0),
            height: r.height.unwrap_or(0),
        };
        let mut builder = BundleBuilder::new(image);
        for o in r.objects {
            let category = o.names.first().map(|n| canonical_category(n)).unwrap_or_default();
            let b = clamped_box(o.x, o.y, o.w, o.h, &builder.bundle.image);
            builder.add_object(o.object_id.0, b, category, &mut stats);
        }
        for rel in rels {
            builder.add_relation(rel, &mut stats);
        }
        for reg in regs {
            builder.add_region(reg, &mut stats);
        }
        stats.image_count += 1;
        bundles.push(builder.finish());
    })?;

    // annotations for images that never appeared in the objects stream
    stats.relations_invalid += relations.values().map(|v| v.len() as u64).sum::<u64>();
    stats.regions_invalid += regions.values().map(|v| v.len() as u64).sum::<u64>();

    Ok((bundles, stats))
}

/// Parse a detection corpus (`images`, `annotations`, `categories`).
///
/// The stream may hold one document or several partial documents whose lists
/// are concatenated. Bundles come out in image order.
pub fn load_detection<R: Read>(source: R) -> Result<(Vec<ImageBundle>, CorpusStats), IngestError> {
    let mut doc = DetectionDoc::default();
    for_each_record(source, |d: DetectionDoc| {
        doc.images.extend(d.images);
        doc.annotations.extend(d.annotations);
        doc.categories.extend(d.categories);
    })?;

    let mut stats = CorpusStats::default();
    let categories: HashMap<String, String> = doc
        .categories
        .into_iter()
        .map(|c| (c.id.0, canonical_category(&c.name)))
        .collect();

    let mut anns: HashMap<String, Vec<DetectionAnn>> = HashMap::new();
    for a in doc.annotations {
        anns.entry(a.image_id.0.clone()).or_default().push(a);
    }

    let mut bundles = Vec::new();
    let mut seen = HashSet::new();
    for img in doc.images {
        let id = img.id.0;
        let own = anns.remove(&id).unwrap_or_default();
        if img.width == 0 || img.height == 0 || !seen.insert(id.clone()) {
            stats.images_invalid += 1;
            stats.objects_invalid += own.len() as u64;
            continue;
        }
        let image = ImageRecord {
            uri: if img.file_name.is_empty() { id.clone() } else { img.file_name },
            image_id: id,
            width: img.width,
            height: img.height,
        };
        let mut builder = BundleBuilder::new(image);
        for a in own {
            let category = categories.get(&a.category_id.0).cloned().unwrap_or_default();
            let [x, y, w, h] = a.bbox;
            let b = clamped_box(x, y, w, h, &builder.bundle.image);
            builder.add_object(a.id.0, b, category, &mut stats);
        }
        stats.image_count += 1;
        bundles.push(builder.finish());
    }
    stats.objects_invalid += anns.values().map(|v| v.len() as u64).sum::<u64>();

    Ok((bundles, stats))
}

/// Thresholds of the preprocessing applied before bootstrapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Images with more objects than this are dropped.
    pub max_objects: usize,
    /// Objects must cover strictly more pixels than this to be candidates.
    pub min_area: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_objects: 15,
            min_area: 2000.0,
        }
    }
}

/// Drop crowded images and mark which objects are large enough to bootstrap.
///
/// Small objects stay in their bundle (they are still usable for task
/// generation); they are only left out of [`ImageBundle::candidates`].
pub fn filter_for_bootstrap(
    bundles: Vec<ImageBundle>,
    cfg: &FilterConfig,
) -> (Vec<ImageBundle>, CorpusStats) {
    let mut stats = CorpusStats::default();
    let mut kept = Vec::with_capacity(bundles.len());
    for mut b in bundles {
        if b.objects.len() > cfg.max_objects {
            stats.images_dropped_by_object_cap += 1;
            stats.objects_in_dropped_images += b.objects.len() as u64;
            stats.relations_in_dropped_images += b.relations.len() as u64;
            stats.regions_in_dropped_images += b.regions.len() as u64;
            continue;
        }
        b.candidates = b
            .objects
            .iter()
            .filter(|o| o.bbox.area() > cfg.min_area)
            .map(|o| o.object_id.clone())
            .collect();
        stats.image_count += 1;
        stats.object_count += b.objects.len() as u64;
        stats.relation_count += b.relations.len() as u64;
        stats.region_count += b.regions.len() as u64;
        stats.bootstrap_candidates += b.candidates.len() as u64;
        stats.objects_dropped_by_area += (b.objects.len() - b.candidates.len()) as u64;
        kept.push(b);
    }
    (kept, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    const OBJECTS: &str = r#"
{"image_id": 1, "width": 100, "height": 100, "objects": [
  {"object_id": 10, "x": 10, "y": 10, "w": 20, "h": 20, "names": ["Man"]},
  {"object_id": 11, "x": 50, "y": 5, "w": 10, "h": 10, "names": ["hat"]}]}
{"image_id": 2, "width": 50, "height": 40, "objects": [
  {"object_id": 20, "x": 0, "y": 0, "w": 10, "h": 10, "names": ["dog"]},
  {"object_id": 21, "x": 5, "y": 5, "w": 10, "h": 10, "names": ["Dog "]}]}
{"image_id": 3, "width": 10, "height": 10, "objects": [
  {"object_id": 30, "x": 1, "y": 1, "w": 2, "h": 2, "names": ["cup"]}]}
"#;

    const RELATIONS: &str = r#"[
 {"image_id": 1, "relationships": [{"subject_id": 10, "predicate": "wearing", "object_id": 11}]},
 {"image_id": 2, "relationships": [{"subject_id": 20, "predicate": "near", "object_id": 21}]}
]"#;

    #[test]
    fn scene_graph_counts() {
        let (bundles, stats) =
            load_scene_graph(OBJECTS.as_bytes(), RELATIONS.as_bytes(), "".as_bytes()).unwrap();
        assert_eq!(bundles.len(), 3);
        assert_eq!(
            (stats.image_count, stats.object_count, stats.relation_count, stats.region_count),
            (3, 5, 2, 0)
        );
        assert_eq!(bundles[0].objects[0].category, "man");
        assert_eq!(bundles[1].objects[1].category, "dog");
        assert!(bundles.iter().all(|b| b.regions.is_empty()));
        assert!(bundles.iter().all(|b| b.validate().is_empty()));
    }

    #[test]
    fn inverted_object_is_dropped_and_counted() {
        let src = r#"{"image_id": "a", "width": 100, "height": 100, "objects": [
            {"object_id": 1, "x": 10, "y": 10, "w": -5, "h": 20, "names": ["x"]},
            {"object_id": 2, "x": 10, "y": 10, "w": 5, "h": 20, "names": ["y"]}]}"#;
        let (bundles, stats) = load_scene_graph(src.as_bytes(), io::empty(), io::empty()).unwrap();
        assert_eq!(bundles[0].objects.len(), 1);
        assert_eq!(stats.objects_invalid, 1);
        assert_eq!(stats.objects_in(), 2);
    }

    #[test]
    fn relation_to_dropped_object_is_dropped() {
        let objs = r#"{"image_id": 1, "width": 10, "height": 10, "objects": [
            {"object_id": 1, "x": 1, "y": 1, "w": 2, "h": 2, "names": ["a"]},
            {"object_id": 2, "x": 1, "y": 1, "w": 0, "h": 2, "names": ["b"]}]}"#;
        let rels = r#"{"image_id": 1, "relationships": [
            {"subject_id": 1, "predicate": "on", "object_id": 2},
            {"subject_id": 1, "predicate": "on", "object_id": 1}]}
            {"image_id": 99, "relationships": [{"subject_id": 1, "predicate": "on", "object_id": 2}]}"#;
        let (bundles, stats) = load_scene_graph(objs.as_bytes(), rels.as_bytes(), io::empty()).unwrap();
        assert!(bundles[0].relations.is_empty());
        assert_eq!(stats.relations_invalid, 3);
    }

    #[test]
    fn regions_are_attached() {
        let regs = r#"[{"image_id": 3, "regions": [
            {"x": 0, "y": 0, "w": 5, "h": 5, "phrase": " a red cup "},
            {"x": 0, "y": 0, "w": 5, "h": 5, "phrase": ""}]}]"#;
        let (bundles, stats) = load_scene_graph(OBJECTS.as_bytes(), io::empty(), regs.as_bytes()).unwrap();
        assert_eq!(bundles[2].regions.len(), 1);
        assert_eq!(bundles[2].regions[0].phrase, "a red cup");
        assert_eq!(stats.regions_invalid, 1);
    }

    #[test]
    fn parse_error_reports_offset() {
        let src = "{\"image_id\": 1, \"width\": 10, \"height\": 10}\n{\"image_id\": 2, \"width\": }";
        let err = load_scene_graph(src.as_bytes(), io::empty(), io::empty()).unwrap_err();
        match err {
            IngestError::Parse { offset, .. } => assert!(offset > 43, "offset {offset}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    const DETECTION: &str = r#"{
  "images": [{"id": 1, "file_name": "a.jpg", "width": 100, "height": 80},
             {"id": 2, "file_name": "b.jpg", "width": 60, "height": 60}],
  "annotations": [
    {"id": 1, "image_id": 1, "category_id": 3, "bbox": [0, 0, 10, 10]},
    {"id": 2, "image_id": 1, "category_id": 4, "bbox": [90, 10, 30, 10]},
    {"id": 3, "image_id": 2, "category_id": 3, "bbox": [5, 5, 10, 10]},
    {"id": 4, "image_id": 2, "category_id": 3, "bbox": [20, 5, 10, 10]},
    {"id": 4, "image_id": 2, "category_id": 3, "bbox": [30, 5, 10, 10]}],
  "categories": [{"id": 3, "name": "Person"}, {"id": 4, "name": "car"}]
}"#;

    #[test]
    fn detection_loading() {
        let (bundles, stats) = load_detection(DETECTION.as_bytes()).unwrap();
        assert_eq!(bundles.len(), 2);
        assert_eq!(bundles.iter().map(|b| b.objects.len()).sum::<usize>(), 4);
        assert_eq!(stats.objects_invalid, 1, "duplicate id dropped");
        // x_max 120 clamped to the 100px width
        assert_eq!(bundles[0].objects[1].bbox, PixelBox::new(90.0, 10.0, 100.0, 20.0));
        assert_eq!(bundles[0].objects[0].category, "person");
        assert_eq!(bundles[0].image.uri, "a.jpg");
        assert!(bundles.iter().all(|b| b.relations.is_empty() && b.regions.is_empty()));
    }

    #[test]
    fn detection_as_json_lines() {
        let lines = r#"{"categories": [{"id": 1, "name": "cat"}]}
{"images": [{"id": "x", "width": 10, "height": 10}]}
{"annotations": [{"id": 1, "image_id": "x", "category_id": 1, "bbox": [1, 1, 3, 3]}]}"#;
        let (bundles, _) = load_detection(lines.as_bytes()).unwrap();
        assert_eq!(bundles[0].objects[0].category, "cat");
    }

    fn bundle_with(n: usize, side: f64) -> ImageBundle {
        let mut b = ImageBundle::new(ImageRecord::new(format!("img{n}"), "u", 1000, 1000));
        for i in 0..n {
            b.objects.push(ObjectAnn {
                object_id: i.to_string(),
                image_id: b.image.image_id.clone(),
                bbox: PixelBox::new(0.0, 0.0, side, side),
                category: "box".into(),
            });
        }
        b
    }

    #[test]
    fn object_cap_boundary() {
        let input = vec![bundle_with(14, 50.0), bundle_with(15, 50.0), bundle_with(16, 50.0)];
        let (kept, stats) = filter_for_bootstrap(input, &FilterConfig::default());
        let ids: Vec<_> = kept.iter().map(|b| b.image.image_id.as_str()).collect();
        assert_eq!(ids, ["img14", "img15"]);
        assert_eq!(stats.images_dropped_by_object_cap, 1);
        assert_eq!(stats.objects_in_dropped_images, 16);
    }

    #[test]
    fn area_boundary_is_strict() {
        let mut b = ImageBundle::new(ImageRecord::new("i", "u", 1000, 1000));
        for (id, w, h) in [("a", 40.0, 50.0), ("b", 41.0, 50.0), ("c", 10.0, 10.0)] {
            b.objects.push(ObjectAnn {
                object_id: id.into(),
                image_id: "i".into(),
                bbox: PixelBox::new(0.0, 0.0, w, h),
                category: "x".into(),
            });
        }
        let (kept, stats) = filter_for_bootstrap(vec![b], &FilterConfig::default());
        assert_eq!(kept[0].candidates, vec!["b".to_string()]);
        assert_eq!(kept[0].objects.len(), 3);
        assert_eq!(stats.objects_dropped_by_area, 2);
    }

    #[test]
    fn filter_is_idempotent() {
        let input = vec![bundle_with(3, 60.0), bundle_with(20, 60.0), bundle_with(2, 10.0)];
        let cfg = FilterConfig::default();
        let (once, _) = filter_for_bootstrap(input, &cfg);
        let (twice, _) = filter_for_bootstrap(once.clone(), &cfg);
        assert_eq!(once, twice);
    }
}
