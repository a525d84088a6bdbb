//! Turning annotation bundles into single-turn instruction dialogues.
//!
//! Each generator is a pure function of `(bundle, TaskSpec)`: the template
//! and the sampled annotation come from an RNG keyed on the `TaskSpec` seed, the
//! image id, the task and the variant.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, CoarsePosition, CoordText, GeometryError, NormBox};
use crate::model::{DialogueSample, ImageBundle, ObjectAnn, PixelBox, Task};
use crate::seed;
use crate::templates::{instantiate_template, BankKey, TemplateBank, TemplateError};

/// Generator identifier recorded in sample provenance.
pub const GENERATOR_VERSION: &str = concat!("rc-instruct-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("skipped: {0}")]
    Skipped(&'static str),
    #[error("variant {variant} is not valid for task {task}")]
    InvalidVariant { task: Task, variant: u8 },
    #[error("task {0} is not generated from image annotations")]
    NotAnnotationTask(Task),
    #[error("multiple choice needs 2 to 26 options, got {0}")]
    OptionCount(usize),
    #[error("correct option {index} out of range for {count} options")]
    CorrectIndex { index: usize, count: usize },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl TaskError {
    pub fn is_skip(&self) -> bool {
        matches!(self, TaskError::Skipped(_))
    }
}

/// Which task to generate, which template bank variant, and the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: Task,
    pub variant: u8,
    pub rng_seed: u64,
}

impl TaskSpec {
    pub fn new(task: Task, variant: u8, rng_seed: u64) -> Result<Self, TaskError> {
        if !task.variants().contains(&variant) {
            return Err(TaskError::InvalidVariant { task, variant });
        }
        Ok(Self {
            task,
            variant,
            rng_seed,
        })
    }

    fn rng(&self, image_id: &str) -> ChaCha8Rng {
        seed::rng_for(
            self.rng_seed,
            &[image_id.as_bytes(), self.task.as_str().as_bytes(), &[self.variant]],
        )
    }

    fn bank(&self) -> BankKey {
        BankKey::new(self.task, self.variant)
    }
}

/// What an answer lists for each matching object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerShape {
    Coordinates,
    Categories,
    Both,
}

impl AnswerShape {
    pub fn for_relation_detect(variant: u8) -> Self {
        match variant {
            1 => AnswerShape::Coordinates,
            2 => AnswerShape::Categories,
            _ => AnswerShape::Both,
        }
    }

    pub fn for_spatial(variant: u8) -> Self {
        match variant {
            1 => AnswerShape::Both,
            2 => AnswerShape::Categories,
            _ => AnswerShape::Coordinates,
        }
    }
}

/// Reading order: top to bottom, then left to right, then by id.
pub fn reading_order(a: &ObjectAnn, b: &ObjectAnn) -> std::cmp::Ordering {
    a.bbox
        .y_min
        .total_cmp(&b.bbox.y_min)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then_with(|| a.object_id.cmp(&b.object_id))
}

/// Render answer objects, which must already be in reading order.
///
/// Coordinates are space separated, categories comma separated, and the
/// combined form interleaves `coords category` pairs with single spaces.
pub fn render_answer(
    objects: &[&ObjectAnn],
    bundle: &ImageBundle,
    shape: AnswerShape,
) -> Result<String, GeometryError> {
    let coords = || -> Result<Vec<String>, GeometryError> {
        objects
            .iter()
            .map(|o| coord_text(&o.bbox, bundle).map(String::from))
            .collect()
    };
    Ok(match shape {
        AnswerShape::Coordinates => coords()?.join(" "),
        AnswerShape::Categories => objects
            .iter()
            .map(|o| o.category.as_str())
            .collect::<Vec<_>>()
            .join(", "),
        AnswerShape::Both => coords()?
            .into_iter()
            .zip(objects)
            .map(|(c, o)| format!("{c} {}", o.category))
            .collect::<Vec<_>>()
            .join(" "),
    })
}

fn coord_text(b: &PixelBox, bundle: &ImageBundle) -> Result<CoordText, GeometryError> {
    geometry::quantize(&geometry::normalize(b, &bundle.image)?)
}

fn sorted(mut objs: Vec<&ObjectAnn>) -> Vec<&ObjectAnn> {
    objs.sort_by(|a, b| reading_order(a, b));
    objs
}

/// Objects related to `subject_id` through `predicate`, in reading order.
pub fn related_objects<'a>(bundle: &'a ImageBundle, subject_id: &str, predicate: &str) -> Vec<&'a ObjectAnn> {
    let ids: BTreeSet<&str> = bundle
        .relations
        .iter()
        .filter(|r| r.subject_id == subject_id && r.predicate == predicate)
        .map(|r| r.object_id.as_str())
        .collect();
    sorted(bundle.objects.iter().filter(|o| ids.contains(o.object_id.as_str())).collect())
}

/// Objects other than `reference` whose center lies at `position` relative to
/// it, in reading order.
pub fn objects_at<'a>(
    bundle: &'a ImageBundle,
    reference: &ObjectAnn,
    position: CoarsePosition,
) -> Result<Vec<&'a ObjectAnn>, GeometryError> {
    let r = geometry::normalize(&reference.bbox, &bundle.image)?;
    let mut out = Vec::new();
    for o in &bundle.objects {
        if o.object_id == reference.object_id {
            continue;
        }
        let c = geometry::normalize(&o.bbox, &bundle.image)?;
        if geometry::quadrant(&r, &c) == Some(position) {
            out.push(o);
        }
    }
    Ok(sorted(out))
}

/// Objects of `category`, in reading order.
pub fn objects_of<'a>(bundle: &'a ImageBundle, category: &str) -> Vec<&'a ObjectAnn> {
    sorted(bundle.objects.iter().filter(|o| o.category == category).collect())
}

fn categories(bundle: &ImageBundle) -> Vec<&str> {
    let set: BTreeSet<&str> = bundle.objects.iter().map(|o| o.category.as_str()).collect();
    set.into_iter().collect()
}

/// A grounded phrase usable for grounding / grounding-caption samples.
fn grounded_phrases(bundle: &ImageBundle) -> Vec<(&str, &PixelBox)> {
    bundle
        .regions
        .iter()
        .map(|r| (r.phrase.as_str(), &r.bbox))
        .chain(
            bundle
                .expressions
                .iter()
                .filter(|e| e.retained && !e.text.trim().is_empty())
                .map(|e| (e.text.as_str(), &e.bbox)),
        )
        .collect()
}

/// Instantiates task templates against annotation bundles.
#[derive(Debug, Clone)]
pub struct TaskGenerator<'b> {
    bank: &'b TemplateBank,
    provenance: String,
}

impl<'b> TaskGenerator<'b> {
    /// `source` names the dataset; it is combined with the generator version
    /// into each sample's provenance tag.
    pub fn new(bank: &'b TemplateBank, source: &str) -> Self {
        Self {
            bank,
            provenance: provenance_tag(source),
        }
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    fn render(
        &self,
        spec: &TaskSpec,
        rng: &mut ChaCha8Rng,
        bindings: BTreeMap<&str, String>,
    ) -> Result<String, TaskError> {
        let template = self
            .bank
            .templates(spec.bank())
            .choose(rng)
            .ok_or(TemplateError::EmptyBank(spec.bank().name()))?;
        Ok(instantiate_template(template, &bindings)?)
    }

    fn sample(&self, bundle: &ImageBundle, task: Task, user: String, assistant: String) -> DialogueSample {
        DialogueSample::single_turn(
            bundle.image.image_id.clone(),
            task,
            user,
            assistant,
            self.provenance.clone(),
        )
    }

    fn check(spec: &TaskSpec, task: Task) -> Result<(), TaskError> {
        if spec.task != task || !task.variants().contains(&spec.variant) {
            return Err(TaskError::InvalidVariant {
                task,
                variant: spec.variant,
            });
        }
        Ok(())
    }

    /// Dispatch on `spec.task`. Multiple-choice VQA is not generated from
    /// bundles; use [`TaskGenerator::multichoice`].
    pub fn generate(&self, bundle: &ImageBundle, spec: &TaskSpec) -> Result<DialogueSample, TaskError> {
        match spec.task {
            Task::RelationQa => self.relation_qa(bundle, spec),
            Task::RelationDetect => self.relation_detect(bundle, spec),
            Task::Spatial => self.spatial(bundle, spec),
            Task::Counting => self.counting(bundle, spec),
            Task::Detection => self.detection(bundle, spec),
            Task::Grounding => self.grounding(bundle, spec),
            Task::GroundCaption => self.ground_caption(bundle, spec),
            Task::MultichoiceVqa => Err(TaskError::NotAnnotationTask(Task::MultichoiceVqa)),
        }
    }

    /// Ask for the predicate between the boxes of a random triplet.
    pub fn relation_qa(&self, bundle: &ImageBundle, spec: &TaskSpec) -> Result<DialogueSample, TaskError> {
        Self::check(spec, Task::RelationQa)?;
        let mut rng = spec.rng(&bundle.image.image_id);
        let rel = bundle
            .relations
            .choose(&mut rng)
            .ok_or(TaskError::Skipped("no relations"))?;
        let (s, o) = match (bundle.object(&rel.subject_id), bundle.object(&rel.object_id)) {
            (Some(s), Some(o)) => (s, o),
            _ => return Err(TaskError::Skipped("dangling relation")),
        };
        let bindings = BTreeMap::from([
            ("subject", coord_text(&s.bbox, bundle)?.into()),
            ("object", coord_text(&o.bbox, bundle)?.into()),
        ]);
        let user = self.render(spec, &mut rng, bindings)?;
        Ok(self.sample(bundle, Task::RelationQa, user, rel.predicate.clone()))
    }

    /// Ask for every object linked to a subject by a predicate.
    pub fn relation_detect(&self, bundle: &ImageBundle, spec: &TaskSpec) -> Result<DialogueSample, TaskError> {
        Self::check(spec, Task::RelationDetect)?;
        let mut rng = spec.rng(&bundle.image.image_id);
        let rel = bundle
            .relations
            .choose(&mut rng)
            .ok_or(TaskError::Skipped("no relations"))?;
        let subject = bundle
            .object(&rel.subject_id)
            .ok_or(TaskError::Skipped("dangling relation"))?;
        let answer = related_objects(bundle, &rel.subject_id, &rel.predicate);
        if answer.is_empty() {
            return Err(TaskError::Skipped("empty answer set"));
        }
        let bindings = BTreeMap::from([
            ("relation", rel.predicate.clone()),
            ("subject", coord_text(&subject.bbox, bundle)?.into()),
        ]);
        let user = self.render(spec, &mut rng, bindings)?;
        let assistant = render_answer(&answer, bundle, AnswerShape::for_relation_detect(spec.variant))?;
        Ok(self.sample(bundle, Task::RelationDetect, user, assistant))
    }

    /// Pick a reference object and try the four positions in random order,
    /// keeping the first one that has at least one object.
    pub fn spatial(&self, bundle: &ImageBundle, spec: &TaskSpec) -> Result<DialogueSample, TaskError> {
        Self::check(spec, Task::Spatial)?;
        if bundle.objects.len() < 2 {
            return Err(TaskError::Skipped("fewer than two objects"));
        }
        let mut rng = spec.rng(&bundle.image.image_id);
        let reference = bundle.objects.choose(&mut rng).expect("non-empty");
        let mut positions = CoarsePosition::ALL;
        positions.shuffle(&mut rng);
        for position in positions {
            match self.spatial_at_with(bundle, spec, reference, position, &mut rng) {
                Err(TaskError::Skipped(_)) => continue,
                other => return other,
            }
        }
        Err(TaskError::Skipped("no object in any position"))
    }

    /// Spatial sample for a fixed reference object and position.
    pub fn spatial_at(
        &self,
        bundle: &ImageBundle,
        spec: &TaskSpec,
        reference: &ObjectAnn,
        position: CoarsePosition,
    ) -> Result<DialogueSample, TaskError> {
        Self::check(spec, Task::Spatial)?;
        let mut rng = spec.rng(&bundle.image.image_id);
        self.spatial_at_with(bundle, spec, reference, position, &mut rng)
    }

    fn spatial_at_with(
        &self,
        bundle: &ImageBundle,
        spec: &TaskSpec,
        reference: &ObjectAnn,
        position: CoarsePosition,
        rng: &mut ChaCha8Rng,
    ) -> Result<DialogueSample, TaskError> {
        let answer = objects_at(bundle, reference, position)?;
        if answer.is_empty() {
            return Err(TaskError::Skipped("empty position"));
        }
        let bindings = BTreeMap::from([
            ("loc", position.phrase().to_string()),
            ("object", coord_text(&reference.bbox, bundle)?.into()),
        ]);
        let user = self.render(spec, rng, bindings)?;
        let assistant = render_answer(&answer, bundle, AnswerShape::for_spatial(spec.variant))?;
        Ok(self.sample(bundle, Task::Spatial, user, assistant))
    }

    /// Variant 1 names a category, variant 2 points at an exemplar object.
    pub fn counting(&self, bundle: &ImageBundle, spec: &TaskSpec) -> Result<DialogueSample, TaskError> {
        Self::check(spec, Task::Counting)?;
        let mut rng = spec.rng(&bundle.image.image_id);
        let (category, bindings) = self.category_prompt(bundle, spec.variant, &mut rng)?;
        let count = objects_of(bundle, &category).len();
        let user = self.render(spec, &mut rng, bindings)?;
        Ok(self.sample(bundle, Task::Counting, user, count.to_string()))
    }

    /// Same prompts as counting; the answer lists every matching box.
    pub fn detection(&self, bundle: &ImageBundle, spec: &TaskSpec) -> Result<DialogueSample, TaskError> {
        Self::check(spec, Task::Detection)?;
        let mut rng = spec.rng(&bundle.image.image_id);
        let (category, bindings) = self.category_prompt(bundle, spec.variant, &mut rng)?;
        let answer = objects_of(bundle, &category);
        let user = self.render(spec, &mut rng, bindings)?;
        let assistant = render_answer(&answer, bundle, AnswerShape::Coordinates)?;
        Ok(self.sample(bundle, Task::Detection, user, assistant))
    }

    fn category_prompt(
        &self,
        bundle: &ImageBundle,
        variant: u8,
        rng: &mut ChaCha8Rng,
    ) -> Result<(String, BTreeMap<&'static str, String>), TaskError> {
        if variant == 1 {
            let category = categories(bundle)
                .choose(rng)
                .ok_or(TaskError::Skipped("no objects"))?
                .to_string();
            Ok((category.clone(), BTreeMap::from([("category", category)])))
        } else {
            let exemplar = bundle.objects.choose(rng).ok_or(TaskError::Skipped("no objects"))?;
            Ok((
                exemplar.category.clone(),
                BTreeMap::from([("object", coord_text(&exemplar.bbox, bundle)?.into())]),
            ))
        }
    }

    /// Phrase in the prompt, box in the answer.
    pub fn grounding(&self, bundle: &ImageBundle, spec: &TaskSpec) -> Result<DialogueSample, TaskError> {
        Self::check(spec, Task::Grounding)?;
        let mut rng = spec.rng(&bundle.image.image_id);
        let (phrase, bbox) = *grounded_phrases(bundle)
            .choose(&mut rng)
            .ok_or(TaskError::Skipped("no grounded phrases"))?;
        let coords = coord_text(bbox, bundle)?;
        let user = self.render(spec, &mut rng, BTreeMap::from([("expr", phrase.to_string())]))?;
        Ok(self.sample(bundle, Task::Grounding, user, coords.into()))
    }

    /// Box in the prompt, phrase in the answer.
    pub fn ground_caption(&self, bundle: &ImageBundle, spec: &TaskSpec) -> Result<DialogueSample, TaskError> {
        Self::check(spec, Task::GroundCaption)?;
        let mut rng = spec.rng(&bundle.image.image_id);
        let (phrase, bbox) = *grounded_phrases(bundle)
            .choose(&mut rng)
            .ok_or(TaskError::Skipped("no grounded phrases"))?;
        let coords = coord_text(bbox, bundle)?;
        let user = self.render(spec, &mut rng, BTreeMap::from([("object", coords.into())]))?;
        Ok(self.sample(bundle, Task::GroundCaption, user, phrase.to_string()))
    }

    /// Multiple-choice question with lettered options.
    pub fn multichoice(
        &self,
        image_id: &str,
        question: &str,
        options: &[String],
        correct_index: usize,
        spec: &TaskSpec,
    ) -> Result<DialogueSample, TaskError> {
        Self::check(spec, Task::MultichoiceVqa)?;
        if !(2..=26).contains(&options.len()) {
            return Err(TaskError::OptionCount(options.len()));
        }
        if correct_index >= options.len() {
            return Err(TaskError::CorrectIndex {
                index: correct_index,
                count: options.len(),
            });
        }
        let letter = |i: usize| char::from(b'A' + i as u8);
        let block = options
            .iter()
            .enumerate()
            .map(|(i, o)| format!("{}. {o}", letter(i)))
            .collect::<Vec<_>>()
            .join("\n");
        let mut rng = spec.rng(image_id);
        let user = self.render(
            spec,
            &mut rng,
            BTreeMap::from([("question", question.to_string()), ("options", block)]),
        )?;
        let assistant = format!("{}. {}", letter(correct_index), options[correct_index]);
        Ok(DialogueSample::single_turn(
            image_id,
            Task::MultichoiceVqa,
            user,
            assistant,
            self.provenance.clone(),
        ))
    }
}

pub fn provenance_tag(source: &str) -> String {
    format!("{source}/{GENERATOR_VERSION}")
}

/// Whether the generator for `task` can produce a sample from `bundle`.
pub fn is_feasible(bundle: &ImageBundle, task: Task) -> bool {
    match task {
        Task::RelationQa | Task::RelationDetect => bundle.relations.iter().any(|r| {
            bundle.object(&r.subject_id).is_some() && bundle.object(&r.object_id).is_some()
        }),
        Task::Spatial => spatial_feasible(bundle),
        Task::Counting | Task::Detection => !bundle.objects.is_empty(),
        Task::Grounding | Task::GroundCaption => !grounded_phrases(bundle).is_empty(),
        Task::MultichoiceVqa => false,
    }
}

/// Every object must have at least one neighbour in some position, because
/// the spatial generator samples the reference object before the position.
fn spatial_feasible(bundle: &ImageBundle) -> bool {
    let boxes: Vec<Option<NormBox>> = bundle
        .objects
        .iter()
        .map(|o| geometry::normalize(&o.bbox, &bundle.image).ok())
        .collect();
    if boxes.len() < 2 || boxes.iter().any(Option::is_none) {
        return false;
    }
    boxes.iter().enumerate().all(|(i, r)| {
        boxes
            .iter()
            .enumerate()
            .any(|(j, c)| i != j && geometry::quadrant(r.as_ref().unwrap(), c.as_ref().unwrap()).is_some())
    })
}
