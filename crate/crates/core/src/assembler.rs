//! Weighted source mixing, per-image task selection and corpus serialization.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DialogueSample, ImageBundle, Task};
use crate::seed;
use crate::taskgen::{self, TaskGenerator, TaskSpec, GENERATOR_VERSION};
use crate::templates::TemplateBank;

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("invalid mix: {0}")]
    Config(String),
    #[error("source `{0}` has no usable images")]
    EmptySource(String),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub source: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub entries: Vec<MixEntry>,
    /// Number of draws; `None` means the total image count of all sources.
    pub epoch_size: Option<usize>,
    pub seed: u64,
}

impl MixSpec {
    pub fn new(entries: impl IntoIterator<Item = (impl Into<String>, f64)>, seed: u64) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(s, w)| MixEntry {
                    source: s.into(),
                    weight: w,
                })
                .collect(),
            epoch_size: None,
            seed,
        }
    }

    pub fn with_epoch_size(mut self, n: usize) -> Self {
        self.epoch_size = Some(n);
        self
    }

    pub fn validate(&self) -> Result<(), AssembleError> {
        if self.entries.is_empty() {
            return Err(AssembleError::Config("no sources".into()));
        }
        for e in &self.entries {
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(AssembleError::Config(format!(
                    "weight of `{}` must be positive, got {}",
                    e.source, e.weight
                )));
            }
            if e.source.is_empty() || e.source.contains('/') {
                return Err(AssembleError::Config(format!("bad source name `{}`", e.source)));
            }
        }
        let mut names: Vec<&str> = self.entries.iter().map(|e| e.source.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(AssembleError::Config("duplicate source name".into()));
        }
        Ok(())
    }
}

/// Pick a (task, variant) uniformly among those feasible for `bundle`.
pub fn select_task<R: Rng + ?Sized>(bundle: &ImageBundle, allowed: &[Task], rng: &mut R) -> Option<TaskSpec> {
    let pairs: Vec<(Task, u8)> = allowed
        .iter()
        .filter(|t| taskgen::is_feasible(bundle, **t))
        .flat_map(|t| t.variants().map(move |v| (*t, v)))
        .collect();
    let &(task, variant) = pairs.choose(rng)?;
    Some(TaskSpec {
        task,
        variant,
        rng_seed: rng.random(),
    })
}

/// One mixer draw: which source, and which item of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub source: usize,
    pub item: usize,
}

/// Draw `epoch_size` slots. Each slot picks a source with probability
/// proportional to its weight, then takes the next item of that source's
/// shuffled cycle; a source is reshuffled each time its cycle runs out.
///
/// `lens[i]` is the item count of `spec.entries[i]`.
pub fn mix(lens: &[usize], spec: &MixSpec) -> Result<Vec<Draw>, AssembleError> {
    spec.validate()?;
    if lens.len() != spec.entries.len() {
        return Err(AssembleError::Config("source count does not match mix entries".into()));
    }
    if let Some(i) = lens.iter().position(|&n| n == 0) {
        return Err(AssembleError::EmptySource(spec.entries[i].source.clone()));
    }
    let epoch = spec.epoch_size.unwrap_or_else(|| lens.iter().sum());
    let weights = WeightedIndex::new(spec.entries.iter().map(|e| e.weight))
        .map_err(|e| AssembleError::Config(e.to_string()))?;
    let mut rng = seed::rng_for(spec.seed, &[b"mix"]);

    struct Cycle {
        order: Vec<usize>,
        pos: usize,
        round: u64,
    }
    let mut cycles: Vec<Cycle> = lens
        .iter()
        .map(|&n| Cycle {
            order: (0..n).collect(),
            pos: n,
            round: 0,
        })
        .collect();

    let mut draws = Vec::with_capacity(epoch);
    for _ in 0..epoch {
        let s = weights.sample(&mut rng);
        let c = &mut cycles[s];
        if c.pos == c.order.len() {
            let mut r = seed::rng_for(
                spec.seed,
                &[b"cycle", spec.entries[s].source.as_bytes(), &c.round.to_le_bytes()],
            );
            c.order.sort_unstable();
            c.order.shuffle(&mut r);
            c.pos = 0;
            c.round += 1;
        }
        draws.push(Draw {
            source: s,
            item: c.order[c.pos],
        });
        c.pos += 1;
    }
    Ok(draws)
}

/// A named stream of image bundles.
#[derive(Debug, Clone)]
pub struct Source {
    pub name: String,
    pub bundles: Vec<ImageBundle>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    /// Images with at least one feasible allowed task.
    pub usable_images: u64,
    pub drawn: u64,
    pub emitted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator_version: String,
    pub seed: u64,
    pub mix: MixSpec,
    pub epoch_size: usize,
    pub allowed_tasks: Vec<Task>,
    pub sources: BTreeMap<String, SourceCounts>,
    pub tasks: BTreeMap<String, u64>,
    pub skipped: u64,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub samples: Vec<DialogueSample>,
    pub manifest: Manifest,
}

/// Mix `sources` per `spec` and generate one sample per draw.
///
/// Images on which no allowed task is feasible are removed before mixing.
/// Generation runs on the current rayon pool; the output order is the draw
/// order whatever the pool size.
pub fn assemble(
    sources: &[Source],
    spec: &MixSpec,
    allowed: &[Task],
    bank: &TemplateBank,
) -> Result<Corpus, AssembleError> {
    spec.validate()?;
    let mut by_name: BTreeMap<&str, &Source> = BTreeMap::new();
    for s in sources {
        by_name.insert(s.name.as_str(), s);
    }
    let mut usable: Vec<Vec<&ImageBundle>> = Vec::with_capacity(spec.entries.len());
    for e in &spec.entries {
        let src = by_name
            .get(e.source.as_str())
            .ok_or_else(|| AssembleError::Config(format!("unknown source `{}`", e.source)))?;
        let list: Vec<&ImageBundle> = src
            .bundles
            .iter()
            .filter(|b| allowed.iter().any(|t| taskgen::is_feasible(b, *t)))
            .collect();
        usable.push(list);
    }
    let lens: Vec<usize> = usable.iter().map(Vec::len).collect();
    let draws = mix(&lens, spec)?;

    let generators: Vec<TaskGenerator> = spec
        .entries
        .iter()
        .map(|e| TaskGenerator::new(bank, &e.source))
        .collect();
    let results: Vec<Option<DialogueSample>> = draws
        .par_iter()
        .enumerate()
        .map(|(slot, d)| {
            let bundle = usable[d.source][d.item];
            let mut rng = seed::rng_for(spec.seed, &[b"slot", &(slot as u64).to_le_bytes()]);
            let task = select_task(bundle, allowed, &mut rng)?;
            match generators[d.source].generate(bundle, &task) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::debug!("slot {slot} ({}): {e}", bundle.image.image_id);
                    None
                }
            }
        })
        .collect();

    let mut counts: BTreeMap<String, SourceCounts> = BTreeMap::new();
    for (e, list) in spec.entries.iter().zip(&usable) {
        counts.entry(e.source.clone()).or_default().usable_images = list.len() as u64;
    }
    let mut tasks: BTreeMap<String, u64> = BTreeMap::new();
    let mut samples = Vec::with_capacity(results.len());
    let mut skipped = 0;
    for (d, r) in draws.iter().zip(results) {
        let c = counts.get_mut(&spec.entries[d.source].source).expect("entry present");
        c.drawn += 1;
        match r {
            Some(s) => {
                c.emitted += 1;
                *tasks.entry(s.task.as_str().to_string()).or_default() += 1;
                samples.push(s);
            }
            None => skipped += 1,
        }
    }
    let manifest = Manifest {
        generator_version: GENERATOR_VERSION.to_string(),
        seed: spec.seed,
        mix: spec.clone(),
        epoch_size: draws.len(),
        allowed_tasks: allowed.to_vec(),
        sources: counts,
        tasks,
        skipped,
    };
    Ok(Corpus { samples, manifest })
}

/// Source name of a provenance tag (`"<source>/<generator>"`).
pub fn provenance_source(tag: &str) -> &str {
    tag.split_once('/').map_or(tag, |(s, _)| s)
}

/// Count samples per source as recorded in their provenance tags.
pub fn provenance_counts(samples: &[DialogueSample]) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for s in samples {
        *out.entry(provenance_source(&s.provenance).to_string()).or_default() += 1;
    }
    out
}

/// Write one JSON object per line.
pub fn serialize<W: Write>(samples: &[DialogueSample], mut out: W) -> Result<(), AssembleError> {
    for s in samples {
        serde_json::to_writer(&mut out, s).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn serialize_to_vec(samples: &[DialogueSample]) -> Vec<u8> {
    let mut buf = Vec::new();
    serialize(samples, &mut buf).expect("writing to memory cannot fail");
    buf
}

/// Parse a corpus written by [`serialize`]. Blank lines are ignored.
pub fn deserialize<R: BufRead>(input: R) -> Result<Vec<DialogueSample>, AssembleError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = serde_json::from_str(&line).map_err(|e| AssembleError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}
