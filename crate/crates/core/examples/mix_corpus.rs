//! Mix a scene-graph source with a down-weighted detection source and
//! write the corpus as JSON lines.
//!
//! cargo run --example mix_corpus [out.jsonl]

use std::fs::File;
use std::io::BufWriter;

use anyhow::Result;
use rc_instruct::assembler::{self, MixSpec, Source};
use rc_instruct::bootstrap::{self, mock::PerfectOracle, BootstrapConfig};
use rc_instruct::ingest::{self, FilterConfig};
use rc_instruct::{Task, TemplateBank};

fn main() -> Result<()> {
    let data = |f: &str| -> Result<&'static [u8]> {
        Ok(match f {
            "objects" => include_bytes!("data/vg_objects.json"),
            "relations" => include_bytes!("data/vg_relations.json"),
            "regions" => include_bytes!("data/vg_regions.json"),
            _ => include_bytes!("data/o365.json"),
        })
    };
    let (vg, _) = ingest::load_scene_graph(data("objects")?, data("relations")?, data("regions")?)?;
    let (det, _) = ingest::load_detection(data("o365")?)?;
    let (mut det, _) = ingest::filter_for_bootstrap(det, &FilterConfig::default());
    let boot = bootstrap::run_bootstrap(&PerfectOracle, &det, &BootstrapConfig::default())?;
    bootstrap::attach_expressions(&mut det, &boot.expressions);

    let sources = vec![
        Source { name: "vg".into(), bundles: vg },
        Source { name: "o365".into(), bundles: det },
    ];
    let spec = MixSpec::new([("vg", 1.0), ("o365", 0.1)], 42).with_epoch_size(50);
    let tasks: Vec<Task> = Task::ALL.into_iter().filter(|t| *t != Task::MultichoiceVqa).collect();
    let corpus = assembler::assemble(&sources, &spec, &tasks, TemplateBank::builtin())?;

    println!("{}", serde_json::to_string_pretty(&corpus.manifest)?);
    println!("by provenance: {:?}", assembler::provenance_counts(&corpus.samples));
    match std::env::args().nth(1) {
        Some(path) => assembler::serialize(&corpus.samples, BufWriter::new(File::create(path)?))?,
        None => {
            for s in corpus.samples.iter().take(3) {
                println!("{}", serde_json::to_string(s)?);
            }
        }
    }
    Ok(())
}
