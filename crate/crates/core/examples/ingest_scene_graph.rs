//! Load a scene-graph corpus and a detection corpus, apply the bootstrap
//! pre-filter and print the statistics.
//!
//! cargo run --example ingest_scene_graph [objects.json relations.json regions.json]

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{Context, Result};
use rc_instruct::ingest::{self, FilterConfig};

fn open(p: &PathBuf) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(p).with_context(|| p.display().to_string())?))
}

fn main() -> Result<()> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let paths = match args.as_slice() {
        [o, r, g] => [o.clone(), r.clone(), g.clone()],
        _ => ["vg_objects.json", "vg_relations.json", "vg_regions.json"].map(|f| data.join(f)),
    };

    let (bundles, stats) = ingest::load_scene_graph(open(&paths[0])?, open(&paths[1])?, open(&paths[2])?)?;
    println!("scene graph: {}", serde_json::to_string_pretty(&stats)?);
    for b in &bundles {
        println!(
            "  image {}: {} objects, {} relations, {} regions",
            b.image.image_id,
            b.objects.len(),
            b.relations.len(),
            b.regions.len()
        );
    }

    let (det, mut det_stats) = ingest::load_detection(open(&data.join("o365.json"))?)?;
    let (kept, filter_stats) = ingest::filter_for_bootstrap(det, &FilterConfig::default());
    det_stats.apply_filter(&filter_stats);
    println!("detection after filter: {}", serde_json::to_string_pretty(&det_stats)?);
    for b in &kept {
        println!("  image {} candidates {:?}", b.image.image_id, b.candidates);
    }
    Ok(())
}
