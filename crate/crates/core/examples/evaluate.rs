//! Score grounding, VQA and counting predictions.
//!
//! cargo run --example evaluate [items.jsonl]

use std::fs::File;
use std::io::BufReader;

use anyhow::Result;
use rc_instruct::eval::{self, EvalItem, Target};
use rc_instruct::NormBox;

fn main() -> Result<()> {
    let items = match std::env::args().nth(1) {
        Some(p) => eval::read_items(BufReader::new(File::open(p)?))?,
        None => {
            let gt = NormBox::new(0.2, 0.2, 0.6, 0.6)?;
            let refs = |v: &[&str]| Target::Vqa(v.iter().map(|s| s.to_string()).collect());
            vec![
                EvalItem::new("g1", Target::Grounding(gt), "It is at [0.200,0.200,0.600,0.600]."),
                EvalItem::new("g2", Target::Grounding(gt), "[0.300,0.200,0.700,0.600]"),
                EvalItem::new("g3", Target::Grounding(gt), "[0.500,0.500,0.900,0.900]"),
                EvalItem::new("g4", Target::Grounding(gt), "no idea"),
                EvalItem::new("v1", refs(&["dog", "dog", "dog", "puppy"]), "The dog."),
                EvalItem::new("v2", refs(&["red", "red", "maroon"]), "maroon"),
                EvalItem::new("c1", Target::Counting(3), "there are 3 cups"),
                EvalItem::new("c2", Target::Counting(2), "two"),
            ]
        }
    };
    for r in eval::evaluate(&items, 0.5) {
        println!("{}: {:.2}% over {} items", r.metric_name, r.value, r.item_count);
        if let Some(note) = &r.note {
            println!("  ({note})");
        }
        for s in &r.per_item {
            println!("  {} -> {}", s.item_id, s.score);
        }
    }
    Ok(())
}
