//! Generate one sample for every task variant from a hand-built bundle.
//!
//! cargo run --example task_generation

use anyhow::Result;
use rc_instruct::model::{ImageBundle, ImageRecord, ObjectAnn, PixelBox, RegionDesc, RelationTriplet, Task};
use rc_instruct::taskgen::{TaskGenerator, TaskSpec};
use rc_instruct::TemplateBank;

fn object(id: &str, category: &str, b: [f64; 4]) -> ObjectAnn {
    ObjectAnn {
        object_id: id.into(),
        image_id: "kitchen".into(),
        bbox: PixelBox::new(b[0], b[1], b[2], b[3]),
        category: category.into(),
    }
}

fn main() -> Result<()> {
    let mut bundle = ImageBundle::new(ImageRecord::new("kitchen", "kitchen.jpg", 1000, 800));
    bundle.objects = vec![
        object("w", "woman", [400.0, 100.0, 600.0, 780.0]),
        object("c1", "cup", [100.0, 300.0, 180.0, 380.0]),
        object("c2", "cup", [220.0, 310.0, 290.0, 390.0]),
        object("k", "kettle", [750.0, 500.0, 900.0, 700.0]),
    ];
    bundle.relations = vec![RelationTriplet {
        subject_id: "w".into(),
        predicate: "looking at".into(),
        object_id: "k".into(),
    }];
    bundle.regions = vec![RegionDesc {
        image_id: "kitchen".into(),
        bbox: PixelBox::new(750.0, 500.0, 900.0, 700.0),
        phrase: "a steel kettle on the stove".into(),
    }];

    let gen = TaskGenerator::new(TemplateBank::builtin(), "demo");
    for task in Task::ALL.into_iter().filter(|t| *t != Task::MultichoiceVqa) {
        for variant in task.variants() {
            let spec = TaskSpec::new(task, variant, 7)?;
            match gen.generate(&bundle, &spec) {
                Ok(s) => println!("{}", serde_json::to_string(&s)?),
                Err(e) => println!("{task}#{variant}: skipped ({e})"),
            }
        }
    }

    let options = ["a kettle", "a toaster", "a cup"].map(String::from);
    let spec = TaskSpec::new(Task::MultichoiceVqa, 1, 7)?;
    let mc = gen.multichoice("kitchen", "What is on the stove?", &options, 0, &spec)?;
    println!("{}", serde_json::to_string(&mc)?);
    Ok(())
}
