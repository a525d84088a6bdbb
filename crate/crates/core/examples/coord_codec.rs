//! Pixel boxes to coordinate text and back, plus overlap and position.
//!
//! cargo run --example coord_codec

use anyhow::Result;
use rc_instruct::geometry::{self, CoordText};
use rc_instruct::model::{ImageRecord, PixelBox};

fn main() -> Result<()> {
    let image = ImageRecord::new("demo", "demo.jpg", 800, 600);
    let man = PixelBox::new(320.0, 120.0, 480.0, 540.0);
    let dog = PixelBox::new(60.0, 380.0, 180.0, 520.0);

    let man_n = geometry::normalize(&man, &image)?;
    let dog_n = geometry::normalize(&dog, &image)?;
    let man_t = geometry::quantize(&man_n)?;
    let dog_t = geometry::quantize(&dog_n)?;
    println!("man {man_t}");
    println!("dog {dog_t}");

    // the text form parses back to exactly the quantized box
    let back = CoordText::try_from(man_t.to_string())?;
    assert_eq!(back.to_box(), man_t.to_box());

    let answer = format!("The dog {dog_t} is left of the man {man_t}; also [0.5,0.5] and [1.2,0,1,1].");
    let scan = geometry::scan_coords(&answer);
    println!("parsed {} boxes, rejected {}", scan.boxes.len(), scan.rejected);
    for b in &scan.boxes {
        println!("  {:?} point={}", b.as_array(), b.is_point());
    }

    println!("iou(man, dog) = {:.3}", geometry::iou(&man_n, &dog_n));
    let shifted = geometry::parse_coords("[0.425,0.200,0.625,0.900]")[0];
    println!("iou(man, shifted man) = {:.3}", geometry::iou(&man_n, &shifted));
    match geometry::quadrant(&man_n, &dog_n) {
        Some(p) => println!("dog is at the {} of the man", p.phrase()),
        None => println!("dog and man share a center"),
    }
    Ok(())
}
