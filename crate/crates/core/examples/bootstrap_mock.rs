//! Self-consistent description bootstrapping against simulated models.
//!
//! The jitter oracle re-grounds every description to the true box shifted
//! right by a fixed offset, so the retained fraction falls as the offset
//! grows past what the IoU threshold tolerates.
//!
//! cargo run --example bootstrap_mock

use anyhow::Result;
use rc_instruct::bootstrap::mock::{FixedBoxOracle, JitterOracle, PerfectOracle};
use rc_instruct::bootstrap::{self, BootstrapConfig};
use rc_instruct::ingest::{self, FilterConfig};
use rc_instruct::NormBox;

const DETECTIONS: &str = include_str!("data/o365.json");

fn main() -> Result<()> {
    let (bundles, _) = ingest::load_detection(DETECTIONS.as_bytes())?;
    let (bundles, _) = ingest::filter_for_bootstrap(bundles, &FilterConfig::default());
    let cfg = BootstrapConfig::default();

    let out = bootstrap::run_bootstrap(&PerfectOracle, &bundles, &cfg)?;
    println!("perfect oracle: {:?}", out.report);

    let corner = FixedBoxOracle::new(NormBox::new(0.95, 0.95, 1.0, 1.0)?);
    println!("corner oracle: {:?}", bootstrap::run_bootstrap(&corner, &bundles, &cfg)?.report);

    for delta in [0.01, 0.05, 0.1, 0.2, 0.3] {
        let out = bootstrap::run_bootstrap(&JitterOracle::new(delta), &bundles, &cfg)?;
        println!(
            "jitter {delta:.2}: retained {}/{} mean iou {:.3}",
            out.report.retained, out.report.generated, out.report.mean_iou_retained
        );
    }

    // re-filtering stored records needs no model calls
    let mut records = bootstrap::run_bootstrap(&JitterOracle::new(0.05), &bundles, &cfg)?.expressions;
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let r = bootstrap::refilter(&mut records, lambda);
        println!("lambda {lambda:.2}: retained {}", r.retained);
    }
    for e in records.iter().take(2) {
        println!("{}", serde_json::to_string(e)?);
    }
    Ok(())
}
