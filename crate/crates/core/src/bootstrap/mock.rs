//! In-process model clients for tests and examples.
//!
//! The oracles describe an object by spelling out its box in words (so the
//! description carries no coordinate text) and ground a description by
//! reading the box back, optionally perturbed.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::geometry::{self, CoordText, NormBox};
use crate::model::ImageRecord;

use super::{ClientError, ModelClient};

/// `"object 222 333 444 555"` for `[0.222,0.333,0.444,0.555]`.
pub fn encode_box(coords: &CoordText) -> String {
    let b = coords.to_box().as_array();
    let m = b.map(|v| (v * 1000.0).round() as u32);
    format!("object {} {} {} {}", m[0], m[1], m[2], m[3])
}

/// Inverse of [`encode_box`].
pub fn decode_box(description: &str) -> Option<NormBox> {
    let nums: Vec<f64> = description
        .split_whitespace()
        .filter_map(|t| t.parse::<u32>().ok())
        .map(|v| f64::from(v) / 1000.0)
        .collect();
    match nums.as_slice() {
        &[a, b, c, d] => NormBox::new(a, b, c, d).ok(),
        _ => None,
    }
}

fn render(b: Option<NormBox>) -> String {
    match b.and_then(|b| geometry::quantize(&b).ok()) {
        Some(c) => format!("It is at {c}."),
        None => "I cannot find it.".to_string(),
    }
}

/// Grounds every description back to exactly the box it was made from.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerfectOracle;

impl ModelClient for PerfectOracle {
    fn describe(&self, _: &ImageRecord, coords: &CoordText) -> Result<String, ClientError> {
        Ok(encode_box(coords))
    }

    fn ground(&self, _: &ImageRecord, description: &str) -> Result<String, ClientError> {
        Ok(render(decode_box(description)))
    }
}

/// Grounds every description to the same fixed box.
#[derive(Debug, Clone, Copy)]
pub struct FixedBoxOracle {
    target: NormBox,
}

impl FixedBoxOracle {
    pub fn new(target: NormBox) -> Self {
        Self { target }
    }
}

impl ModelClient for FixedBoxOracle {
    fn describe(&self, _: &ImageRecord, coords: &CoordText) -> Result<String, ClientError> {
        Ok(encode_box(coords))
    }

    fn ground(&self, _: &ImageRecord, _: &str) -> Result<String, ClientError> {
        Ok(render(Some(self.target)))
    }
}

/// Grounds to the true box shifted right by `delta`. Boxes pushed past the
/// right edge are clipped; if nothing is left the oracle finds no box.
#[derive(Debug, Clone, Copy)]
pub struct JitterOracle {
    delta: f64,
}

impl JitterOracle {
    pub fn new(delta: f64) -> Self {
        Self { delta }
    }
}

impl ModelClient for JitterOracle {
    fn describe(&self, _: &ImageRecord, coords: &CoordText) -> Result<String, ClientError> {
        Ok(encode_box(coords))
    }

    fn ground(&self, _: &ImageRecord, description: &str) -> Result<String, ClientError> {
        let shifted = decode_box(description).and_then(|b| {
            NormBox::new(
                (b.x_min() + self.delta).min(1.0),
                b.y_min(),
                (b.x_max() + self.delta).min(1.0),
                b.y_max(),
            )
            .ok()
        });
        Ok(render(shifted))
    }
}

/// Returns the same two canned answers for every object.
#[derive(Debug, Clone)]
pub struct ScriptedClient {
    description: String,
    grounding: String,
}

impl ScriptedClient {
    pub fn new(description: impl Into<String>, grounding: impl Into<String>) -> Self {
        Self {
            description: description.into(),
            grounding: grounding.into(),
        }
    }
}

impl ModelClient for ScriptedClient {
    fn describe(&self, _: &ImageRecord, _: &CoordText) -> Result<String, ClientError> {
        Ok(self.description.clone())
    }

    fn ground(&self, _: &ImageRecord, _: &str) -> Result<String, ClientError> {
        Ok(self.grounding.clone())
    }
}

/// Times out on the first `failures` calls (shared across threads), then
/// behaves like [`PerfectOracle`]. Stateful by design.
#[derive(Debug)]
pub struct FailingClient {
    remaining: AtomicUsize,
}

impl FailingClient {
    pub fn new(failures: usize) -> Self {
        Self {
            remaining: AtomicUsize::new(failures),
        }
    }

    fn gate(&self) -> Result<(), ClientError> {
        let prev = self
            .remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1));
        match prev {
            Ok(_) => Err(ClientError::Timeout),
            Err(_) => Ok(()),
        }
    }
}

impl ModelClient for FailingClient {
    fn describe(&self, image: &ImageRecord, coords: &CoordText) -> Result<String, ClientError> {
        self.gate()?;
        PerfectOracle.describe(image, coords)
    }

    fn ground(&self, image: &ImageRecord, description: &str) -> Result<String, ClientError> {
        self.gate()?;
        PerfectOracle.ground(image, description)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_encoding_round_trips() {
        let c = CoordText::try_from("[0.222,0.333,0.444,0.555]".to_string()).unwrap();
        let text = encode_box(&c);
        assert_eq!(text, "object 222 333 444 555");
        assert!(!text.contains('['));
        assert_eq!(decode_box(&text), Some(c.to_box()));
    }
}
