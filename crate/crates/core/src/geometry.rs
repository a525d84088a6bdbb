//! Box normalization, the coordinate-as-text codec, IoU and coarse positions.
//!
//! Boxes travel through dialogue text as `[x_min,y_min,x_max,y_max]` with each
//! component normalized by the image size and written with exactly three
//! fractional digits, e.g. `[0.222,0.333,0.444,0.555]`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ImageRecord, PixelBox};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box component {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("box is inverted or empty: [{0}, {1}, {2}, {3}]")]
    Degenerate(f64, f64, f64, f64),
    #[error("image {0} has zero size")]
    EmptyImage(String),
    #[error("box collapses when quantized to 3 decimals")]
    CollapsedByQuantization,
    #[error("`{0}` is not a coordinate text")]
    BadCoordText(String),
}

/// Box with components in `[0, 1]`, relative to the image size.
///
/// Constructed boxes have strictly positive extent. The only exception is
/// [`NormBox::point`], used when a transcript refers to a single point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct NormBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl NormBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        for c in [x_min, y_min, x_max, y_max] {
            if !(0.0..=1.0).contains(&c) {
                return Err(GeometryError::OutOfRange(c));
            }
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(GeometryError::Degenerate(x_min, y_min, x_max, y_max));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Zero-extent box at a single point.
    pub fn point(x: f64, y: f64) -> Result<Self, GeometryError> {
        for c in [x, y] {
            if !(0.0..=1.0).contains(&c) {
                return Err(GeometryError::OutOfRange(c));
            }
        }
        Ok(Self {
            x_min: x,
            y_min: y,
            x_max: x,
            y_max: y,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn is_point(&self) -> bool {
        self.x_min == self.x_max && self.y_min == self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }
}

impl TryFrom<[f64; 4]> for NormBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        if v[0] == v[2] && v[1] == v[3] {
            NormBox::point(v[0], v[1])
        } else {
            NormBox::new(v[0], v[1], v[2], v[3])
        }
    }
}

impl From<NormBox> for [f64; 4] {
    fn from(b: NormBox) -> Self {
        b.as_array()
    }
}

/// Canonical text form of a [`NormBox`]: `[a,b,c,d]`, three decimals each.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CoordText(String);

impl CoordText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Parse the text back to a box.
    pub fn to_box(&self) -> NormBox {
        let millis = parse_canonical(&self.0).expect("CoordText holds canonical text");
        NormBox {
            x_min: f64::from(millis[0]) / 1000.0,
            y_min: f64::from(millis[1]) / 1000.0,
            x_max: f64::from(millis[2]) / 1000.0,
            y_max: f64::from(millis[3]) / 1000.0,
        }
    }
}

impl fmt::Display for CoordText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for CoordText {
    type Error = GeometryError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        match parse_canonical(&s) {
            Some(m) if m[0] < m[2] && m[1] < m[3] => Ok(CoordText(s)),
            _ => Err(GeometryError::BadCoordText(s)),
        }
    }
}

impl From<CoordText> for String {
    fn from(c: CoordText) -> Self {
        c.0
    }
}

/// Strict grammar check: `'[' D ',' D ',' D ',' D ']'`, `D = ('0'|'1') '.' ddd`,
/// value at most 1.000. Returns the four components in thousandths.
fn parse_canonical(s: &str) -> Option<[u32; 4]> {
    let inner = s.strip_prefix('[')?.strip_suffix(']')?;
    let mut out = [0u32; 4];
    let mut parts = inner.split(',');
    for slot in out.iter_mut() {
        let p = parts.next()?.as_bytes();
        if p.len() != 5 || p[1] != b'.' || !(p[0] == b'0' || p[0] == b'1') {
            return None;
        }
        if !p[2..].iter().all(u8::is_ascii_digit) {
            return None;
        }
        let v = u32::from(p[0] - b'0') * 1000
            + u32::from(p[2] - b'0') * 100
            + u32::from(p[3] - b'0') * 10
            + u32::from(p[4] - b'0');
        if v > 1000 {
            return None;
        }
        *slot = v;
    }
    if parts.next().is_some() {
        return None;
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarsePosition {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl CoarsePosition {
    pub const ALL: [CoarsePosition; 4] = [
        CoarsePosition::TopLeft,
        CoarsePosition::TopRight,
        CoarsePosition::BottomLeft,
        CoarsePosition::BottomRight,
    ];

    /// Name used inside instructions, e.g. `top-left`.
    pub fn phrase(&self) -> &'static str {
        match self {
            CoarsePosition::TopLeft => "top-left",
            CoarsePosition::TopRight => "top-right",
            CoarsePosition::BottomLeft => "bottom-left",
            CoarsePosition::BottomRight => "bottom-right",
        }
    }
}

impl fmt::Display for CoarsePosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

/// Round a value in `[0, 1]` to thousandths, half away from zero.
///
/// Rounding is done on the shortest decimal representation of the float so
/// that e.g. `0.3335` rounds to `0.334` even though its binary value is
/// slightly below the midpoint.
fn round_millis(x: f64) -> u32 {
    let s = format!("{}", x.abs());
    let (int, frac) = s.split_once('.').unwrap_or((s.as_str(), ""));
    let int: u32 = int.parse().unwrap_or(0);
    let digits: Vec<u32> = frac
        .bytes()
        .map(|b| u32::from(b - b'0'))
        .chain(std::iter::repeat(0))
        .take(4)
        .collect();
    let mut millis = int * 1000 + digits[0] * 100 + digits[1] * 10 + digits[2];
    if digits[3] >= 5 {
        millis += 1;
    }
    millis
}

/// Clamp a pixel box into its image and divide by the image size.
pub fn normalize(bbox: &PixelBox, image: &ImageRecord) -> Result<NormBox, GeometryError> {
    if image.width == 0 || image.height == 0 {
        return Err(GeometryError::EmptyImage(image.image_id.clone()));
    }
    let c = bbox.clamp_to(image.width, image.height);
    let (w, h) = (f64::from(image.width), f64::from(image.height));
    let b = NormBox::new(c.x_min / w, c.y_min / h, c.x_max / w, c.y_max / h)?;
    quantize(&b)?;
    Ok(b)
}

/// Render a box as coordinate text.
pub fn quantize(b: &NormBox) -> Result<CoordText, GeometryError> {
    let m = b.as_array().map(round_millis);
    if m[0] >= m[2] || m[1] >= m[3] {
        return Err(GeometryError::CollapsedByQuantization);
    }
    let text = format!(
        "[{}.{:03},{}.{:03},{}.{:03},{}.{:03}]",
        m[0] / 1000,
        m[0] % 1000,
        m[1] / 1000,
        m[1] % 1000,
        m[2] / 1000,
        m[2] % 1000,
        m[3] / 1000,
        m[3] % 1000
    );
    Ok(CoordText(text))
}

/// Result of scanning free text for coordinate tuples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoordScan {
    /// Well-formed boxes in order of appearance.
    pub boxes: Vec<NormBox>,
    /// Numeric tuples that were found but rejected (arity, range or order).
    pub rejected: usize,
}

fn parse_decimal(s: &str) -> Option<f64> {
    let s = s.trim();
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    if body.is_empty() || body == "." {
        return None;
    }
    let mut dots = 0;
    for b in body.bytes() {
        match b {
            b'0'..=b'9' => {}
            b'.' => dots += 1,
            _ => return None,
        }
    }
    if dots > 1 {
        return None;
    }
    s.parse().ok()
}

/// Scan text for bracketed 4-tuples (boxes) and 2-tuples (points).
///
/// Bracket groups whose contents are not all numbers are ignored. Numeric
/// groups with the wrong arity, components outside `[0, 1]` or inverted
/// corners are counted in [`CoordScan::rejected`].
pub fn scan_coords(text: &str) -> CoordScan {
    let mut scan = CoordScan::default();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let Some(close) = after.find(['[', ']']) else {
            break;
        };
        if after.as_bytes()[close] == b'[' {
            rest = &after[close..];
            continue;
        }
        let inner = &after[..close];
        rest = &after[close + 1..];

        let values: Option<Vec<f64>> = inner.split(',').map(parse_decimal).collect();
        let Some(values) = values else {
            continue;
        };
        let parsed = match *values.as_slice() {
            [x0, y0, x1, y1] => NormBox::new(x0, y0, x1, y1).ok(),
            [x, y] => NormBox::point(x, y).ok(),
            _ => None,
        };
        match parsed {
            Some(b) => scan.boxes.push(b),
            None => scan.rejected += 1,
        }
    }
    scan
}

/// Every well-formed box in `text`, in order. Empty means "no box found".
pub fn parse_coords(text: &str) -> Vec<NormBox> {
    scan_coords(text).boxes
}

/// Intersection over union. Zero for disjoint boxes.
pub fn iou(a: &NormBox, b: &NormBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        // two points
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Slack for threshold tests on IoU values computed in floating point. Boxes
/// on the thousandths grid can have an exact IoU of, say, 0.5 that evaluates
/// to 0.49999999999999994; distinct grid IoUs differ by far more than this.
pub const IOU_EPSILON: f64 = 1e-9;

/// `iou >= threshold`, tolerant of floating-point error.
pub fn iou_meets(iou: f64, threshold: f64) -> bool {
    iou + IOU_EPSILON >= threshold
}

/// Position of `candidate`'s center relative to `reference`'s center.
/// Ties on an axis go right/bottom. `None` when the boxes are identical.
pub fn quadrant(reference: &NormBox, candidate: &NormBox) -> Option<CoarsePosition> {
    if reference == candidate {
        return None;
    }
    let (rx, ry) = reference.center();
    let (cx, cy) = candidate.center();
    Some(match (cx < rx, cy < ry) {
        (true, true) => CoarsePosition::TopLeft,
        (false, true) => CoarsePosition::TopRight,
        (true, false) => CoarsePosition::BottomLeft,
        (false, false) => CoarsePosition::BottomRight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nb(a: f64, b: f64, c: f64, d: f64) -> NormBox {
        NormBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let img = ImageRecord::new("i", "u", 1000, 1000);
        let b = normalize(&PixelBox::new(222.0, 333.0, 444.0, 555.0), &img).unwrap();
        assert_eq!(b, nb(0.222, 0.333, 0.444, 0.555));

        let img = ImageRecord::new("i", "u", 640, 480);
        let b = normalize(&PixelBox::new(0.0, 0.0, 640.0, 480.0), &img).unwrap();
        assert_eq!(b, nb(0.0, 0.0, 1.0, 1.0));

        // y_max clamps from 150 to 100
        let img = ImageRecord::new("i", "u", 200, 100);
        let b = normalize(&PixelBox::new(50.0, 50.0, 150.0, 150.0), &img).unwrap();
        assert_eq!(b, nb(0.25, 0.5, 0.75, 1.0));
    }

    #[test]
    fn normalize_rejects_sub_quantum_box() {
        let img = ImageRecord::new("i", "u", 10_000, 10_000);
        let err = normalize(&PixelBox::new(100.0, 100.0, 102.0, 500.0), &img).unwrap_err();
        assert_eq!(err, GeometryError::CollapsedByQuantization);
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(
            quantize(&nb(0.222, 0.333, 0.444, 0.555)).unwrap().as_str(),
            "[0.222,0.333,0.444,0.555]"
        );
        assert_eq!(
            quantize(&nb(0.2224, 0.3335, 0.4, 0.5)).unwrap().as_str(),
            "[0.222,0.334,0.400,0.500]"
        );
        assert_eq!(
            quantize(&nb(0.0, 0.0, 1.0, 1.0)).unwrap().as_str(),
            "[0.000,0.000,1.000,1.000]"
        );
        assert_eq!(
            quantize(&nb(0.1001, 0.2, 0.1004, 0.3)),
            Err(GeometryError::CollapsedByQuantization)
        );
    }

    #[test]
    fn round_millis_half_away() {
        assert_eq!(round_millis(0.0005), 1);
        assert_eq!(round_millis(0.0004999), 0);
        assert_eq!(round_millis(0.9995), 1000);
        assert_eq!(round_millis(1.0), 1000);
        assert_eq!(round_millis(1e-7), 0);
    }

    #[test]
    fn parse_examples() {
        assert_eq!(
            parse_coords("the cat [0.100,0.200,0.300,0.400] sleeps"),
            vec![nb(0.1, 0.2, 0.3, 0.4)]
        );
        assert_eq!(
            parse_coords("[0.1,0.2,0.3,0.4][0.5,0.5,0.9,0.9]"),
            vec![nb(0.1, 0.2, 0.3, 0.4), nb(0.5, 0.5, 0.9, 0.9)]
        );
        let scan = scan_coords("[0.9,0.2,0.3,0.4]");
        assert!(scan.boxes.is_empty());
        assert_eq!(scan.rejected, 1);
    }

    #[test]
    fn parse_diagnostics_and_points() {
        let scan = scan_coords("[1.5,0,0.2,0.2] [0.1,0.2,0.3] [see note] [0.25, 0.75] [[0.1,0.1,0.2,0.2]");
        assert_eq!(scan.rejected, 2);
        assert_eq!(scan.boxes.len(), 2);
        assert!(scan.boxes[0].is_point());
        assert_eq!(scan.boxes[0].center(), (0.25, 0.75));
        assert_eq!(scan.boxes[1], nb(0.1, 0.1, 0.2, 0.2));
        assert!(parse_coords("[-0.1,0.0,0.2,0.2]").is_empty());
        assert!(parse_coords("no boxes [").is_empty());
    }

    #[test]
    fn iou_examples() {
        let a = nb(0.1, 0.1, 0.5, 0.5);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&nb(0.0, 0.0, 0.4, 0.4), &nb(0.5, 0.5, 0.9, 0.9)), 0.0);
        assert_eq!(iou(&nb(0.0, 0.0, 1.0, 1.0), &nb(0.5, 0.0, 1.0, 1.0)), 0.5);
        let p = NormBox::point(0.2, 0.2).unwrap();
        assert_eq!(iou(&p, &p), 1.0);
        assert_eq!(iou(&p, &a), 0.0);
    }

    #[test]
    fn quadrant_examples() {
        let r = nb(0.4, 0.4, 0.6, 0.6);
        assert_eq!(quadrant(&r, &nb(0.1, 0.1, 0.3, 0.3)), Some(CoarsePosition::TopLeft));
        assert_eq!(quadrant(&r, &r), None);
        assert_eq!(quadrant(&r, &nb(0.6, 0.0, 0.8, 0.2)), Some(CoarsePosition::TopRight));
        assert_eq!(quadrant(&r, &nb(0.0, 0.7, 0.2, 0.9)), Some(CoarsePosition::BottomLeft));
        // same center, different box: ties break right/bottom
        assert_eq!(quadrant(&r, &nb(0.3, 0.3, 0.7, 0.7)), Some(CoarsePosition::BottomRight));
    }

    #[test]
    fn coord_text_grammar() {
        assert!(CoordText::try_from("[0.100,0.200,0.300,0.400]".to_string()).is_ok());
        for bad in [
            "[0.1,0.2,0.3,0.4]",
            "[0.100, 0.200,0.300,0.400]",
            "[1.001,0.200,1.000,0.400]",
            "[2.000,0.200,0.300,0.400]",
            "[0.100,0.200,0.300]",
            "[0.300,0.200,0.100,0.400]",
        ] {
            assert!(CoordText::try_from(bad.to_string()).is_err(), "{bad}");
        }
    }

    #[test]
    fn norm_box_serde_as_array() {
        let b = nb(0.1, 0.2, 0.3, 0.4);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "[0.1,0.2,0.3,0.4]");
        assert_eq!(serde_json::from_str::<NormBox>(&s).unwrap(), b);
        assert!(serde_json::from_str::<NormBox>("[0.3,0.2,0.1,0.4]").is_err());
    }
}
