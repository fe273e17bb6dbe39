//! Axis-aligned boxes and the 18-entry pairwise spatial encoding.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::nn::{Mlp, MlpCache, ParameterStore};

/// Length of the raw spatial encoding `p`.
pub const SPATIAL_DIM: usize = 18;
/// Offset inside `log(p + ε)`.
pub const LOG_EPS: f64 = 1e-6;

/// Pixel-space box with `x1 < x2`, `y1 < y2`. Serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        ensure_arg!(
            [x1, y1, x2, y2].iter().all(|v| v.is_finite()),
            "box coordinates must be finite"
        );
        ensure_arg!(x1 < x2 && y1 < y2, "degenerate box [{x1}, {y1}, {x2}, {y2}]");
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }

    /// Clamps to `[0, width] × [0, height]`; fails if nothing is left.
    pub fn clamp_to(&self, width: f64, height: f64) -> Result<Self> {
        BBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }
}

fn check(b: &BBox) -> Result<()> {
    ensure_arg!(b.is_valid(), "degenerate box {:?}", b);
    Ok(())
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    check(a)?;
    check(b)?;
    let inter = a.intersection_area(b);
    Ok(inter / (a.area() + b.area() - inter))
}

/// Smallest box covering both inputs.
pub fn union_box(a: &BBox, b: &BBox) -> Result<BBox> {
    check(a)?;
    check(b)?;
    Ok(BBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
    })
}

/// Raw spatial encoding of a human/object box pair. Entry layout:
///
/// | index | value |
/// |-------|-------|
/// | 0..6  | human `cx/W, cy/H, w/W, h/H, w/h, area/(W·H)` |
/// | 6..12 | object, same six cues |
/// | 12    | IoU |
/// | 13    | area(human) / area(object) |
/// | 14    | `|Δcx| / W` |
/// | 15    | `|Δcy| / H` |
/// | 16    | quadrant code `([Δcx ≥ 0] + 2·[Δcy ≥ 0]) / 3` |
/// | 17    | `sqrt((Δcx/W)² + (Δcy/H)²)` |
///
/// `Δ` is object center minus human center. Boxes are clamped to the image first.
pub fn spatial_features(
    human: &BBox,
    object: &BBox,
    image_w: f64,
    image_h: f64,
) -> Result<[f64; SPATIAL_DIM]> {
    ensure_arg!(
        image_w > 0.0 && image_h > 0.0 && image_w.is_finite() && image_h.is_finite(),
        "image dimensions must be positive, got {image_w}×{image_h}"
    );
    let h = human.clamp_to(image_w, image_h)?;
    let o = object.clamp_to(image_w, image_h)?;
    let mut p = [0.0; SPATIAL_DIM];
    for (slot, b) in [(0, &h), (6, &o)] {
        let (cx, cy) = b.center();
        p[slot] = cx / image_w;
        p[slot + 1] = cy / image_h;
        p[slot + 2] = b.width() / image_w;
        p[slot + 3] = b.height() / image_h;
        p[slot + 4] = b.width() / b.height();
        p[slot + 5] = b.area() / (image_w * image_h);
    }
    p[12] = iou(&h, &o)?;
    p[13] = h.area() / o.area();
    let (hx, hy) = h.center();
    let (ox, oy) = o.center();
    let dx = (ox - hx) / image_w;
    let dy = (oy - hy) / image_h;
    p[14] = dx.abs();
    p[15] = dy.abs();
    p[16] = (f64::from(u8::from(dx >= 0.0)) + 2.0 * f64::from(u8::from(dy >= 0.0))) / 3.0;
    p[17] = (dx * dx + dy * dy).sqrt();
    Ok(p)
}

/// `[p ; log(p + ε)]`, the input to the spatial embedding network.
pub fn spatial_input(p: &[f64]) -> Result<Vec<f64>> {
    ensure_arg!(p.len() == SPATIAL_DIM, "spatial encoding has length {}, expected 18", p.len());
    ensure_arg!(
        p.iter().all(|v| v.is_finite() && *v >= 0.0),
        "spatial encoding entries must be finite and non-negative"
    );
    let mut x = Vec::with_capacity(2 * SPATIAL_DIM);
    x.extend_from_slice(p);
    x.extend(p.iter().map(|v| (v + LOG_EPS).ln()));
    Ok(x)
}

/// `v_sp = F_sp([p ; log(p + ε)])`.
pub fn embed_spatial(
    params: &ParameterStore,
    net: &Mlp,
    p: &[f64],
) -> Result<(Vec<f64>, MlpCache)> {
    let x = spatial_input(p)?;
    ensure_arg!(net.hidden.input == x.len(), "spatial network expects {} inputs", net.hidden.input);
    Ok(net.forward(params, &x))
}
