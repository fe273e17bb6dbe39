use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GtInstance;
use crate::encoder::Image;
use crate::error::Result;
use crate::geometry::union_box;

const HUMAN_RGB: [f64; 3] = [0.95, 0.72, 0.55];
const TEXTURE_LO: f64 = 0.1;
const TEXTURE_HI: f64 = 0.9;

/// Binary texture of a verb at absolute pixel `(x, y)`. Every pattern has period 8
/// in both axes, so it lines up identically with an 8-pixel patch grid.
pub fn verb_pattern(verb: usize, x: usize, y: usize) -> bool {
    match verb % 8 {
        0 => (x / 2).is_multiple_of(2),
        1 => (y / 2).is_multiple_of(2),
        2 => ((x + y) / 2).is_multiple_of(2),
        3 => ((x + 8 - y % 8) / 2).is_multiple_of(2),
        4 => (x + y).is_multiple_of(2),
        5 => (x / 4 + y / 4).is_multiple_of(2),
        6 => (x / 4).is_multiple_of(2),
        _ => (y / 4).is_multiple_of(2),
    }
}

fn object_rgb(class: usize) -> [f64; 3] {
    let hue = (class as f64 * 0.618_033_988_75).fract();
    hsv_to_rgb(hue, 0.85, 0.9)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match (i as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn fill(img: &mut Image, x1: f64, y1: f64, x2: f64, y2: f64, mut color: impl FnMut(usize, usize) -> [f64; 3]) {
    let xs = x1.max(0.0).round() as usize..(x2.round() as usize).min(img.width());
    let ys = y1.max(0.0).round() as usize..(y2.round() as usize).min(img.height());
    for y in ys {
        for x in xs.clone() {
            img.set_pixel(x, y, color(x, y));
        }
    }
}

/// Draws a scene: noisy gray background, a verb texture over each interaction's
/// union box, then the human (fixed color) and object (class color) rectangles on top.
pub fn render_scene(width: usize, height: usize, instances: &[GtInstance], seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::filled(width, height, [0.0; 3]);
    for y in 0..height {
        for x in 0..width {
            let rgb = [0; 3].map(|_| 0.45 + rng.random_range(-0.05..0.05));
            img.set_pixel(x, y, rgb);
        }
    }
    for g in instances {
        let u = union_box(&g.human_box, &g.object_box)?;
        fill(&mut img, u.x1, u.y1, u.x2, u.y2, |x, y| {
            let v = if verb_pattern(g.verb, x, y) { TEXTURE_HI } else { TEXTURE_LO };
            [v; 3]
        });
    }
    for g in instances {
        let h = &g.human_box;
        fill(&mut img, h.x1, h.y1, h.x2, h.y2, |_, _| HUMAN_RGB);
        let o = &g.object_box;
        let rgb = object_rgb(g.object_class);
        fill(&mut img, o.x1, o.y1, o.x2, o.y2, |_, _| rgb);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patterns_are_periodic_and_distinct() {
        for v in 0..8 {
            for y in 0..16 {
                for x in 0..16 {
                    assert_eq!(verb_pattern(v, x, y), verb_pattern(v, x + 8, y + 8));
                }
            }
        }
        let tile = |v: usize| (0..64).map(|i| verb_pattern(v, i % 8, i / 8)).collect::<Vec<_>>();
        for a in 0..8 {
            for b in a + 1..8 {
                assert_ne!(tile(a), tile(b), "verbs {a} and {b} share a texture");
            }
        }
    }
}
