use super::pool::{attention_pool, attention_pool_backward, PoolCache};
use super::visual::FeatureMap;
use crate::error::{ensure_arg, Result};
use crate::geometry::BBox;
use crate::nn::{axpy, ParameterStore};

/// Bilinear taps of one sample point: `(cell index, weight)`.
pub type Taps = [(usize, f64); 4];

/// `grid × grid` sampled vectors plus the taps used to produce them.
#[derive(Debug, Clone)]
pub struct RoiSamples {
    pub grid: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub taps: Vec<Taps>,
}

fn axis_taps(coord: f64, size: usize) -> (usize, usize, f64) {
    let c = coord.clamp(0.0, (size - 1) as f64);
    if size == 1 {
        return (0, 0, 0.0);
    }
    let lo = (c.floor() as usize).min(size - 2);
    (lo, lo + 1, c - lo as f64)
}

/// RoI-align with one bilinear sample at the center of each of the `grid × grid`
/// bins. Cell `(gy, gx)` is centered at pixel `((gx + ½)P, (gy + ½)P)`.
pub fn roi_align(map: &FeatureMap, bbox: &BBox, grid: usize) -> Result<RoiSamples> {
    ensure_arg!(grid >= 1, "roi grid must be at least 1");
    ensure_arg!(bbox.is_valid(), "degenerate box {:?}", bbox);
    let (w, h) = (map.image_width() as f64, map.image_height() as f64);
    ensure_arg!(
        bbox.within(w, h),
        "box [{}, {}, {}, {}] lies outside the {}×{} image",
        bbox.x1,
        bbox.y1,
        bbox.x2,
        bbox.y2,
        w,
        h
    );
    let dim = map.dim;
    let patch = map.patch as f64;
    let mut values = Vec::with_capacity(grid * grid * dim);
    let mut taps = Vec::with_capacity(grid * grid);
    let step_x = bbox.width() / grid as f64;
    let step_y = bbox.height() / grid as f64;
    for j in 0..grid {
        let y = bbox.y1 + (j as f64 + 0.5) * step_y;
        let (y0, y1, fy) = axis_taps(y / patch - 0.5, map.grid_h);
        for i in 0..grid {
            let x = bbox.x1 + (i as f64 + 0.5) * step_x;
            let (x0, x1, fx) = axis_taps(x / patch - 0.5, map.grid_w);
            let t: Taps = [
                (y0 * map.grid_w + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * map.grid_w + x1, (1.0 - fy) * fx),
                (y1 * map.grid_w + x0, fy * (1.0 - fx)),
                (y1 * map.grid_w + x1, fy * fx),
            ];
            let mut v = vec![0.0; dim];
            for &(cell, weight) in &t {
                if weight != 0.0 {
                    axpy(&mut v, weight, &map.cells()[cell * dim..(cell + 1) * dim]);
                }
            }
            values.extend_from_slice(&v);
            taps.push(t);
        }
    }
    Ok(RoiSamples {
        grid,
        dim,
        values,
        taps,
    })
}

/// Scatters `dL/dsamples` back onto the feature-map gradient buffer.
pub fn roi_align_backward(samples: &RoiSamples, d_values: &[f64], d_cells: &mut [f64]) {
    let dim = samples.dim;
    for (t, dv) in samples.taps.iter().zip(d_values.chunks_exact(dim)) {
        for &(cell, weight) in t {
            if weight != 0.0 {
                axpy(&mut d_cells[cell * dim..(cell + 1) * dim], weight, dv);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegionCache {
    pub samples: RoiSamples,
    pub pool: PoolCache,
}

/// Appearance feature of a box: attention pooling over its RoI-align grid.
pub fn region_feature(
    params: &ParameterStore,
    map: &FeatureMap,
    bbox: &BBox,
    grid: usize,
) -> Result<(Vec<f64>, RegionCache)> {
    let samples = roi_align(map, bbox, grid)?;
    let (v, pool) = attention_pool(params, map.dim, &samples.values)?;
    Ok((v, RegionCache { samples, pool }))
}

pub fn region_feature_backward(
    params: &ParameterStore,
    grads: &mut ParameterStore,
    cache: &RegionCache,
    d_out: &[f64],
    d_cells: &mut [f64],
) {
    let d_samples = attention_pool_backward(params, grads, &cache.pool, d_out);
    roi_align_backward(&cache.samples, &d_samples, d_cells);
}
