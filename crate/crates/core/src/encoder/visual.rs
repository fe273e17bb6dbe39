use crate::error::{ensure_arg, Result};
use crate::nn::{add_assign, add_outer, ParamId, ParameterStore};

/// RGB image, `height × width × 3` row-major, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        ensure_arg!(width > 0 && height > 0, "empty image");
        ensure_arg!(
            data.len() == width * height * 3,
            "pixel buffer has {} values, expected {}",
            data.len(),
            width * height * 3
        );
        ensure_arg!(data.iter().all(|v| v.is_finite()), "non-finite pixel value");
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Flattened patch at grid cell `(gy, gx)`, ordered row, column, channel.
    pub fn patch(&self, patch: usize, gy: usize, gx: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * patch * patch);
        for dy in 0..patch {
            let y = gy * patch + dy;
            let start = 3 * (y * self.width + gx * patch);
            out.extend_from_slice(&self.data[start..start + 3 * patch]);
        }
        out
    }
}

/// Backbone output Γ: `D` channels over a `grid_h × grid_w` grid, stored cell-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub dim: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch: usize,
    pub image_id: Option<u64>,
    cells: Vec<f64>,
}

impl FeatureMap {
    pub fn from_cells(
        dim: usize,
        grid_h: usize,
        grid_w: usize,
        patch: usize,
        cells: Vec<f64>,
    ) -> Result<Self> {
        ensure_arg!(cells.len() == dim * grid_h * grid_w, "feature map buffer has wrong length");
        ensure_arg!(cells.iter().all(|v| v.is_finite()), "non-finite feature value");
        Ok(Self {
            dim,
            grid_h,
            grid_w,
            patch,
            image_id: None,
            cells,
        })
    }

    /// `(D, Gh, Gw)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.dim, self.grid_h, self.grid_w)
    }

    pub fn num_cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn cell(&self, gy: usize, gx: usize) -> &[f64] {
        let i = (gy * self.grid_w + gx) * self.dim;
        &self.cells[i..i + self.dim]
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn image_width(&self) -> usize {
        self.grid_w * self.patch
    }

    pub fn image_height(&self) -> usize {
        self.grid_h * self.patch
    }
}

/// Γ cell = `tanh(W_patch · patch + b + pos[cell])`.
pub fn encode_image(
    params: &ParameterStore,
    dim: usize,
    patch: usize,
    image: &Image,
) -> Result<FeatureMap> {
    ensure_arg!(patch > 0, "patch size must be positive");
    ensure_arg!(
        image.width().is_multiple_of(patch) && image.height().is_multiple_of(patch),
        "image {}×{} is not divisible by patch size {}",
        image.width(),
        image.height(),
        patch
    );
    let (grid_h, grid_w) = (image.height() / patch, image.width() / patch);
    let patch_len = 3 * patch * patch;
    let weight = params.get(ParamId::PatchW);
    let bias = params.get(ParamId::PatchB);
    let pos = params.get(ParamId::Pos);
    ensure_arg!(
        weight.len() == dim * patch_len && bias.len() == dim,
        "patch projection does not match dim {dim} and patch {patch}"
    );
    ensure_arg!(
        pos.len() == grid_h * grid_w * dim,
        "positional grid does not match a {grid_h}×{grid_w} feature map"
    );
    let mut cells = Vec::with_capacity(grid_h * grid_w * dim);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let x = image.patch(patch, gy, gx);
            let cell = gy * grid_w + gx;
            let p = &pos[cell * dim..(cell + 1) * dim];
            for (d, row) in weight.chunks_exact(patch_len).enumerate() {
                let pre: f64 = row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + bias[d] + p[d];
                cells.push(pre.tanh());
            }
        }
    }
    FeatureMap::from_cells(dim, grid_h, grid_w, patch, cells)
}

/// Accumulates encoder gradients given `dL/dΓ` (cell-major, same layout as the map).
pub fn encode_image_backward(
    grads: &mut ParameterStore,
    image: &Image,
    map: &FeatureMap,
    d_cells: &[f64],
) {
    let dim = map.dim;
    let patch = map.patch;
    let mut d_pre = vec![0.0; dim];
    for gy in 0..map.grid_h {
        for gx in 0..map.grid_w {
            let cell = gy * map.grid_w + gx;
            let out = map.cell(gy, gx);
            let d_out = &d_cells[cell * dim..(cell + 1) * dim];
            if d_out.iter().all(|v| *v == 0.0) {
                continue;
            }
            for ((dp, o), g) in d_pre.iter_mut().zip(out).zip(d_out) {
                *dp = g * (1.0 - o * o);
            }
            let x = image.patch(patch, gy, gx);
            add_outer(grads.get_mut(ParamId::PatchW), &d_pre, &x);
            add_assign(grads.get_mut(ParamId::PatchB), &d_pre);
            add_assign(&mut grads.get_mut(ParamId::Pos)[cell * dim..(cell + 1) * dim], &d_pre);
        }
    }
}
