//! Semantic feature tables shared by every world generated from one bank
//! seed, so a word like "kitchen" maps to the same visual statistics in
//! training and held-out worlds.

use super::language::{CATEGORIES, COLORS, ROOM_TYPES, SIZES};
use super::ELEVATIONS;
use crate::autodiff::{Array, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub seed: u64,
    pub f_view: usize,
    pub f_box: usize,
    /// Per room type, `F_view`.
    pub room: Array,
    pub elevation: Array,
    /// Object signature added to the views holding an object's boxes.
    pub category_view: Array,
    pub color_view: Array,
    pub category_box: Array,
    pub color_box: Array,
    pub size_box: Array,
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Array {
    Array::matrix(rows, cols, (0..rows * cols).map(|_| scale * rng.normal()).collect()).expect("positive dims")
}

impl FeatureBank {
    pub fn new(seed: u64, f_view: usize, f_box: usize) -> Self {
        let rng = RngStream::new(seed);
        FeatureBank {
            seed,
            f_view,
            f_box,
            room: gaussian(ROOM_TYPES.len(), f_view, 1.0, &mut rng.fork("room")),
            elevation: gaussian(ELEVATIONS, f_view, 0.3, &mut rng.fork("elevation")),
            category_view: gaussian(CATEGORIES.len(), f_view, 1.0, &mut rng.fork("category_view")),
            color_view: gaussian(COLORS.len(), f_view, 0.5, &mut rng.fork("color_view")),
            category_box: gaussian(CATEGORIES.len(), f_box, 1.0, &mut rng.fork("category_box")),
            color_box: gaussian(COLORS.len(), f_box, 1.0, &mut rng.fork("color_box")),
            size_box: gaussian(SIZES.len(), f_box, 1.0, &mut rng.fork("size_box")),
        }
    }

    /// Box feature for a (category, color, size) triple plus noise.
    pub fn box_feature(&self, category: usize, color: usize, size: usize, noise: f64, rng: &mut RngStream) -> Vec<f64> {
        (0..self.f_box)
            .map(|j| self.category_box.get(category, j) + self.color_box.get(color, j) + self.size_box.get(size, j) + noise * rng.normal())
            .collect()
    }
}
