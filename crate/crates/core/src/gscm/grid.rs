use nalgebra::Point3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::CorrelationDistances;
use crate::seed::{rng_for, stream};

/// Quantities drawn from their own spatially consistent lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LspField {
    Ds,
    Asd,
    Asa,
    Zsd,
    Zsa,
    ShadowFading,
    KFactor,
    Clusters,
    Los,
}

impl LspField {
    pub const ALL: [LspField; 9] = [
        LspField::Ds,
        LspField::Asd,
        LspField::Asa,
        LspField::Zsd,
        LspField::Zsa,
        LspField::ShadowFading,
        LspField::KFactor,
        LspField::Clusters,
        LspField::Los,
    ];

    fn tag(self) -> u64 {
        self as u64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Every point in a cell shares the cell's value.
    #[default]
    NearestCell,
    /// Bilinear weights over the four surrounding lattice nodes, rescaled to
    /// keep unit variance.
    Bilinear,
}

/// Horizontal lattice of standard-normal values, one lattice per field, with
/// cell size equal to the field's correlation distance. Values are derived
/// from the seed and the cell index, so the lattice is unbounded and needs no
/// storage. Each lattice is shifted by a seeded random offset so that the
/// chance of two points sharing a cell depends only on their separation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyGrid {
    pub seed: u64,
    pub cell_size: CorrelationDistances,
    pub mode: Interpolation,
}

fn cell_index(v: f64) -> u64 {
    // Two's-complement reinterpretation keeps negative cells distinct.
    (v.floor() as i64) as u64
}

impl ConsistencyGrid {
    pub fn new(seed: u64, cell_size: CorrelationDistances, mode: Interpolation) -> Self {
        Self { seed, cell_size, mode }
    }

    fn offset(&self, field: LspField) -> (f64, f64) {
        let mut rng = rng_for(self.seed, &[stream::LATTICE_OFFSET, field.tag()]);
        (rng.random::<f64>(), rng.random::<f64>())
    }

    fn node(&self, field: LspField, i: u64, j: u64) -> f64 {
        rng_for(self.seed, &[stream::LSP_GRID, field.tag(), i, j]).sample(StandardNormal)
    }

    /// Standard-normal value of `field` at `p` (horizontal coordinates only).
    pub fn value(&self, field: LspField, p: &Point3<f64>) -> f64 {
        let c = self.cell_size.of(field);
        let (ox, oy) = self.offset(field);
        let u = p.x / c + ox;
        let v = p.y / c + oy;
        match self.mode {
            Interpolation::NearestCell => self.node(field, cell_index(u), cell_index(v)),
            Interpolation::Bilinear => {
                let (i, j) = (cell_index(u), cell_index(v));
                let (fx, fy) = (u - u.floor(), v - v.floor());
                let corners = [
                    ((1.0 - fx) * (1.0 - fy), i, j),
                    (fx * (1.0 - fy), i.wrapping_add(1), j),
                    ((1.0 - fx) * fy, i, j.wrapping_add(1)),
                    (fx * fy, i.wrapping_add(1), j.wrapping_add(1)),
                ];
                let norm = corners.iter().map(|(w, _, _)| w * w).sum::<f64>().sqrt();
                corners
                    .iter()
                    .filter(|(w, _, _)| *w > 0.0)
                    .map(|(w, a, b)| w * self.node(field, *a, *b))
                    .sum::<f64>()
                    / norm
            }
        }
    }
}
