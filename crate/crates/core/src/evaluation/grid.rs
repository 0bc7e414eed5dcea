use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};

pub type Cell = (usize, usize);

/// Cells of a `G x G` grid occupied by one method's samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GridOccupancy {
    pub grid_size: usize,
    pub cells: BTreeSet<Cell>,
    pub method_label: String,
}

impl GridOccupancy {
    pub fn new(grid_size: usize, method_label: impl Into<String>) -> Self {
        GridOccupancy {
            grid_size,
            cells: BTreeSet::new(),
            method_label: method_label.into(),
        }
    }

    pub fn from_cells(
        grid_size: usize,
        method_label: impl Into<String>,
        cells: impl IntoIterator<Item = Cell>,
    ) -> Result<Self> {
        let mut occ = GridOccupancy::new(grid_size, method_label);
        for (r, c) in cells {
            if r >= grid_size || c >= grid_size {
                return Err(Error::shape(
                    format!("cell within {grid_size}x{grid_size}"),
                    format!("({r}, {c})"),
                ));
            }
            occ.cells.insert((r, c));
        }
        Ok(occ)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Grid cell of every input point plus per-label occupancy.
#[derive(Debug, Clone)]
pub struct GridAssignment {
    pub grid_size: usize,
    pub point_cells: Vec<Cell>,
    pub occupancy: BTreeMap<String, GridOccupancy>,
}

fn bin(v: f64, g: usize) -> usize {
    ((v * g as f64).floor().max(0.0) as usize).min(g - 1)
}

/// Min-max normalizes both axes over the pooled points, then bins each point
/// into `(row, col) = (⌊y·G⌋, ⌊x·G⌋)`, clamped to `G - 1`. An axis with zero
/// extent maps every point to index 0.
pub fn grid_assign(
    points: &[[f64; 2]],
    labels: &[String],
    grid_size: usize,
) -> Result<GridAssignment> {
    if grid_size == 0 {
        return Err(Error::Config("grid size must be at least 1".into()));
    }
    if points.len() != labels.len() {
        return Err(Error::shape(
            format!("{} labels", points.len()),
            labels.len(),
        ));
    }
    if points.is_empty() {
        return Err(Error::Degenerate("no points to assign".into()));
    }
    if points
        .iter()
        .any(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err(Error::Numeric("non-finite embedding coordinate".into()));
    }
    let extent = |axis: usize| {
        let lo = points.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let hi = points
            .iter()
            .map(|p| p[axis])
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi - lo)
    };
    let (x_min, x_span) = extent(0);
    let (y_min, y_span) = extent(1);
    if x_span == 0.0 && y_span == 0.0 {
        return Err(Error::Degenerate(
            "all embedded points coincide; grid extent is zero".into(),
        ));
    }
    let norm = |v: f64, min: f64, span: f64| if span == 0.0 { 0.0 } else { (v - min) / span };

    let mut occupancy: BTreeMap<String, GridOccupancy> = BTreeMap::new();
    let mut point_cells = Vec::with_capacity(points.len());
    for (p, label) in points.iter().zip(labels) {
        let cell = (
            bin(norm(p[1], y_min, y_span), grid_size),
            bin(norm(p[0], x_min, x_span), grid_size),
        );
        point_cells.push(cell);
        occupancy
            .entry(label.clone())
            .or_insert_with(|| GridOccupancy::new(grid_size, label.clone()))
            .cells
            .insert(cell);
    }
    Ok(GridAssignment {
        grid_size,
        point_cells,
        occupancy,
    })
}

/// Default grid side: `⌈√N⌉` for `N` pooled samples.
pub fn default_grid_size(pooled_samples: usize) -> usize {
    let mut g = (pooled_samples as f64).sqrt().ceil() as usize;
    // guard against sqrt rounding for perfect squares
    while g > 1 && (g - 1) * (g - 1) >= pooled_samples {
        g -= 1;
    }
    while g * g < pooled_samples {
        g += 1;
    }
    g.max(1)
}

/// `|A ∩ B| / |A ∪ B|`.
pub fn jaccard_index(a: &GridOccupancy, b: &GridOccupancy) -> Result<f64> {
    if a.grid_size != b.grid_size {
        return Err(Error::shape(
            format!("grid size {}", a.grid_size),
            format!("grid size {}", b.grid_size),
        ));
    }
    let union = a.cells.union(&b.cells).count();
    if union == 0 {
        return Err(Error::Degenerate(
            "Jaccard index of two empty occupancies is undefined".into(),
        ));
    }
    let intersection = a.cells.intersection(&b.cells).count();
    Ok(intersection as f64 / union as f64)
}
