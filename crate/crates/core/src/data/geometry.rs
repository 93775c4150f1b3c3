use serde::{Deserialize, Serialize};

use super::grid::Grid;
use crate::error::{Error, Result};

/// Axis-aligned pixel grid. Pixel `(r, c)` covers
/// `x ∈ [x0 + c·s, x0 + (c+1)·s]`, `y ∈ [y0 + r·s, y0 + (r+1)·s]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(origin: [f64; 2], cell_size: f64, rows: usize, cols: usize) -> Self {
        GridSpec {
            origin,
            cell_size,
            rows,
            cols,
        }
    }

    /// `(x, y)` of a pixel corner; `(r, c)` may equal `rows`/`cols`.
    pub fn corner(&self, r: usize, c: usize) -> [f64; 2] {
        [
            self.origin[0] + c as f64 * self.cell_size,
            self.origin[1] + r as f64 * self.cell_size,
        ]
    }

    pub fn center(&self, r: usize, c: usize) -> [f64; 2] {
        [
            self.origin[0] + (c as f64 + 0.5) * self.cell_size,
            self.origin[1] + (r as f64 + 0.5) * self.cell_size,
        ]
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("pixel grid is empty".into()));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Config(format!("invalid cell size {}", self.cell_size)));
        }
        Ok(())
    }
}

/// A lake outline rasterized onto one sensor grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LakeGeometry {
    pub lake_id: String,
    pub grid: GridSpec,
    pub polygon: Vec<[f64; 2]>,
    pub clean_pixel_mask: Grid<bool>,
}

impl LakeGeometry {
    pub fn new(lake_id: impl Into<String>, grid: GridSpec, polygon: Vec<[f64; 2]>) -> Result<Self> {
        let clean_pixel_mask = build_clean_pixel_mask(&polygon, &grid)?;
        Ok(LakeGeometry {
            lake_id: lake_id.into(),
            grid,
            polygon,
            clean_pixel_mask,
        })
    }

    pub fn clean_pixel_count(&self) -> usize {
        self.clean_pixel_mask.count_true()
    }
}

/// Signed shoelace area (positive for counter-clockwise in x-right/y-up axes).
pub fn polygon_area(polygon: &[[f64; 2]]) -> f64 {
    let n = polygon.len();
    let mut twice = 0.0;
    for i in 0..n {
        let [x0, y0] = polygon[i];
        let [x1, y1] = polygon[(i + 1) % n];
        twice += x0 * y1 - x1 * y0;
    }
    0.5 * twice
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2], eps: f64) -> bool {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    if cross(a, b, p).abs() > eps * len.max(1.0) {
        return false;
    }
    p[0] >= a[0].min(b[0]) - eps
        && p[0] <= a[0].max(b[0]) + eps
        && p[1] >= a[1].min(b[1]) - eps
        && p[1] <= a[1].max(b[1]) + eps
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2], eps: f64) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > eps && d2 < -eps) || (d1 < -eps && d2 > eps)) && ((d3 > eps && d4 < -eps) || (d3 < -eps && d4 > eps)) {
        return true;
    }
    on_segment(a, c, d, eps) || on_segment(b, c, d, eps) || on_segment(c, a, b, eps) || on_segment(d, a, b, eps)
}

/// True when two non-adjacent edges touch or cross.
pub fn is_self_intersecting(polygon: &[[f64; 2]]) -> bool {
    let n = polygon.len();
    let eps = 1e-12 * bbox_extent(polygon).max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (a, b) = (polygon[i], polygon[(i + 1) % n]);
            let (c, d) = (polygon[j], polygon[(j + 1) % n]);
            if segments_intersect(a, b, c, d, eps) {
                return true;
            }
        }
    }
    false
}

fn bbox_extent(polygon: &[[f64; 2]]) -> f64 {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in polygon {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (hi[0] - lo[0]).max(hi[1] - lo[1])
}

/// Point-in-polygon with the boundary counted as inside.
pub fn contains_point(polygon: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = polygon.len();
    let eps = 1e-9 * bbox_extent(polygon).max(1.0);
    for i in 0..n {
        if on_segment(p, polygon[i], polygon[(i + 1) % n], eps) {
            return true;
        }
    }
    let mut inside = false;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Marks pixels whose four corners and centre all lie inside the lake polygon.
pub fn build_clean_pixel_mask(polygon: &[[f64; 2]], grid: &GridSpec) -> Result<Grid<bool>> {
    grid.validate()?;
    if polygon.len() < 3 || polygon.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::EmptyGeometry);
    }
    let extent = bbox_extent(polygon);
    if extent <= 0.0 {
        return Err(Error::EmptyGeometry);
    }
    if is_self_intersecting(polygon) {
        return Err(Error::SelfIntersectingPolygon);
    }
    if polygon_area(polygon).abs() <= 1e-12 * extent.max(1.0).powi(2) {
        return Err(Error::EmptyGeometry);
    }
    // corner containment is shared between neighbouring pixels
    let corners = Grid::from_fn(grid.rows + 1, grid.cols + 1, |r, c| contains_point(polygon, grid.corner(r, c)));
    Ok(Grid::from_fn(grid.rows, grid.cols, |r, c| {
        *corners.get(r, c)
            && *corners.get(r, c + 1)
            && *corners.get(r + 1, c)
            && *corners.get(r + 1, c + 1)
            && contains_point(polygon, grid.center(r, c))
    }))
}
