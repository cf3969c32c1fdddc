use std::io::{self, Write};
use std::path::Path;

use super::map::{Region, RoundaboutMap};
use super::path::PathSpec;
use super::primitive::Primitive;
use crate::geometry::{OrientedRect, Pose, Vec2};

/// Side of the square view in pixels.
pub const VIEW_PIXELS: usize = 84;
/// Side of the square view in meters.
pub const VIEW_SIZE_M: f64 = 50.0;
pub const METERS_PER_PIXEL: f64 = VIEW_SIZE_M / VIEW_PIXELS as f64;
pub const CELLS: usize = VIEW_PIXELS * VIEW_PIXELS;

/// Row-major 84×84 grid of 0/1 cells. Row 0 is the far edge ahead of the ego.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryGrid {
    cells: Vec<u8>,
}

impl std::fmt::Debug for BinaryGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryGrid({} set)", self.count_ones())
    }
}

impl Default for BinaryGrid {
    fn default() -> Self {
        Self {
            cells: vec![0; CELLS],
        }
    }
}

impl BinaryGrid {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * VIEW_PIXELS + col]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.cells
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    /// Binary PGM (P5) with maxval 255; set cells are written as 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let header = format!("P5\n{VIEW_PIXELS} {VIEW_PIXELS}\n255\n");
        let mut out = Vec::with_capacity(header.len() + CELLS);
        out.extend_from_slice(header.as_bytes());
        out.extend(self.cells.iter().map(|&c| if c != 0 { 255u8 } else { 0 }));
        out
    }

    pub fn write_pgm(&self, path: &Path) -> io::Result<()> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_pgm())?;
        f.flush()
    }
}

/// Ego-centered, heading-aligned semantic view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewLayers {
    pub navigable: BinaryGrid,
    pub obstacles: BinaryGrid,
    pub path: BinaryGrid,
    pub meters_per_pixel: f64,
}

impl ViewLayers {
    pub fn layers(&self) -> [&BinaryGrid; 3] {
        [&self.navigable, &self.obstacles, &self.path]
    }
}

/// World position of the center of pixel `(row, col)` in the ego view.
pub fn pixel_center(ego: Pose, row: usize, col: usize) -> Vec2 {
    let half = VIEW_PIXELS as f64 / 2.0;
    let right = (col as f64 + 0.5 - half) * METERS_PER_PIXEL;
    let ahead = (half - row as f64 - 0.5) * METERS_PER_PIXEL;
    let f = ego.direction();
    ego.position + f * ahead + f.perp_right() * right
}

/// Renders the 50 m × 50 m window around `ego`, rotated so the ego heading
/// points up. A cell is set iff its center lies inside the shape.
///
/// `vehicles` must include the ego footprint; the path layer shows the part of
/// `ego_path` ahead of `ego_s`.
pub fn rasterize_view(
    map: &RoundaboutMap,
    vehicles: &[OrientedRect],
    ego: Pose,
    ego_path: &PathSpec,
    ego_s: f64,
) -> ViewLayers {
    rasterize_with_margin(map, vehicles, ego, ego_path, ego_s, 0.0)
}

/// Same as [`rasterize_view`] with every shape inflated by `margin` meters
/// (negative values shrink).
pub fn rasterize_with_margin(
    map: &RoundaboutMap,
    vehicles: &[OrientedRect],
    ego: Pose,
    ego_path: &PathSpec,
    ego_s: f64,
    margin: f64,
) -> ViewLayers {
    // Tiny inflation keeps the path band inside the navigable shapes it was
    // built from when a cell center falls exactly on a shared boundary.
    const NAV_SLACK: f64 = 1e-9;
    let reach = VIEW_SIZE_M * std::f64::consts::FRAC_1_SQRT_2 + margin.abs();
    let visible = |c: Vec2, r: f64| (c - ego.position).norm() <= reach + r;

    // every shape carries a bounding circle for a cheap per-pixel reject
    let regions: Vec<(&Region, Vec2, f64)> = map
        .navigable
        .iter()
        .filter_map(|r| {
            let (c, rad) = match r {
                Region::Annulus { center, outer, .. } => (*center, *outer),
                Region::Rect(rect) => (rect.center, rect.bounding_radius()),
                Region::Band(b) => (b.center, b.radius + b.half_width),
            };
            let rad = rad + margin.max(0.0) + 1e-6;
            visible(c, rad).then_some((r, c, rad * rad))
        })
        .collect();
    let cars: Vec<(OrientedRect, Vec2, Vec2, f64)> = vehicles
        .iter()
        .filter(|v| visible(v.center, v.bounding_radius()))
        .map(|v| {
            let (f, l) = v.axes();
            let rad = v.bounding_radius() + margin.max(0.0) + 1e-6;
            (*v, f, l, rad * rad)
        })
        .collect();
    let half_lane = 0.5 * ego_path.lane_width;
    let route: Vec<(Primitive, Vec2, f64)> = ego_path
        .remaining_primitives(ego_s)
        .into_iter()
        .filter_map(|p| {
            let (c, r) = p.bounding_circle(half_lane);
            let r = r + margin.max(0.0) + 1e-6;
            visible(c, r).then_some((p, c, r * r))
        })
        .collect();

    let half = VIEW_PIXELS as f64 / 2.0;
    let f = ego.direction();
    let right_axis = f.perp_right();
    let mut nav = vec![0u8; CELLS];
    let mut obs = vec![0u8; CELLS];
    let mut path = vec![0u8; CELLS];
    for row in 0..VIEW_PIXELS {
        let ahead = (half - row as f64 - 0.5) * METERS_PER_PIXEL;
        for col in 0..VIEW_PIXELS {
            // same arithmetic as `pixel_center`
            let right = (col as f64 + 0.5 - half) * METERS_PER_PIXEL;
            let p = ego.position + f * ahead + right_axis * right;
            let idx = row * VIEW_PIXELS + col;
            nav[idx] = regions
                .iter()
                .any(|(r, c, r2)| (p - *c).norm_sq() <= *r2 && r.contains(p, margin + NAV_SLACK))
                as u8;
            obs[idx] = cars.iter().any(|(v, f, l, r2)| {
                (p - v.center).norm_sq() <= *r2 && v.contains_with_axes(p, *f, *l, margin)
            }) as u8;
            path[idx] = route.iter().any(|(prim, c, r2)| {
                (p - *c).norm_sq() <= *r2 && prim.band_contains(p, half_lane, margin)
            }) as u8;
        }
    }
    ViewLayers {
        navigable: BinaryGrid { cells: nav },
        obstacles: BinaryGrid { cells: obs },
        path: BinaryGrid { cells: path },
        meters_per_pixel: METERS_PER_PIXEL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_roundabout, path_for, GeometryConfig};

    #[test]
    fn pixel_size_is_exact() {
        assert_eq!(METERS_PER_PIXEL, 50.0 / 84.0);
    }

    #[test]
    fn pgm_header_and_values() {
        let g = BinaryGrid::default();
        let bytes = g.to_pgm();
        assert!(bytes.starts_with(b"P5\n84 84\n255\n"));
        assert_eq!(bytes.len(), 13 + CELLS);
    }

    #[test]
    fn ego_heading_points_up() {
        let map = build_roundabout(&GeometryConfig::default()).unwrap();
        let path = path_for(&map, 0, 1, 0.5).unwrap();
        let pose = path.pose_at(5.0);
        // Pixel in the top-center row lies straight ahead.
        let p = pixel_center(pose, 0, 42);
        let ahead = (p - pose.position).dot(pose.direction());
        assert!(ahead > 24.0 && ahead < 25.0);
        // A pixel in the right half lies to the right of the ego.
        let p = pixel_center(pose, 42, 80);
        assert!((p - pose.position).dot(pose.direction().perp_right()) > 20.0);
    }
}
