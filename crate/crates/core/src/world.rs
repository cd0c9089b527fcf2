//! Occupancy-grid world: poses, grid maps, exact ray traversal and the
//! plain-text map format.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(TAU) - PI;
    if r >= PI {
        r -= TAU;
    }
    if r < -PI {
        r = -PI;
    }
    r
}

/// Planar robot pose. `theta` is kept in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn distance_xy(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Rotates the pose by `angle` about the point `(cx, cy)`; the heading
    /// turns with it.
    pub fn rotated_about(&self, cx: f64, cy: f64, angle: f64) -> Pose {
        let (s, c) = angle.sin_cos();
        let dx = self.x - cx;
        let dy = self.y - cy;
        Pose::new(cx + c * dx - s * dy, cy + s * dx + c * dy, self.theta + angle)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::new(0.0, 0.0, 0.0)
    }
}

// Tolerance, in cell units, used when rasterizing geometry that lands
// exactly on cell boundaries.
const RASTER_EPS: f64 = 1e-9;

/// Row-major boolean occupancy map. Cell `(0, 0)` has its lower-left corner
/// at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    cells: Vec<bool>,
}

impl OccupancyGrid {
    /// An all-free grid.
    pub fn new(width: usize, height: usize, resolution: f64, origin: (f64, f64)) -> Result<Self> {
        Self::from_cells(width, height, resolution, origin, vec![false; width * height])
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        origin: (f64, f64),
        cells: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimension(format!(
                "grid must be non-empty, got {width}x{height}"
            )));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidDimension(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if cells.len() != width * height {
            return Err(Error::InvalidDimension(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn width_m(&self) -> f64 {
        self.width as f64 * self.resolution
    }

    pub fn height_m(&self) -> f64 {
        self.height as f64 * self.resolution
    }

    /// World coordinates of the map center.
    pub fn center(&self) -> (f64, f64) {
        (
            self.origin.0 + 0.5 * self.width_m(),
            self.origin.1 + 0.5 * self.height_m(),
        )
    }

    pub fn is_occupied(&self, ix: usize, iy: usize) -> bool {
        self.cells[iy * self.width + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, occupied: bool) {
        self.cells[iy * self.width + ix] = occupied;
    }

    /// Cell containing a world point, or `None` outside the map.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let gx = ((x - self.origin.0) / self.resolution).floor();
        let gy = ((y - self.origin.1) / self.resolution).floor();
        if gx < 0.0 || gy < 0.0 || gx >= self.width as f64 || gy >= self.height as f64 {
            return None;
        }
        Some((gx as usize, gy as usize))
    }

    /// Occupancy at a world point; everything outside the map is occupied.
    pub fn occupied_at(&self, x: f64, y: f64) -> bool {
        match self.cell_of(x, y) {
            Some((ix, iy)) => self.is_occupied(ix, iy),
            None => true,
        }
    }

    pub fn is_free(&self, x: f64, y: f64) -> bool {
        !self.occupied_at(x, y)
    }

    /// World center of a cell.
    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + (ix as f64 + 0.5) * self.resolution,
            self.origin.1 + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn free_cell_count(&self) -> usize {
        self.cells.iter().filter(|&&c| !c).count()
    }

    /// Marks every cell whose closed square touches the closed rectangle
    /// `[x0, x1] × [y0, y1]`. Degenerate rectangles rasterize segments.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) {
        let (x0, x1) = (x0.min(x1), x0.max(x1));
        let (y0, y1) = (y0.min(y1), y0.max(y1));
        let Some((ix0, ix1)) = self.touching_range(x0 - self.origin.0, x1 - self.origin.0, self.width) else {
            return;
        };
        let Some((iy0, iy1)) = self.touching_range(y0 - self.origin.1, y1 - self.origin.1, self.height) else {
            return;
        };
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                self.set(ix, iy, true);
            }
        }
    }

    fn touching_range(&self, a: f64, b: f64, n: usize) -> Option<(usize, usize)> {
        let lo = (a / self.resolution - 1.0 - RASTER_EPS).ceil().max(0.0);
        let hi = (b / self.resolution + RASTER_EPS).floor().min(n as f64 - 1.0);
        if hi < lo {
            return None;
        }
        Some((lo as usize, hi as usize))
    }

    /// Uniform point over free space, by rejection.
    pub fn sample_free_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        loop {
            let x = self.origin.0 + rng.random::<f64>() * self.width_m();
            let y = self.origin.1 + rng.random::<f64>() * self.height_m();
            if self.is_free(x, y) {
                return (x, y);
            }
        }
    }

    /// Uniform pose over free space × `[-π, π)`.
    pub fn sample_free_pose<R: Rng + ?Sized>(&self, rng: &mut R) -> Pose {
        let (x, y) = self.sample_free_point(rng);
        let theta = -PI + rng.random::<f64>() * TAU;
        Pose::new(x, y, theta)
    }

    /// Distance along `origin.theta + bearing` to the first occupied cell,
    /// clamped to `max_range`.
    pub fn raycast(&self, origin: &Pose, bearing: f64, max_range: f64) -> Result<f64> {
        if self.occupied_at(origin.x, origin.y) {
            return Err(Error::OriginOccupied {
                x: origin.x,
                y: origin.y,
            });
        }
        Ok(self.cast_from_free(origin.x, origin.y, origin.theta + bearing, max_range))
    }

    /// Grid traversal that visits every cell crossed by the ray. The caller
    /// guarantees the start cell is free.
    pub(crate) fn cast_from_free(&self, x: f64, y: f64, angle: f64, max_range: f64) -> f64 {
        if max_range <= 0.0 {
            return 0.0;
        }
        let gx = (x - self.origin.0) / self.resolution;
        let gy = (y - self.origin.1) / self.resolution;
        let (dy, dx) = angle.sin_cos();
        let mut ix = gx.floor() as i64;
        let mut iy = gy.floor() as i64;
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
        let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
        let mut t_max_x = if dx > 0.0 {
            (ix as f64 + 1.0 - gx) * t_delta_x
        } else if dx < 0.0 {
            (gx - ix as f64) * t_delta_x
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dy > 0.0 {
            (iy as f64 + 1.0 - gy) * t_delta_y
        } else if dy < 0.0 {
            (gy - iy as f64) * t_delta_y
        } else {
            f64::INFINITY
        };
        let limit = max_range / self.resolution;
        loop {
            let t = if t_max_x < t_max_y {
                ix += step_x;
                let t = t_max_x;
                t_max_x += t_delta_x;
                t
            } else {
                iy += step_y;
                let t = t_max_y;
                t_max_y += t_delta_y;
                t
            };
            if t >= limit {
                return max_range;
            }
            if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
                return t * self.resolution;
            }
            if self.cells[iy as usize * self.width + ix as usize] {
                return t * self.resolution;
            }
        }
    }

    /// Parses the plain-text map format.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header needs 5 fields, found {}", fields.len()),
            });
        }
        let parse_err = |what: &str| Error::Parse {
            line: 1,
            msg: format!("bad {what} in header"),
        };
        let width: usize = fields[0].parse().map_err(|_| parse_err("width"))?;
        let height: usize = fields[1].parse().map_err(|_| parse_err("height"))?;
        let resolution: f64 = fields[2].parse().map_err(|_| parse_err("resolution"))?;
        let ox: f64 = fields[3].parse().map_err(|_| parse_err("origin_x"))?;
        let oy: f64 = fields[4].parse().map_err(|_| parse_err("origin_y"))?;
        let mut cells = vec![false; width * height];
        for row in 0..height {
            let line = lines.next().ok_or(Error::Parse {
                line: row + 2,
                msg: "unexpected end of map".into(),
            })?;
            if line.len() != width {
                return Err(Error::Parse {
                    line: row + 2,
                    msg: format!("row has {} characters, expected {width}", line.len()),
                });
            }
            // The first text row is the top of the map.
            let iy = height - 1 - row;
            for (ix, ch) in line.bytes().enumerate() {
                cells[iy * width + ix] = match ch {
                    b'#' => true,
                    b'.' => false,
                    other => {
                        return Err(Error::Parse {
                            line: row + 2,
                            msg: format!("unexpected character {:?}", other as char),
                        })
                    }
                };
            }
        }
        if lines.any(|l| !l.is_empty()) {
            return Err(Error::Parse {
                line: height + 2,
                msg: "trailing content after map rows".into(),
            });
        }
        Self::from_cells(width, height, resolution, (ox, oy), cells)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * (self.height + 1) + 64);
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            self.width, self.height, self.resolution, self.origin.0, self.origin.1
        );
        for iy in (0..self.height).rev() {
            for ix in 0..self.width {
                out.push(if self.is_occupied(ix, iy) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Axis-aligned wall segments of the benchmark layout, door gaps removed.
/// Each segment is `(x0, y0, x1, y1)` with either `x0 == x1` or `y0 == y1`.
pub fn symmetric_map_walls(side_m: f64, rooms_per_side: usize, door_width_m: f64) -> Vec<[f64; 4]> {
    let room = side_m / rooms_per_side as f64;
    let half_door = 0.5 * door_width_m;
    let mut walls = vec![
        [0.0, 0.0, side_m, 0.0],
        [0.0, side_m, side_m, side_m],
        [0.0, 0.0, 0.0, side_m],
        [side_m, 0.0, side_m, side_m],
    ];
    // Every internal wall piece between two adjacent rooms gets one door
    // centred on it, so the layout is invariant under quarter turns.
    for k in 1..rooms_per_side {
        let c = k as f64 * room;
        for j in 0..rooms_per_side {
            let lo = j as f64 * room;
            let hi = lo + room;
            let mid = 0.5 * (lo + hi);
            walls.push([c, lo, c, mid - half_door]);
            walls.push([c, mid + half_door, c, hi]);
            walls.push([lo, c, mid - half_door, c]);
            walls.push([mid + half_door, c, hi, c]);
        }
    }
    walls
}

/// Closed square map partitioned into `rooms_per_side²` identical rooms.
pub fn build_symmetric_map(
    side_m: f64,
    rooms_per_side: usize,
    door_width_m: f64,
    resolution: f64,
) -> Result<OccupancyGrid> {
    if !(side_m > 0.0 && side_m.is_finite()) {
        return Err(Error::InvalidDimension(format!("side must be positive, got {side_m}")));
    }
    if rooms_per_side == 0 {
        return Err(Error::InvalidDimension("need at least one room per side".into()));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidDimension(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    let room = side_m / rooms_per_side as f64;
    if !(door_width_m >= 0.0 && door_width_m < room) {
        return Err(Error::InvalidDimension(format!(
            "door width {door_width_m} must be below the room size {room}"
        )));
    }
    let cells = (side_m / resolution).round() as usize;
    if cells < 3 {
        return Err(Error::InvalidDimension("map is smaller than three cells".into()));
    }
    let mut grid = OccupancyGrid::new(cells, cells, resolution, (0.0, 0.0))?;
    for [x0, y0, x1, y1] in symmetric_map_walls(side_m, rooms_per_side, door_width_m) {
        grid.fill_rect(x0, y0, x1, y1);
    }
    Ok(grid)
}

/// Closed square room with blocks of different sizes, so no rotation or
/// reflection maps the layout onto itself.
pub fn build_asymmetric_room(side_m: f64, resolution: f64) -> Result<OccupancyGrid> {
    let mut grid = build_symmetric_map(side_m, 1, 0.0, resolution)?;
    for [x0, y0, x1, y1] in [
        [0.2, 0.6, 0.3, 0.85],
        [0.6, 0.25, 0.85, 0.3],
        [0.65, 0.65, 0.75, 0.75],
        [0.0, 0.35, 0.1, 0.4],
    ] {
        grid.fill_rect(x0 * side_m, y0 * side_m, x1 * side_m, y1 * side_m);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_normalization_range() {
        for a in [-10.0, -PI, -3.0, 0.0, 3.0, PI, 7.0, 1e6] {
            let n = normalize_angle(a);
            assert!((-PI..PI).contains(&n), "{a} -> {n}");
            assert!(((n - a) / TAU - ((n - a) / TAU).round()).abs() < 1e-9);
        }
        assert_eq!(normalize_angle(PI), -PI);
    }

    #[test]
    fn benchmark_map_dimensions() {
        let m = build_symmetric_map(15.0, 2, 1.0, 0.1).unwrap();
        assert_eq!((m.width(), m.height()), (150, 150));
        assert!(m.occupied_at(7.5, 2.0));
        assert!(m.is_free(3.75, 3.75));
        // door gap in the vertical partition
        assert!(m.is_free(7.5, 3.75));
    }

    #[test]
    fn single_room_is_closed_and_empty_inside() {
        let m = build_symmetric_map(10.0, 1, 1.0, 0.1).unwrap();
        assert_eq!((m.width(), m.height()), (100, 100));
        for i in 0..100 {
            assert!(m.is_occupied(i, 0) && m.is_occupied(i, 99));
            assert!(m.is_occupied(0, i) && m.is_occupied(99, i));
        }
        let interior_occupied = (1..99)
            .flat_map(|y| (1..99).map(move |x| (x, y)))
            .filter(|&(x, y)| m.is_occupied(x, y))
            .count();
        assert_eq!(interior_occupied, 0);
    }

    #[test]
    fn invalid_dimensions_rejected() {
        assert!(build_symmetric_map(0.0, 2, 1.0, 0.1).is_err());
        assert!(build_symmetric_map(15.0, 0, 1.0, 0.1).is_err());
        assert!(build_symmetric_map(15.0, 2, 7.5, 0.1).is_err());
        assert!(build_symmetric_map(15.0, 2, 1.0, 0.0).is_err());
        assert!(matches!(
            OccupancyGrid::from_cells(2, 2, 0.1, (0.0, 0.0), vec![false; 3]),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn raycast_axis_aligned_wall() {
        let m = build_symmetric_map(10.0, 1, 1.0, 0.1).unwrap();
        // inner face of the east wall is at x = 9.9
        let d = m.raycast(&Pose::new(5.0, 5.0, 0.0), 0.0, 20.0).unwrap();
        assert!((d - 5.0).abs() <= 0.1, "{d}");
        assert!((d - 4.9).abs() < 1e-9);
        let d = m.raycast(&Pose::new(5.05, 5.05, 0.0), PI, 20.0).unwrap();
        assert!((d - 4.95).abs() < 1e-9);
    }

    #[test]
    fn raycast_clamps() {
        let m = build_symmetric_map(10.0, 1, 1.0, 0.1).unwrap();
        let p = Pose::new(5.0, 5.0, 0.3);
        assert_eq!(m.raycast(&p, 0.7, 0.0).unwrap(), 0.0);
        assert_eq!(m.raycast(&p, 0.0, 2.0).unwrap(), 2.0);
    }

    #[test]
    fn raycast_rejects_occupied_origin() {
        let m = build_symmetric_map(10.0, 1, 1.0, 0.1).unwrap();
        let err = m.raycast(&Pose::new(0.05, 5.0, 0.0), 0.0, 5.0).unwrap_err();
        assert!(matches!(err, Error::OriginOccupied { .. }));
    }

    #[test]
    fn text_round_trip() {
        let m = build_symmetric_map(3.0, 2, 0.5, 0.1).unwrap();
        let text = m.to_text();
        let back = OccupancyGrid::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn text_rejects_bad_rows() {
        assert!(OccupancyGrid::from_text("2 2 0.1 0 0\n..\n.\n").is_err());
        assert!(OccupancyGrid::from_text("2 2 0.1 0 0\n..\n.x\n").is_err());
        assert!(OccupancyGrid::from_text("2 2 0.1 0\n..\n..\n").is_err());
    }

    #[test]
    fn rotation_about_center() {
        let p = Pose::new(2.0, 3.0, 0.5).rotated_about(7.5, 7.5, std::f64::consts::FRAC_PI_2);
        assert!((p.x - 12.0).abs() < 1e-12 && (p.y - 2.0).abs() < 1e-12);
        assert!((p.theta - (0.5 + std::f64::consts::FRAC_PI_2)).abs() < 1e-12);
    }
}
