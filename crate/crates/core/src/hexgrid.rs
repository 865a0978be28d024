//! Planar flat-top hexagonal tessellation at fixed target cell areas.
//!
//! Cells are addressed by axial coordinates `(q, r)` relative to an origin
//! anchored at the minimum corner of the tessellated boundary's bounding box.
//! Cell ids have the form `h{res}:{q}:{r}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geo::{segments_intersect, LatLon, Point, Polygon, Projection, Shape};
use crate::ingest::{Level, Region};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum HexError {
    #[error("unknown resolution {0:?}")]
    UnknownResolution(String),
    #[error("malformed cell id {0:?}")]
    MalformedCellId(String),
}

/// Grid resolution. The named levels carry fixed mean cell areas; custom
/// resolutions carry their area in whole square meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Resolution {
    H6,
    H7,
    H8,
    H9,
    Custom(u64),
}

impl Resolution {
    pub const NAMED: [Resolution; 4] = [Resolution::H6, Resolution::H7, Resolution::H8, Resolution::H9];

    pub fn target_area_km2(&self) -> f64 {
        match self {
            Resolution::H6 => 36.12,
            Resolution::H7 => 5.16,
            Resolution::H8 => 0.74,
            Resolution::H9 => 0.11,
            Resolution::Custom(m2) => *m2 as f64 / 1e6,
        }
    }

    pub fn target_area_m2(&self) -> f64 {
        self.target_area_km2() * 1e6
    }

    /// Circumradius (= edge length) of a regular hexagon of the target area.
    pub fn edge_length(&self) -> f64 {
        (2.0 * self.target_area_m2() / (3.0 * SQRT3)).sqrt()
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::H6 => f.write_str("h6"),
            Resolution::H7 => f.write_str("h7"),
            Resolution::H8 => f.write_str("h8"),
            Resolution::H9 => f.write_str("h9"),
            Resolution::Custom(m2) => write!(f, "c{m2}"),
        }
    }
}

impl FromStr for Resolution {
    type Err = HexError;

    fn from_str(s: &str) -> Result<Self, HexError> {
        match s {
            "h6" => Ok(Resolution::H6),
            "h7" => Ok(Resolution::H7),
            "h8" => Ok(Resolution::H8),
            "h9" => Ok(Resolution::H9),
            _ => s
                .strip_prefix('c')
                .and_then(|a| a.parse::<u64>().ok())
                .filter(|&a| a > 0)
                .map(Resolution::Custom)
                .ok_or_else(|| HexError::UnknownResolution(s.to_string())),
        }
    }
}

impl TryFrom<String> for Resolution {
    type Error = HexError;
    fn try_from(s: String) -> Result<Self, HexError> {
        s.parse()
    }
}

impl From<Resolution> for String {
    fn from(r: Resolution) -> String {
        r.to_string()
    }
}

pub fn encode_cell_id(res: Resolution, q: i64, r: i64) -> String {
    format!("{res}:{q}:{r}")
}

pub fn decode_cell_id(id: &str) -> Result<(Resolution, i64, i64), HexError> {
    let bad = || HexError::MalformedCellId(id.to_string());
    let mut parts = id.split(':');
    let (Some(res), Some(q), Some(r), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    let res = res.parse().map_err(|_| bad())?;
    Ok((res, q.parse().map_err(|_| bad())?, r.parse().map_err(|_| bad())?))
}

/// Axial offsets of the six neighbours of a cell.
pub const NEIGHBOR_OFFSETS: [(i64, i64); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

/// Ids of the six cells sharing an edge with `id`.
pub fn neighbor_ids(id: &str) -> Result<Vec<String>, HexError> {
    let (res, q, r) = decode_cell_id(id)?;
    Ok(NEIGHBOR_OFFSETS.iter().map(|(dq, dr)| encode_cell_id(res, q + dq, r + dr)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexCell {
    pub cell_id: String,
    pub resolution: Resolution,
    pub q: i64,
    pub r: i64,
    pub center: Point,
    pub vertices: [Point; 6],
}

impl HexCell {
    pub fn polygon(&self) -> Polygon {
        Polygon::new(self.vertices.to_vec())
    }
}

/// How cells straddling the boundary are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inclusion {
    /// Keep cells whose center lies inside (or on) the boundary.
    #[default]
    CenterInside,
    /// Keep every cell that touches the boundary.
    AnyOverlap,
}

/// An anchored hex lattice at one resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexGrid {
    pub resolution: Resolution,
    pub origin: Point,
}

impl HexGrid {
    pub fn new(resolution: Resolution, origin: Point) -> Self {
        Self { resolution, origin }
    }

    /// Grid anchored at the bounding-box minimum corner of `boundary`.
    pub fn for_boundary(boundary: &Shape, resolution: Resolution) -> Option<Self> {
        boundary.bbox().map(|bb| Self::new(resolution, bb.min))
    }

    pub fn center(&self, q: i64, r: i64) -> Point {
        let s = self.resolution.edge_length();
        Point::new(
            self.origin.x + 1.5 * s * q as f64,
            self.origin.y + SQRT3 * s * (r as f64 + 0.5 * q as f64),
        )
    }

    pub fn cell(&self, q: i64, r: i64) -> HexCell {
        let s = self.resolution.edge_length();
        let center = self.center(q, r);
        let vertices = std::array::from_fn(|i| {
            let a = std::f64::consts::FRAC_PI_3 * i as f64;
            Point::new(center.x + s * a.cos(), center.y + s * a.sin())
        });
        HexCell { cell_id: encode_cell_id(self.resolution, q, r), resolution: self.resolution, q, r, center, vertices }
    }

    fn nearest_axial(&self, p: &Point) -> (i64, i64) {
        let s = self.resolution.edge_length();
        let (x, y) = (p.x - self.origin.x, p.y - self.origin.y);
        let qf = (2.0 / 3.0) * x / s;
        let rf = (-x / 3.0 + SQRT3 / 3.0 * y) / s;
        // cube rounding
        let (xf, zf) = (qf, rf);
        let yf = -xf - zf;
        let (mut rx, ry, mut rz) = (xf.round(), yf.round(), zf.round());
        let (dx, dy, dz) = ((rx - xf).abs(), (ry - yf).abs(), (rz - zf).abs());
        if dx > dy && dx > dz {
            rx = -ry - rz;
        } else if dy <= dz {
            rz = -rx - ry;
        }
        (rx as i64, rz as i64)
    }

    /// Cell containing a projected point. Points on shared edges or vertices
    /// resolve to the lexicographically smallest cell id.
    pub fn locate_xy(&self, p: &Point) -> String {
        let (q, r) = self.nearest_axial(p);
        let mut best: Option<String> = None;
        for (dq, dr) in std::iter::once((0, 0)).chain(NEIGHBOR_OFFSETS) {
            let cell = self.cell(q + dq, r + dr);
            if cell.polygon().contains(p).covers() && best.as_ref().is_none_or(|b| cell.cell_id < *b) {
                best = Some(cell.cell_id);
            }
        }
        best.unwrap_or_else(|| encode_cell_id(self.resolution, q, r))
    }

    pub fn locate(&self, point: LatLon, projection: &Projection) -> String {
        self.locate_xy(&projection.project(point))
    }
}

fn hex_touches(cell: &HexCell, boundary: &Shape) -> bool {
    if cell.vertices.iter().chain(std::iter::once(&cell.center)).any(|v| boundary.contains(v).covers()) {
        return true;
    }
    let hex = cell.polygon();
    if boundary.polygons.iter().flat_map(|p| p.exterior.iter()).any(|v| hex.contains(v).covers()) {
        return true;
    }
    let crosses = hex
        .edges()
        .any(|(a, b)| boundary.polygons.iter().flat_map(Polygon::edges).any(|(c, d)| segments_intersect(&a, &b, &c, &d)));
    crosses
}

/// Cover `boundary` (projected meters) with hexagons of the given resolution.
pub fn tessellate(boundary: &Shape, res: Resolution, inclusion: Inclusion) -> Vec<HexCell> {
    if boundary.area() <= 0.0 {
        return Vec::new();
    }
    let Some(grid) = HexGrid::for_boundary(boundary, res) else {
        return Vec::new();
    };
    let bb = boundary.bbox().expect("non-empty boundary has a bbox");
    let s = res.edge_length();
    let h = SQRT3 * s;
    let q_lo = ((bb.min.x - grid.origin.x) / (1.5 * s)).floor() as i64 - 1;
    let q_hi = ((bb.max.x - grid.origin.x) / (1.5 * s)).ceil() as i64 + 1;
    let mut cells = Vec::new();
    for q in q_lo..=q_hi {
        let shift = 0.5 * q as f64;
        let r_lo = ((bb.min.y - grid.origin.y) / h - shift).floor() as i64 - 1;
        let r_hi = ((bb.max.y - grid.origin.y) / h - shift).ceil() as i64 + 1;
        for r in r_lo..=r_hi {
            let cell = grid.cell(q, r);
            let keep = match inclusion {
                Inclusion::CenterInside => boundary.contains(&cell.center).covers(),
                Inclusion::AnyOverlap => hex_touches(&cell, boundary),
            };
            if keep {
                cells.push(cell);
            }
        }
    }
    cells.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    cells
}

pub fn cells_to_regions(cells: &[HexCell]) -> Vec<Region> {
    cells
        .iter()
        .map(|c| Region {
            region_id: c.cell_id.clone(),
            level: Level::Hex(c.resolution),
            boundary: Some(Shape::new(vec![c.polygon()])),
            centroid: c.center,
            context: None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn square(side: f64) -> Shape {
        Shape::new(vec![Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(side, 0.0),
            Point::new(side, side),
            Point::new(0.0, side),
        ])])
    }

    #[test]
    fn named_areas() {
        let areas: Vec<f64> = Resolution::NAMED.iter().map(Resolution::target_area_km2).collect();
        assert_eq!(areas, vec![36.12, 5.16, 0.74, 0.11]);
    }

    #[test]
    fn hexagon_area_matches_target() {
        for res in Resolution::NAMED.into_iter().chain([Resolution::Custom(250_000)]) {
            let grid = HexGrid::new(res, Point::new(1000.0, -500.0));
            let area = grid.cell(3, -7).polygon().area();
            assert!((area / res.target_area_m2() - 1.0).abs() < 1e-3, "{res}: {area}");
        }
    }

    #[test]
    fn cell_id_round_trip() {
        for res in [Resolution::H8, Resolution::Custom(42)] {
            let id = encode_cell_id(res, -3, 17);
            assert_eq!(decode_cell_id(&id).unwrap(), (res, -3, 17));
        }
        assert_eq!(encode_cell_id(Resolution::H8, 1, -2), "h8:1:-2");
        assert!(decode_cell_id("h8:1").is_err());
        assert!(decode_cell_id("h5:1:2").is_err());
    }

    #[test]
    fn square_100km2_cell_count() {
        let cells = tessellate(&square(10_000.0), Resolution::H8, Inclusion::CenterInside);
        let n = cells.len() as f64;
        let expected = 100.0 / 0.74;
        assert!(n >= expected * 0.85 && n <= expected * 1.15, "{n} cells");
    }

    #[test]
    fn tiny_boundary_yields_one_cell() {
        let cells = tessellate(&square(50.0), Resolution::H8, Inclusion::CenterInside);
        assert_eq!(cells.len(), 1);
        let overlap = tessellate(&square(50.0), Resolution::H8, Inclusion::AnyOverlap);
        assert!(!overlap.is_empty());
    }

    #[test]
    fn degenerate_boundary_is_empty() {
        let line = Shape::new(vec![Polygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)])]);
        assert!(tessellate(&line, Resolution::H9, Inclusion::CenterInside).is_empty());
    }

    #[test]
    fn tessellation_is_deterministic() {
        let a: BTreeSet<_> = tessellate(&square(5_000.0), Resolution::H9, Inclusion::CenterInside)
            .into_iter()
            .map(|c| c.cell_id)
            .collect();
        let b: BTreeSet<_> = tessellate(&square(5_000.0), Resolution::H9, Inclusion::CenterInside)
            .into_iter()
            .map(|c| c.cell_id)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn any_overlap_is_superset() {
        let center: BTreeSet<_> = tessellate(&square(5_000.0), Resolution::H8, Inclusion::CenterInside)
            .into_iter()
            .map(|c| c.cell_id)
            .collect();
        let any: BTreeSet<_> = tessellate(&square(5_000.0), Resolution::H8, Inclusion::AnyOverlap)
            .into_iter()
            .map(|c| c.cell_id)
            .collect();
        assert!(center.is_subset(&any));
        assert!(any.len() > center.len());
    }

    #[test]
    fn locate_center_and_nearby_points() {
        let grid = HexGrid::new(Resolution::H8, Point::new(0.0, 0.0));
        for (q, r) in [(0, 0), (3, -1), (-4, 6)] {
            let c = grid.cell(q, r);
            assert_eq!(grid.locate_xy(&c.center), c.cell_id);
            let nudged = Point::new(c.center.x + 1.0, c.center.y);
            assert_eq!(grid.locate_xy(&nudged), c.cell_id);
        }
    }

    #[test]
    fn shared_edge_point_resolves_to_smallest_id() {
        let grid = HexGrid::new(Resolution::H8, Point::new(0.0, 0.0));
        let a = grid.cell(0, 0);
        // midpoint of the edge between vertex 0 and vertex 1 is shared with (1, 0)
        let mid = Point::new(0.5 * (a.vertices[0].x + a.vertices[1].x), 0.5 * (a.vertices[0].y + a.vertices[1].y));
        let expected = ["h8:0:0".to_string(), "h8:1:0".to_string()].into_iter().min().unwrap();
        assert_eq!(grid.locate_xy(&mid), expected);
    }

    #[test]
    fn regions_from_cells() {
        let cells = tessellate(&square(3_000.0), Resolution::H8, Inclusion::CenterInside);
        let regions = cells_to_regions(&cells);
        assert_eq!(regions.len(), cells.len());
        for (c, r) in cells.iter().zip(&regions) {
            assert_eq!(c.cell_id, r.region_id);
            assert_eq!(c.center, r.centroid);
            let area = r.boundary.as_ref().unwrap().area();
            assert!((area / Resolution::H8.target_area_m2() - 1.0).abs() < 1e-3);
        }
    }
}
