//! Planar geometry and the local map projection.
//!
//! Everything downstream of ingestion works in projected meters. Geographic
//! coordinates are converted once with an azimuthal equidistant projection
//! centered on the dataset bounding box.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Absolute tolerance, in meters, for treating a point as lying on a ring edge.
pub const BOUNDARY_EPS_M: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A geographic coordinate in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Spherical azimuthal equidistant projection around a fixed center.
///
/// Distances from the center are preserved exactly; other distances are
/// distorted monotonically with distance from the center, which is negligible
/// at city scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub center: LatLon,
}

impl Projection {
    pub fn new(center: LatLon) -> Self {
        Self { center }
    }

    /// Projection centered on the midpoint of the bounding box of `points`.
    /// Returns `None` for an empty input.
    pub fn for_extent<'a>(points: impl IntoIterator<Item = &'a LatLon>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = iter.next()?;
        let (mut min_lat, mut max_lat, mut min_lon, mut max_lon) =
            (first.lat, first.lat, first.lon, first.lon);
        for p in iter {
            min_lat = min_lat.min(p.lat);
            max_lat = max_lat.max(p.lat);
            min_lon = min_lon.min(p.lon);
            max_lon = max_lon.max(p.lon);
        }
        Some(Self::new(LatLon::new(
            0.5 * (min_lat + max_lat),
            0.5 * (min_lon + max_lon),
        )))
    }

    pub fn project(&self, p: LatLon) -> Point {
        let (phi0, lam0) = (self.center.lat.to_radians(), self.center.lon.to_radians());
        let (phi, lam) = (p.lat.to_radians(), p.lon.to_radians());
        let dlam = lam - lam0;
        let cos_c = (phi0.sin() * phi.sin() + phi0.cos() * phi.cos() * dlam.cos()).clamp(-1.0, 1.0);
        let c = cos_c.acos();
        let k = if c.abs() < 1e-12 { 1.0 } else { c / c.sin() };
        Point::new(
            EARTH_RADIUS_M * k * phi.cos() * dlam.sin(),
            EARTH_RADIUS_M * k * (phi0.cos() * phi.sin() - phi0.sin() * phi.cos() * dlam.cos()),
        )
    }

    pub fn unproject(&self, p: Point) -> LatLon {
        let (phi0, lam0) = (self.center.lat.to_radians(), self.center.lon.to_radians());
        let rho = p.x.hypot(p.y);
        if rho < 1e-9 {
            return self.center;
        }
        let c = rho / EARTH_RADIUS_M;
        let phi = (c.cos() * phi0.sin() + p.y * c.sin() * phi0.cos() / rho).clamp(-1.0, 1.0).asin();
        let lam = lam0
            + (p.x * c.sin()).atan2(rho * phi0.cos() * c.cos() - p.y * phi0.sin() * c.sin());
        let mut lon = lam.to_degrees();
        if lon > 180.0 {
            lon -= 360.0;
        } else if lon < -180.0 {
            lon += 360.0;
        }
        LatLon::new(phi.to_degrees(), lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    pub fn of<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let mut bb = BBox { min: first, max: first };
        for p in iter {
            bb.min.x = bb.min.x.min(p.x);
            bb.min.y = bb.min.y.min(p.y);
            bb.max.x = bb.max.x.max(p.x);
            bb.max.y = bb.max.y.max(p.y);
        }
        Some(bb)
    }

    pub fn contains(&self, p: &Point, eps: f64) -> bool {
        p.x >= self.min.x - eps
            && p.x <= self.max.x + eps
            && p.y >= self.min.y - eps
            && p.y <= self.max.y + eps
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            min: Point::new(self.min.x.min(other.min.x), self.min.y.min(other.min.y)),
            max: Point::new(self.max.x.max(other.max.x), self.max.y.max(other.max.y)),
        }
    }
}

/// Result of a point-in-shape query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Containment {
    Inside,
    Boundary,
    Outside,
}

impl Containment {
    /// Inside or on the boundary.
    pub fn covers(self) -> bool {
        !matches!(self, Containment::Outside)
    }
}

/// A simple polygon with optional holes. Rings are stored open (the closing
/// vertex is not repeated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<Point>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub holes: Vec<Vec<Point>>,
}

impl Polygon {
    pub fn new(exterior: Vec<Point>) -> Self {
        Self { exterior: open_ring(exterior), holes: Vec::new() }
    }

    pub fn with_holes(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Self {
        Self {
            exterior: open_ring(exterior),
            holes: holes.into_iter().map(open_ring).collect(),
        }
    }

    fn rings(&self) -> impl Iterator<Item = &Vec<Point>> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    pub fn area(&self) -> f64 {
        let holes: f64 = self.holes.iter().map(|h| ring_signed_area(h).abs()).sum();
        ring_signed_area(&self.exterior).abs() - holes
    }

    /// Area-weighted centroid paired with the area used as its weight.
    fn weighted_centroid(&self) -> (Point, f64) {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut total = 0.0;
        for (i, ring) in self.rings().enumerate() {
            let a = ring_signed_area(ring);
            if a == 0.0 {
                continue;
            }
            let c = ring_centroid(ring, a);
            // holes subtract regardless of their winding
            let w = if i == 0 { a.abs() } else { -a.abs() };
            sx += c.x * w;
            sy += c.y * w;
            total += w;
        }
        if total == 0.0 {
            (vertex_mean(&self.exterior), 0.0)
        } else {
            (Point::new(sx / total, sy / total), total)
        }
    }

    pub fn centroid(&self) -> Point {
        self.weighted_centroid().0
    }

    pub fn bbox(&self) -> Option<BBox> {
        BBox::of(self.exterior.iter())
    }

    pub fn contains(&self, p: &Point) -> Containment {
        let mut inside = false;
        for ring in self.rings() {
            if on_ring(ring, p) {
                return Containment::Boundary;
            }
            if crosses_odd(ring, p) {
                inside = !inside;
            }
        }
        if inside {
            Containment::Inside
        } else {
            Containment::Outside
        }
    }

    pub fn is_self_intersecting(&self) -> bool {
        self.rings().any(|r| ring_self_intersects(r))
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.rings().flat_map(|ring| {
            let n = ring.len();
            (0..n).map(move |i| (ring[i], ring[(i + 1) % n]))
        })
    }
}

/// A set of polygons treated as one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Shape {
    pub polygons: Vec<Polygon>,
}

impl Shape {
    pub fn new(polygons: Vec<Polygon>) -> Self {
        Self { polygons }
    }

    pub fn area(&self) -> f64 {
        self.polygons.iter().map(Polygon::area).sum()
    }

    pub fn centroid(&self) -> Point {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut total = 0.0;
        for poly in &self.polygons {
            let (c, w) = poly.weighted_centroid();
            sx += c.x * w;
            sy += c.y * w;
            total += w;
        }
        if total == 0.0 {
            let pts: Vec<Point> = self.polygons.iter().flat_map(|p| p.exterior.iter().copied()).collect();
            vertex_mean(&pts)
        } else {
            Point::new(sx / total, sy / total)
        }
    }

    pub fn vertex_mean(&self) -> Point {
        let pts: Vec<Point> = self.polygons.iter().flat_map(|p| p.exterior.iter().copied()).collect();
        vertex_mean(&pts)
    }

    pub fn bbox(&self) -> Option<BBox> {
        self.polygons
            .iter()
            .filter_map(Polygon::bbox)
            .reduce(|a, b| a.union(&b))
    }

    pub fn contains(&self, p: &Point) -> Containment {
        let mut best = Containment::Outside;
        for poly in &self.polygons {
            match poly.contains(p) {
                Containment::Inside => return Containment::Inside,
                Containment::Boundary => best = Containment::Boundary,
                Containment::Outside => {}
            }
        }
        best
    }

    pub fn is_self_intersecting(&self) -> bool {
        self.polygons.iter().any(Polygon::is_self_intersecting)
    }
}

fn open_ring(mut ring: Vec<Point>) -> Vec<Point> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

/// Shoelace signed area; positive for counter-clockwise rings.
pub fn ring_signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

fn ring_centroid(ring: &[Point], signed_area: f64) -> Point {
    let n = ring.len();
    // shift to the first vertex to limit cancellation on projected coordinates
    let o = ring[0];
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let a = Point::new(ring[i].x - o.x, ring[i].y - o.y);
        let b = Point::new(ring[(i + 1) % n].x - o.x, ring[(i + 1) % n].y - o.y);
        let cross = a.x * b.y - b.x * a.y;
        cx += (a.x + b.x) * cross;
        cy += (a.y + b.y) * cross;
    }
    let f = 1.0 / (6.0 * signed_area);
    Point::new(o.x + cx * f, o.y + cy * f)
}

pub fn vertex_mean(points: &[Point]) -> Point {
    if points.is_empty() {
        return Point::new(f64::NAN, f64::NAN);
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Point::new(sx / n, sy / n)
}

/// Distance from `p` to the segment `a`-`b`.
pub fn segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(&Point::new(a.x + t * dx, a.y + t * dy))
}

fn on_ring(ring: &[Point], p: &Point) -> bool {
    let n = ring.len();
    (0..n).any(|i| segment_distance(p, &ring[i], &ring[(i + 1) % n]) <= BOUNDARY_EPS_M)
}

fn crosses_odd(ring: &[Point], p: &Point) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orientation(a: &Point, b: &Point, c: &Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Whether the closed segments `p1`-`p2` and `q1`-`q2` share at least one point.
pub fn segments_intersect(p1: &Point, p2: &Point, q1: &Point, q2: &Point) -> bool {
    let d1 = orientation(q1, q2, p1);
    let d2 = orientation(q1, q2, p2);
    let d3 = orientation(p1, p2, q1);
    let d4 = orientation(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: &Point, b: &Point, c: &Point| segment_distance(c, a, b) <= BOUNDARY_EPS_M;
    on(q1, q2, p1) || on(q1, q2, p2) || on(p1, p2, q1) || on(p1, p2, q2)
}

fn ring_self_intersects(ring: &[Point]) -> bool {
    let n = ring.len();
    if n < 4 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 2)..n {
            // adjacent through the closing edge
            if i == 0 && j == n - 1 {
                continue;
            }
            let (b1, b2) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(&a1, &a2, &b1, &b2) {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, side: f64) -> Polygon {
        Polygon::new(vec![
            Point::new(x0, y0),
            Point::new(x0 + side, y0),
            Point::new(x0 + side, y0 + side),
            Point::new(x0, y0 + side),
        ])
    }

    #[test]
    fn projection_round_trip() {
        let proj = Projection::new(LatLon::new(-25.43, -49.27));
        for (lat, lon) in [(-25.5, -49.3), (-25.3, -49.1), (-25.43, -49.27)] {
            let back = proj.unproject(proj.project(LatLon::new(lat, lon)));
            assert!((back.lat - lat).abs() < 1e-9 && (back.lon - lon).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_preserves_distance_from_center() {
        let proj = Projection::new(LatLon::new(0.0, 0.0));
        // one degree of latitude along the meridian
        let p = proj.project(LatLon::new(1.0, 0.0));
        let expected = EARTH_RADIUS_M * 1f64.to_radians();
        assert!((p.y - expected).abs() < 1e-6);
        assert!(p.x.abs() < 1e-9);
    }

    #[test]
    fn l_shape_centroid_matches_decomposition() {
        // L made of a 2x1 bar and a 1x1 block on top of its left end
        let l = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 2.0),
            Point::new(0.0, 2.0),
        ]);
        assert!((l.area() - 3.0).abs() < 1e-12);
        let c = l.centroid();
        // (2*(1,0.5) + 1*(0.5,1.5)) / 3
        assert!((c.x - 2.5 / 3.0).abs() < 1e-12);
        assert!((c.y - 2.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn holes_reduce_area_and_exclude_points() {
        let poly = Polygon::with_holes(
            square(0.0, 0.0, 4.0).exterior,
            vec![square(1.0, 1.0, 2.0).exterior],
        );
        assert!((poly.area() - 12.0).abs() < 1e-12);
        assert_eq!(poly.contains(&Point::new(2.0, 2.0)), Containment::Outside);
        assert_eq!(poly.contains(&Point::new(0.5, 0.5)), Containment::Inside);
        assert_eq!(poly.contains(&Point::new(1.0, 2.0)), Containment::Boundary);
    }

    #[test]
    fn boundary_and_outside_points() {
        let sq = square(0.0, 0.0, 1.0);
        assert_eq!(sq.contains(&Point::new(0.5, 0.0)), Containment::Boundary);
        assert_eq!(sq.contains(&Point::new(1.0, 1.0)), Containment::Boundary);
        assert_eq!(sq.contains(&Point::new(1.5, 0.5)), Containment::Outside);
    }

    #[test]
    fn bowtie_is_self_intersecting() {
        let bowtie = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ]);
        assert!(bowtie.is_self_intersecting());
        assert!(!square(0.0, 0.0, 1.0).is_self_intersecting());
    }

    #[test]
    fn closing_vertex_is_dropped() {
        let p = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(0.0, 0.0),
        ]);
        assert_eq!(p.exterior.len(), 3);
    }
}
