//! Planar geometry for flat contact faces.
//!
//! Everything here works in millimeters. Shapes are either discs or strictly
//! convex counter-clockwise polygons, and a [`GridSpec`] discretizes a region
//! into square cells addressed in row-major order (`iy * nx + ix`). Grids are
//! normally built with [`GridSpec::covering`], which snaps the origin to a
//! multiple of the spacing so grids in different frames line up cell for cell
//! once their frames differ by a whole number of cells.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Points closer than this to a boundary count as inside.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("disc radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon is not strictly convex and counter-clockwise at vertex {0}")]
    NotConvex(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disc {
    center: Point2,
    radius: f64,
}

impl Disc {
    pub fn new(center: Point2, radius: f64) -> Result<Self, GeometryError> {
        if !center.is_finite() || !radius.is_finite() {
            return Err(GeometryError::NonFinite("disc"));
        }
        if radius <= 0.0 {
            return Err(GeometryError::NonPositiveRadius(radius));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> Point2 {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.distance(self.center) <= self.radius + BOUNDARY_TOL
    }
}

/// A strictly convex polygon with counter-clockwise vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
}

impl ConvexPolygon {
    pub fn new(vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(n));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("polygon"));
        }
        // Every turn must be a strict left turn, and the turns must add up to
        // exactly one revolution (rules out self-intersecting stars).
        let mut turning = 0.0;
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let e1 = b - a;
            let e2 = c - b;
            let cross = e1.cross(e2);
            if cross <= 0.0 {
                return Err(GeometryError::NotConvex((i + 1) % n));
            }
            turning += cross.atan2(e1.dot(e2));
        }
        if (turning - 2.0 * PI).abs() > 1e-6 {
            return Err(GeometryError::NotConvex(0));
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rectangle(min: Point2, max: Point2) -> Result<Self, GeometryError> {
        Self::new(vec![
            min,
            Point2::new(max.x, min.y),
            max,
            Point2::new(min.x, max.y),
        ])
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.edges().all(|(a, b)| {
            let e = b - a;
            e.cross(p - a) >= -BOUNDARY_TOL * e.norm()
        })
    }

    pub fn area(&self) -> f64 {
        0.5 * self.edges().map(|(a, b)| a.cross(b)).sum::<f64>()
    }

    /// Area centroid.
    pub fn centroid(&self) -> Point2 {
        // Shift to the first vertex to keep the sums well conditioned.
        let o = self.vertices[0];
        let mut a2 = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for (a, b) in self.edges() {
            let (a, b) = (a - o, b - o);
            let w = a.cross(b);
            a2 += w;
            cx += (a.x + b.x) * w;
            cy += (a.y + b.y) * w;
        }
        o + Point2::new(cx / (3.0 * a2), cy / (3.0 * a2))
    }

    /// Signed distance from `p` to the boundary, positive inside.
    pub fn signed_distance(&self, p: Point2) -> f64 {
        if self.contains(p) {
            self.edges()
                .map(|(a, b)| {
                    let e = b - a;
                    e.cross(p - a) / e.norm()
                })
                .fold(f64::INFINITY, f64::min)
                .max(0.0)
        } else {
            -self
                .edges()
                .map(|(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min)
        }
    }

    pub fn translate(&self, t: Point2) -> ConvexPolygon {
        ConvexPolygon {
            vertices: self.vertices.iter().map(|&v| v + t).collect(),
        }
    }
}

/// Area centroid of a convex polygon.
pub fn centroid(poly: &ConvexPolygon) -> Point2 {
    poly.centroid()
}

fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let e = b - a;
    let len2 = e.dot(e);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(e) / len2).clamp(0.0, 1.0);
    p.distance(a + e * t)
}

/// Distance from `p` to the closest point of a set that is at most a segment.
pub(crate) fn distance_to_degenerate(p: Point2, points: &[Point2]) -> f64 {
    match points.len() {
        0 => f64::INFINITY,
        1 => p.distance(points[0]),
        _ => {
            // Collinear set: the hull is the segment between its extreme points.
            let dir = points[1] - points[0];
            let dir = if dir.norm() > 0.0 {
                dir
            } else {
                points
                    .iter()
                    .map(|&q| q - points[0])
                    .find(|d| d.norm() > 0.0)
                    .unwrap_or(Point2::new(1.0, 0.0))
            };
            let proj = |q: Point2| (q - points[0]).dot(dir);
            let lo = points
                .iter()
                .copied()
                .min_by(|a, b| proj(*a).total_cmp(&proj(*b)))
                .unwrap();
            let hi = points
                .iter()
                .copied()
                .max_by(|a, b| proj(*a).total_cmp(&proj(*b)))
                .unwrap();
            segment_distance(p, lo, hi)
        }
    }
}

/// Planar face of an object, expressed in that object's frame.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape2 {
    Disc(Disc),
    Polygon(ConvexPolygon),
}

impl Shape2 {
    pub fn disc(center: Point2, radius: f64) -> Result<Self, GeometryError> {
        Disc::new(center, radius).map(Shape2::Disc)
    }

    /// Disc centred on the frame origin with the given diameter.
    pub fn centered_disc(diameter: f64) -> Result<Self, GeometryError> {
        Self::disc(Point2::ORIGIN, diameter / 2.0)
    }

    /// Axis-aligned square centred on the frame origin.
    pub fn centered_square(side: f64) -> Result<Self, GeometryError> {
        let h = side / 2.0;
        ConvexPolygon::rectangle(Point2::new(-h, -h), Point2::new(h, h)).map(Shape2::Polygon)
    }

    pub fn polygon(vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        ConvexPolygon::new(vertices).map(Shape2::Polygon)
    }

    pub fn contains(&self, p: Point2) -> bool {
        match self {
            Shape2::Disc(d) => d.contains(p),
            Shape2::Polygon(poly) => poly.contains(p),
        }
    }

    /// Lower-left and upper-right corners of the bounding box.
    pub fn bounding_box(&self) -> (Point2, Point2) {
        match self {
            Shape2::Disc(d) => {
                let r = Point2::new(d.radius, d.radius);
                (d.center - r, d.center + r)
            }
            Shape2::Polygon(poly) => {
                let vs = poly.vertices();
                let mut lo = vs[0];
                let mut hi = vs[0];
                for v in vs {
                    lo = Point2::new(lo.x.min(v.x), lo.y.min(v.y));
                    hi = Point2::new(hi.x.max(v.x), hi.y.max(v.y));
                }
                (lo, hi)
            }
        }
    }

    /// Largest distance from the frame origin to any point of the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape2::Disc(d) => d.center.norm() + d.radius,
            Shape2::Polygon(poly) => poly
                .vertices()
                .iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Shape2::Disc(d) => PI * d.radius * d.radius,
            Shape2::Polygon(poly) => poly.area(),
        }
    }

    pub fn translate(&self, t: Point2) -> Shape2 {
        match self {
            Shape2::Disc(d) => Shape2::Disc(Disc {
                center: d.center + t,
                radius: d.radius,
            }),
            Shape2::Polygon(poly) => Shape2::Polygon(poly.translate(t)),
        }
    }
}

pub fn contains(shape: &Shape2, p: Point2) -> bool {
    shape.contains(p)
}

// Config/file representation: {kind: "disc", cx, cy, r} or
// {kind: "polygon", vertices: [[x, y], ...]}.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ShapeRepr {
    Disc { cx: f64, cy: f64, r: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Serialize for Shape2 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = match self {
            Shape2::Disc(d) => ShapeRepr::Disc {
                cx: d.center.x,
                cy: d.center.y,
                r: d.radius,
            },
            Shape2::Polygon(poly) => ShapeRepr::Polygon {
                vertices: poly.vertices().iter().map(|v| [v.x, v.y]).collect(),
            },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Shape2 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match ShapeRepr::deserialize(deserializer)? {
            ShapeRepr::Disc { cx, cy, r } => Shape2::disc(Point2::new(cx, cy), r),
            ShapeRepr::Polygon { vertices } => {
                Shape2::polygon(vertices.into_iter().map(|[x, y]| Point2::new(x, y)).collect())
            }
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Regular grid of square cells; `origin` is the lower-left corner of cell 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point2,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(origin: Point2, spacing: f64, nx: usize, ny: usize) -> Result<Self, GeometryError> {
        if !origin.is_finite() || !spacing.is_finite() {
            return Err(GeometryError::NonFinite("grid"));
        }
        if spacing <= 0.0 {
            return Err(GeometryError::InvalidGrid(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        if nx == 0 || ny == 0 {
            return Err(GeometryError::InvalidGrid(format!(
                "grid must have at least one cell, got {nx}x{ny}"
            )));
        }
        Ok(Self {
            origin,
            spacing,
            nx,
            ny,
        })
    }

    /// Smallest grid with origin on a multiple of `spacing` that covers the box.
    pub fn covering(min: Point2, max: Point2, spacing: f64) -> Result<Self, GeometryError> {
        if spacing <= 0.0 || !spacing.is_finite() {
            return Err(GeometryError::InvalidGrid(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        let ix0 = (min.x / spacing + 1e-9).floor();
        let iy0 = (min.y / spacing + 1e-9).floor();
        let ix1 = (max.x / spacing - 1e-9).ceil();
        let iy1 = (max.y / spacing - 1e-9).ceil();
        let nx = ((ix1 - ix0) as i64).max(1) as usize;
        let ny = ((iy1 - iy0) as i64).max(1) as usize;
        Self::new(Point2::new(ix0 * spacing, iy0 * spacing), spacing, nx, ny)
    }

    /// Grid covering the bounding box of `shape`.
    pub fn for_shape(shape: &Shape2, spacing: f64) -> Result<Self, GeometryError> {
        let (lo, hi) = shape.bounding_box();
        Self::covering(lo, hi, spacing)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn cell_center(&self, index: usize) -> Point2 {
        let ix = index % self.nx;
        let iy = index / self.nx;
        Point2::new(
            self.origin.x + (ix as f64 + 0.5) * self.spacing,
            self.origin.y + (iy as f64 + 0.5) * self.spacing,
        )
    }

    pub fn centers(&self) -> impl Iterator<Item = Point2> + '_ {
        (0..self.len()).map(|i| self.cell_center(i))
    }

    /// Index of the cell containing `p`, if any.
    pub fn cell_of(&self, p: Point2) -> Option<usize> {
        let fx = ((p.x - self.origin.x) / self.spacing).floor();
        let fy = ((p.y - self.origin.y) / self.spacing).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some(self.index(fx as usize, fy as usize))
    }

    pub fn max_corner(&self) -> Point2 {
        self.origin
            + Point2::new(
                self.nx as f64 * self.spacing,
                self.ny as f64 * self.spacing,
            )
    }

    pub fn translate(&self, t: Point2) -> GridSpec {
        GridSpec {
            origin: self.origin + t,
            ..*self
        }
    }

    pub fn approx_eq(&self, other: &GridSpec) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (self.spacing - other.spacing).abs() <= 1e-9
            && self.origin.distance(other.origin) <= 1e-9
    }
}

/// Boolean contact flag per grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMask {
    pub grid: GridSpec,
    pub contact: Vec<bool>,
}

impl PatchMask {
    pub fn new(grid: GridSpec, contact: Vec<bool>) -> Result<Self, GeometryError> {
        if contact.len() != grid.len() {
            return Err(GeometryError::InvalidGrid(format!(
                "mask has {} cells but grid has {}",
                contact.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, contact })
    }

    pub fn empty(grid: GridSpec) -> Self {
        Self {
            grid,
            contact: vec![false; grid.len()],
        }
    }

    pub fn count(&self) -> usize {
        self.contact.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.contact.iter().any(|&c| c)
    }

    pub fn area(&self) -> f64 {
        self.count() as f64 * self.grid.spacing * self.grid.spacing
    }

    pub fn contact_points(&self) -> Vec<Point2> {
        self.contact
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| self.grid.cell_center(i))
            .collect()
    }

    /// Mean of the contact cell centres, `None` for an empty mask.
    pub fn contact_centroid(&self) -> Option<Point2> {
        let pts = self.contact_points();
        if pts.is_empty() {
            return None;
        }
        let sum = pts.iter().fold(Point2::ORIGIN, |acc, &p| acc + p);
        Some(sum * (1.0 / pts.len() as f64))
    }
}

#[derive(Serialize, Deserialize)]
struct PatchMaskRepr {
    grid: GridSpec,
    contact: String,
}

impl Serialize for PatchMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PatchMaskRepr {
            grid: self.grid,
            contact: self
                .contact
                .iter()
                .map(|&c| if c { '1' } else { '0' })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PatchMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PatchMaskRepr::deserialize(deserializer)?;
        let contact = repr
            .contact
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "invalid contact flag {other:?}"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        PatchMask::new(repr.grid, contact).map_err(serde::de::Error::custom)
    }
}

/// Contact cells of the grasped face when its origin sits at `offset` in the
/// bottom object's frame. `grid` lives in the grasped-object frame.
pub fn ground_truth_patch(top: &Shape2, bottom: &Shape2, offset: Point2, grid: &GridSpec) -> PatchMask {
    let contact = grid
        .centers()
        .map(|q| top.contains(q) && bottom.contains(q + offset))
        .collect();
    PatchMask {
        grid: *grid,
        contact,
    }
}

/// Result of a convex hull computation.
#[derive(Clone, Debug, PartialEq)]
pub enum Hull {
    Polygon(ConvexPolygon),
    /// Fewer than three distinct points, or all points collinear.
    Degenerate,
}

impl Hull {
    pub fn polygon(&self) -> Option<&ConvexPolygon> {
        match self {
            Hull::Polygon(p) => Some(p),
            Hull::Degenerate => None,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, Hull::Degenerate)
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.polygon().is_some_and(|poly| poly.contains(p))
    }
}

/// Andrew's monotone chain. Collinear boundary points are dropped.
pub fn convex_hull(points: &[Point2]) -> Hull {
    let mut pts: Vec<Point2> = points.iter().copied().filter(|p| p.is_finite()).collect();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Hull::Degenerate;
    }
    let scale = pts
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()))
        .fold(1.0, f64::max);
    let eps = 1e-12 * scale * scale;
    let turn = |o: Point2, a: Point2, b: Point2| (a - o).cross(b - o);

    let mut lower: Vec<Point2> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && turn(lower[lower.len() - 2], lower[lower.len() - 1], p) <= eps {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point2> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && turn(upper[upper.len() - 2], upper[upper.len() - 1], p) <= eps {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        return Hull::Degenerate;
    }
    match ConvexPolygon::new(lower) {
        Ok(poly) => Hull::Polygon(poly),
        Err(_) => Hull::Degenerate,
    }
}
