//! Point-to-box distance math shared by rewards and evaluation.
//!
//! Coordinates are pixels with the origin at the top-left corner. Box
//! membership is inclusive: a point on an edge is inside.

use serde::{Deserialize, Serialize};

use crate::corpus::BoundingBox;

/// Boxes whose inradius is at or below this are treated as point/line targets.
pub const DEGENERATE_INRADIUS_PX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub u: f64,
    pub v: f64,
}

impl Point {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn translated(&self, du: f64, dv: f64) -> Self {
        Self::new(self.u + du, self.v + dv)
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.u, p.v]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("box {bbox} exceeds the {width}x{height} image")]
    BoxOutsideImage { bbox: BoundingBox, width: f64, height: f64 },
}

pub fn point_in_box(p: Point, b: &BoundingBox) -> bool {
    b.x1 <= p.u && p.u <= b.x2 && b.y1 <= p.v && p.v <= b.y2
}

/// Euclidean distance from `p` to the nearest point of `b`, and that point.
pub fn unsigned_distance(p: Point, b: &BoundingBox) -> (f64, Point) {
    let closest = Point::new(p.u.clamp(b.x1, b.x2), p.v.clamp(b.y1, b.y2));
    let d = (p.u - closest.u).hypot(p.v - closest.v);
    (d, closest)
}

/// Distance to the nearest edge inside the box, minus the distance to the box outside.
pub fn signed_distance(p: Point, b: &BoundingBox) -> f64 {
    if point_in_box(p, b) {
        (p.u - b.x1).min(b.x2 - p.u).min(p.v - b.y1).min(b.y2 - p.v)
    } else {
        -unsigned_distance(p, b).0
    }
}

/// Largest distance to `b` reachable from any point of a `width`x`height` image.
///
/// Distance to a box is convex, so the maximum over the image rectangle sits
/// at one of its four corners.
pub fn max_distance(b: &BoundingBox, width: f64, height: f64) -> Result<f64, GeometryError> {
    if !b.within_image(width, height) {
        return Err(GeometryError::BoxOutsideImage {
            bbox: *b,
            width,
            height,
        });
    }
    Ok([(0.0, 0.0), (width, 0.0), (0.0, height), (width, height)]
        .into_iter()
        .map(|(u, v)| unsigned_distance(Point::new(u, v), b).0)
        .fold(0.0, f64::max))
}

pub fn inradius(b: &BoundingBox) -> f64 {
    b.width().min(b.height()) / 2.0
}

/// Signed distance scaled into `[-1, 1]`.
///
/// Outside the box the signed distance is divided by [`max_distance`]; inside
/// it is divided by the box inradius so the center scores 1. Points outside
/// the image are clamped to -1.
pub fn normalized_distance(p: Point, b: &BoundingBox, width: f64, height: f64) -> Result<f64, GeometryError> {
    Ok(DistanceProfile::compute(p, b, width, height)?.d_norm)
}

/// Every distance quantity for one prediction against one box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub unsigned_dist: f64,
    pub closest_point: Point,
    pub signed_dist: f64,
    pub max_dist: f64,
    pub d_norm: f64,
}

impl DistanceProfile {
    pub fn compute(p: Point, b: &BoundingBox, width: f64, height: f64) -> Result<Self, GeometryError> {
        let max_dist = max_distance(b, width, height)?;
        let (unsigned_dist, closest_point) = unsigned_distance(p, b);
        let signed_dist = signed_distance(p, b);
        let d_norm = if point_in_box(p, b) {
            let r = inradius(b);
            if r <= DEGENERATE_INRADIUS_PX {
                1.0
            } else {
                (signed_dist / r).min(1.0)
            }
        } else if max_dist <= 0.0 {
            // Box covers the image, so p is off-image.
            -1.0
        } else {
            // Keep misses strictly negative even if the ratio underflows.
            (signed_dist / max_dist).clamp(-1.0, -f64::MIN_POSITIVE)
        };
        Ok(Self {
            unsigned_dist,
            closest_point,
            signed_dist,
            max_dist,
            d_norm,
        })
    }
}
