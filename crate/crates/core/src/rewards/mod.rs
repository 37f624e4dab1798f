//! Reward schemes for point predictions and leave-one-out advantages.
//!
//! Three schemes are available. [`RewardScheme::Discrete`] maps the signed,
//! normalized distance onto six bands and is the one used for training;
//! [`RewardScheme::Continuous`] and [`RewardScheme::Binary`] are kept for
//! comparison runs.

pub mod server;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::BoundingBox;
use crate::evaluation::{parse_prediction, CoordSpace, PairPolicy};
use crate::geometry::{self, point_in_box, GeometryError, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScheme {
    Discrete,
    Continuous,
    Binary,
}

impl RewardScheme {
    /// Reward given to rollouts whose coordinates cannot be parsed.
    pub fn minimum(self) -> f64 {
        match self {
            RewardScheme::Discrete => -1.0,
            RewardScheme::Continuous | RewardScheme::Binary => 0.0,
        }
    }
}

impl FromStr for RewardScheme {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "discrete" => Ok(Self::Discrete),
            "continuous" => Ok(Self::Continuous),
            "binary" => Ok(Self::Binary),
            other => Err(RewardError::UnknownScheme(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("normalized distance {0} outside [-1, 1]")]
    DistanceOutOfRange(f64),
    #[error("unknown reward scheme {0:?}")]
    UnknownScheme(String),
    #[error("rollout group is empty")]
    EmptyGroup,
    #[error("leave-one-out undefined for a group of {0}")]
    GroupTooSmall(usize),
    #[error("coord_space is required to parse text rollouts")]
    MissingCoordSpace,
    #[error("invalid image size {width}x{height}")]
    InvalidImage { width: f64, height: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Six-band reward over the normalized distance. Lower band edges are
/// inclusive, upper edges exclusive.
pub fn discrete_reward(d_norm: f64) -> Result<f64, RewardError> {
    if !(-1.0..=1.0).contains(&d_norm) {
        return Err(RewardError::DistanceOutOfRange(d_norm));
    }
    Ok(if d_norm < -0.5 {
        -1.0
    } else if d_norm < -0.1 {
        -0.5
    } else if d_norm < 0.0 {
        -0.1
    } else if d_norm < 0.1 {
        0.1
    } else if d_norm < 0.5 {
        0.5
    } else {
        1.0
    })
}

/// `1 - d / max_dist`, floored at 0 for points beyond the image.
pub fn continuous_reward(p: Point, b: &BoundingBox, width: f64, height: f64) -> Result<f64, RewardError> {
    let max_dist = geometry::max_distance(b, width, height)?;
    if point_in_box(p, b) {
        return Ok(1.0);
    }
    if max_dist <= 0.0 {
        return Ok(0.0);
    }
    let (d, _) = geometry::unsigned_distance(p, b);
    let r = (1.0 - d / max_dist).max(0.0);
    // A miss must never round up to a hit.
    Ok(r.min(1.0 - f64::EPSILON / 2.0))
}

pub fn binary_reward(p: Point, b: &BoundingBox) -> f64 {
    if point_in_box(p, b) {
        1.0
    } else {
        0.0
    }
}

/// Reward for one located point under `scheme`.
pub fn reward_for_point(
    scheme: RewardScheme,
    p: Point,
    b: &BoundingBox,
    width: f64,
    height: f64,
) -> Result<f64, RewardError> {
    match scheme {
        RewardScheme::Discrete => discrete_reward(geometry::normalized_distance(p, b, width, height)?),
        RewardScheme::Continuous => continuous_reward(p, b, width, height),
        RewardScheme::Binary => Ok(binary_reward(p, b)),
    }
}

/// A rollout's answer: a pixel point or the raw decoded text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Point(Point),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub bbox: BoundingBox,
    pub image_w: f64,
    pub image_h: f64,
    pub rollouts: Vec<Prediction>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }
}

/// Reward every rollout in order. Text that yields no coordinates scores the
/// scheme minimum.
pub fn score_group(
    group: &RolloutGroup,
    scheme: RewardScheme,
    coord_space: Option<CoordSpace>,
    pair_policy: PairPolicy,
) -> Result<Vec<f64>, RewardError> {
    if group.is_empty() {
        return Err(RewardError::EmptyGroup);
    }
    let (w, h) = (group.image_w, group.image_h);
    if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
        return Err(RewardError::InvalidImage { width: w, height: h });
    }
    // Surface box errors even when every rollout fails to parse.
    geometry::max_distance(&group.bbox, w, h)?;
    group
        .rollouts
        .iter()
        .map(|rollout| {
            let point = match rollout {
                Prediction::Point(p) => Some(*p),
                Prediction::Text(text) => {
                    let space = coord_space.ok_or(RewardError::MissingCoordSpace)?;
                    parse_prediction(text, space, w, h, pair_policy).ok()
                }
            };
            match point {
                Some(p) if p.is_finite() => reward_for_point(scheme, p, &group.bbox, w, h),
                _ => Ok(scheme.minimum()),
            }
        })
        .collect()
}

/// Leave-one-out advantages: each reward minus the mean of the others.
///
/// Computed as `n / (n - 1) * (r_i - mean)`, which is algebraically the same
/// and keeps the sum at zero up to rounding.
pub fn rloo_advantages(rewards: &[f64]) -> Result<Vec<f64>, RewardError> {
    let n = rewards.len();
    if n < 2 {
        return Err(RewardError::GroupTooSmall(n));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let scale = n as f64 / (n - 1) as f64;
    Ok(rewards.iter().map(|r| scale * (r - mean)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const B: BoundingBox = BoundingBox::new(0.0, 0.0, 10.0, 10.0);

    /// The formula as written: a naive double loop over the other rollouts.
    fn rloo_oracle(r: &[f64]) -> Vec<f64> {
        let n = r.len();
        (0..n)
            .map(|i| {
                let mut others = 0.0;
                for (j, rj) in r.iter().enumerate() {
                    if j != i {
                        others += rj;
                    }
                }
                r[i] - others / (n - 1) as f64
            })
            .collect()
    }

    #[test]
    fn band_examples() {
        assert_eq!(discrete_reward(-0.7).unwrap(), -1.0);
        assert_eq!(discrete_reward(0.0).unwrap(), 0.1);
        assert_eq!(discrete_reward(1.0).unwrap(), 1.0);
        assert!(discrete_reward(1.01).is_err());
        assert!(discrete_reward(f64::NAN).is_err());
    }

    #[test]
    fn every_band_edge() {
        let cases = [
            (-1.0, -1.0),
            (-0.5000001, -1.0),
            (-0.5, -0.5),
            (-0.1000001, -0.5),
            (-0.1, -0.1),
            (-1e-12, -0.1),
            (0.0, 0.1),
            (0.0999999, 0.1),
            (0.1, 0.5),
            (0.4999999, 0.5),
            (0.5, 1.0),
        ];
        for (d, want) in cases {
            assert_eq!(discrete_reward(d).unwrap(), want, "d_norm {d}");
        }
    }

    #[test]
    fn continuous_examples() {
        assert_eq!(continuous_reward(Point::new(3.0, 4.0), &B, 100.0, 100.0).unwrap(), 1.0);
        let corner = continuous_reward(Point::new(100.0, 100.0), &B, 100.0, 100.0).unwrap();
        assert!(corner.abs() < 1e-12);
        let mid = continuous_reward(Point::new(55.0, 5.0), &B, 100.0, 100.0).unwrap();
        assert!((mid - (1.0 - 45.0 / (90.0 * 2f64.sqrt()))).abs() < 1e-12);
        assert!((mid - 0.6464).abs() < 1e-4);
        assert_eq!(
            continuous_reward(Point::new(900.0, 900.0), &B, 100.0, 100.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn continuous_miss_never_reaches_one() {
        let p = Point::new(10.0 + 1e-13, 5.0);
        assert!(continuous_reward(p, &B, 100.0, 100.0).unwrap() < 1.0);
    }

    #[test]
    fn binary_examples() {
        assert_eq!(binary_reward(Point::new(5.0, 5.0), &B), 1.0);
        assert_eq!(binary_reward(Point::new(11.0, 5.0), &B), 0.0);
        assert_eq!(binary_reward(Point::new(10.0, 10.0), &B), 1.0);
    }

    fn group(rollouts: Vec<Prediction>) -> RolloutGroup {
        RolloutGroup {
            bbox: B,
            image_w: 100.0,
            image_h: 100.0,
            rollouts,
        }
    }

    #[test]
    fn score_group_examples() {
        let g = group(vec![
            Prediction::Point(Point::new(5.0, 5.0)),
            Prediction::Point(Point::new(10.0, 5.0)),
            Prediction::Point(Point::new(100.0, 100.0)),
        ]);
        let d = score_group(&g, RewardScheme::Discrete, None, PairPolicy::Last).unwrap();
        assert_eq!(d, vec![1.0, 0.1, -1.0]);
        let b = score_group(&g, RewardScheme::Binary, None, PairPolicy::Last).unwrap();
        assert_eq!(b, vec![1.0, 1.0, 0.0]);

        let junk = group(vec![Prediction::Text("no idea".into())]);
        let r = score_group(&junk, RewardScheme::Discrete, Some(CoordSpace::Pixel), PairPolicy::Last).unwrap();
        assert_eq!(r, vec![-1.0]);
        let r = score_group(
            &junk,
            RewardScheme::Continuous,
            Some(CoordSpace::Pixel),
            PairPolicy::Last,
        )
        .unwrap();
        assert_eq!(r, vec![0.0]);
    }

    #[test]
    fn score_group_errors() {
        assert_eq!(
            score_group(&group(vec![]), RewardScheme::Binary, None, PairPolicy::Last),
            Err(RewardError::EmptyGroup)
        );
        let text = group(vec![Prediction::Text("(1, 1)".into())]);
        assert_eq!(
            score_group(&text, RewardScheme::Binary, None, PairPolicy::Last),
            Err(RewardError::MissingCoordSpace)
        );
        let mut off = group(vec![Prediction::Point(Point::new(1.0, 1.0))]);
        off.bbox = BoundingBox::new(0.0, 0.0, 200.0, 10.0);
        assert!(matches!(
            score_group(&off, RewardScheme::Discrete, None, PairPolicy::Last),
            Err(RewardError::Geometry(_))
        ));
    }

    #[test]
    fn rloo_examples() {
        assert_eq!(rloo_advantages(&[1.0; 4]).unwrap(), vec![0.0; 4]);
        for rewards in [[1.0, 0.0, 0.0, 0.0], [2.0, 1.0, 1.0, 1.0]] {
            let got = rloo_advantages(&rewards).unwrap();
            let oracle = rloo_oracle(&rewards);
            let want = [1.0, -1.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0];
            for ((g, o), w) in got.iter().zip(&oracle).zip(want) {
                assert!((o - w).abs() < 1e-15);
                assert!((g - w).abs() < 1e-12, "{got:?}");
            }
        }
        assert_eq!(rloo_advantages(&[1.0]), Err(RewardError::GroupTooSmall(1)));
        assert!(rloo_advantages(&[1.0])
            .unwrap_err()
            .to_string()
            .contains("leave-one-out undefined"));
    }

    #[test]
    fn scheme_names_parse() {
        assert_eq!("discrete".parse::<RewardScheme>().unwrap(), RewardScheme::Discrete);
        assert!("grpo".parse::<RewardScheme>().is_err());
    }
}
