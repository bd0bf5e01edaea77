//! Streamline representations and the geometric operations used throughout
//! the pipeline: arc-length resampling, midsagittal reflection and the MDF
//! distance.
//!
//! Coordinates are RAS millimetres held in `f64`.

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Default number of points a streamline is resampled to before it is fed
/// to the network.
pub const DEFAULT_POINTS: usize = 15;

#[inline]
pub(crate) fn distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// A raw streamline: an ordered sequence of at least two finite points.
#[derive(Debug, Clone, PartialEq)]
pub struct Streamline {
    points: Vec<Point3>,
}

impl Streamline {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidStreamline(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidStreamline(format!(
                "non-finite coordinate at point {i}"
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self { points }
    }

    pub fn length(&self) -> f64 {
        streamline_length(self)
    }
}

/// A streamline resampled to a fixed number of points.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledStreamline {
    points: Vec<Point3>,
}

impl ResampledStreamline {
    /// Wraps points that are already at the network resolution.
    ///
    /// No spacing check is made; use [`resample`] to produce equidistant points
    /// from arbitrary input.
    pub fn from_points(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidStreamline("no points".into()));
        }
        if points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidStreamline("non-finite coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self { points }
    }

    pub fn translated(&self, t: Point3) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
        }
    }

    pub fn into_streamline(self) -> Result<Streamline> {
        Streamline::new(self.points)
    }
}

impl AsRef<[Point3]> for ResampledStreamline {
    fn as_ref(&self) -> &[Point3] {
        &self.points
    }
}

impl AsRef<[Point3]> for Streamline {
    fn as_ref(&self) -> &[Point3] {
        &self.points
    }
}

/// Sum of consecutive-point Euclidean distances.
pub fn streamline_length(s: &Streamline) -> f64 {
    s.points.windows(2).map(|w| distance(&w[0], &w[1])).sum()
}

/// Resamples `s` to `n` points at equal arc-length intervals by linear
/// interpolation along the cumulative chord length.
///
/// Endpoints are copied exactly. A zero-length streamline yields `n` copies of
/// its single location.
pub fn resample(s: &Streamline, n: usize) -> Result<ResampledStreamline> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "resample needs n >= 2, got {n}"
        )));
    }
    let pts = &s.points;
    let last = pts.len() - 1;

    let mut cumulative = Vec::with_capacity(pts.len());
    cumulative.push(0.0);
    for w in pts.windows(2) {
        let prev = *cumulative.last().unwrap();
        cumulative.push(prev + distance(&w[0], &w[1]));
    }
    let total = cumulative[last];
    if total == 0.0 {
        return Ok(ResampledStreamline {
            points: vec![pts[0]; n],
        });
    }

    let mut out = Vec::with_capacity(n);
    out.push(pts[0]);
    let mut j = 1;
    for k in 1..n - 1 {
        let target = total * (k as f64) / ((n - 1) as f64);
        while j < last && cumulative[j] < target {
            j += 1;
        }
        let seg = cumulative[j] - cumulative[j - 1];
        let t = if seg > 0.0 {
            ((target - cumulative[j - 1]) / seg).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(lerp(&pts[j - 1], &pts[j], t));
    }
    out.push(pts[last]);
    Ok(ResampledStreamline { points: out })
}

fn lerp(a: &Point3, b: &Point3, t: f64) -> Point3 {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Mirrors a streamline across the midsagittal plane `r = 0`.
pub fn reflect_bilateral(s: &ResampledStreamline) -> ResampledStreamline {
    ResampledStreamline {
        points: s.points.iter().map(|p| [-p[0], p[1], p[2]]).collect(),
    }
}

/// Minimum average direct-flip distance between two equal-length streamlines.
pub fn mdf_distance(a: &ResampledStreamline, b: &ResampledStreamline) -> Result<f64> {
    mdf_points(&a.points, &b.points)
}

pub(crate) fn mdf_points(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::PointCountMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let n = a.len();
    let direct: f64 = a.iter().zip(b).map(|(p, q)| distance(p, q)).sum();
    let flipped: f64 = a.iter().zip(b.iter().rev()).map(|(p, q)| distance(p, q)).sum();
    Ok(direct.min(flipped) / n as f64)
}
