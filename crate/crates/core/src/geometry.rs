//! Building footprint geometry.
//!
//! Turns raw footprint polygons into fixed-length boundary sequences that are
//! invariant to translation and uniform scale, plus scalar features (area,
//! height, principal orientation) that keep the absolute information the
//! normalization removes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stabilizer added to the maximum radius before dividing.
pub const RADIUS_EPS: f64 = 1e-8;
/// Relative eigenvalue gap below which a footprint has no preferred axis.
pub const EIGEN_TIE_EPS: f64 = 1e-9;
/// Default boundary sequence length.
pub const BOUNDARY_LEN: usize = 128;

/// Raw footprint: exterior ring in projected metre coordinates, optional
/// interior rings (holes), and building height in metres.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FootprintPolygon {
    pub uprn: String,
    /// Exterior ring, first vertex not repeated at the end.
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub holes: Vec<Vec<[f64; 2]>>,
    pub height: f64,
    /// Whether the source ring explicitly repeated its first vertex.
    #[serde(default)]
    pub is_closed: bool,
}

/// Fixed-length boundary after resampling and normalization. `points` are
/// centred at the origin and scaled so the maximum radius is just under 1;
/// `r_max` and `centroid` retain the removed scale and position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySequence {
    pub points: Vec<[f64; 2]>,
    pub r_max: f64,
    pub centroid: [f64; 2],
}

/// Scalar geometry features fed to the spatial encoder alongside the
/// boundary sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialFeatures {
    /// Exterior area minus hole areas, m^2.
    pub footprint_area: f64,
    /// Building height, m.
    pub height: f64,
    /// Principal axis angle in [0, pi); 0 when no axis dominates.
    pub orientation: f64,
}

impl FootprintPolygon {
    /// Validates and stores a footprint. A ring that repeats its first vertex
    /// is accepted and truncated, with `is_closed` recording the fact.
    pub fn new(
        uprn: impl Into<String>,
        mut points: Vec<[f64; 2]>,
        holes: Vec<Vec<[f64; 2]>>,
        height: f64,
    ) -> Result<Self> {
        let uprn = uprn.into();
        let degenerate = |reason: &str| Error::DegenerateGeometry {
            uprn: uprn.clone(),
            reason: reason.to_string(),
        };
        let mut is_closed = false;
        if points.len() >= 2 && points.first() == points.last() {
            points.pop();
            is_closed = true;
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(degenerate("non-finite coordinate"));
        }
        let mut distinct: Vec<[u64; 2]> = points
            .iter()
            .map(|p| [p[0].to_bits(), p[1].to_bits()])
            .collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 3 {
            return Err(degenerate("fewer than 3 distinct vertices"));
        }
        if !height.is_finite() || height < 0.0 {
            return Err(degenerate("height must be finite and non-negative"));
        }
        let poly = FootprintPolygon {
            uprn,
            points,
            holes,
            height,
            is_closed,
        };
        if poly.perimeter() <= 0.0 {
            return Err(Error::DegenerateGeometry {
                uprn: poly.uprn,
                reason: "zero perimeter".to_string(),
            });
        }
        Ok(poly)
    }

    /// Exterior perimeter including the closing edge back to the first vertex.
    pub fn perimeter(&self) -> f64 {
        ring_perimeter(&self.points)
    }
}

fn ring_perimeter(ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        })
        .sum()
}

/// Signed shoelace area of a ring (closing edge implied).
fn ring_signed_area(ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

/// Resamples the exterior ring to `l` points equally spaced by arc length,
/// starting at the first vertex and walking the closed ring once.
pub fn resample_boundary(poly: &FootprintPolygon, l: usize) -> Result<Vec<[f64; 2]>> {
    if l < 3 {
        return Err(Error::InvalidConfig(format!(
            "boundary length must be at least 3, got {l}"
        )));
    }
    let ring = &poly.points;
    let n = ring.len();
    // Cumulative arc length at the start of each edge; cums[n] is the perimeter.
    let mut cums = Vec::with_capacity(n + 1);
    let mut total = 0.0;
    cums.push(0.0);
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        total += ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        cums.push(total);
    }
    if total <= 0.0 {
        return Err(Error::DegenerateGeometry {
            uprn: poly.uprn.clone(),
            reason: "zero perimeter".to_string(),
        });
    }
    let mut out = Vec::with_capacity(l);
    let mut edge = 0;
    for k in 0..l {
        let target = total * (k as f64) / (l as f64);
        while edge + 1 < n && cums[edge + 1] <= target {
            edge += 1;
        }
        let len = cums[edge + 1] - cums[edge];
        let a = ring[edge];
        let b = ring[(edge + 1) % n];
        if len > 0.0 {
            let t = (target - cums[edge]) / len;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        } else {
            out.push(a);
        }
    }
    Ok(out)
}

/// Centres a boundary sequence at its mean and divides by the maximum radius
/// plus [`RADIUS_EPS`], so every point lands inside the unit disc.
pub fn normalize_boundary(seq: &[[f64; 2]]) -> Result<BoundarySequence> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("boundary sequence".to_string()));
    }
    let n = seq.len() as f64;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for p in seq {
        cx += p[0];
        cy += p[1];
    }
    cx /= n;
    cy /= n;
    let mut r_max = 0.0f64;
    for p in seq {
        let r = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
        r_max = r_max.max(r);
    }
    if r_max == 0.0 {
        return Err(Error::DegenerateGeometry {
            uprn: String::new(),
            reason: "all boundary points identical".to_string(),
        });
    }
    let s = 1.0 / (r_max + RADIUS_EPS);
    let points = seq
        .iter()
        .map(|p| [(p[0] - cx) * s, (p[1] - cy) * s])
        .collect();
    Ok(BoundarySequence {
        points,
        r_max,
        centroid: [cx, cy],
    })
}

/// Principal axis of a centred point set, from the dominant eigenvector of
/// the 2x2 second-moment matrix, folded into [0, pi). Returns 0 when the
/// eigenvalues are equal to within [`EIGEN_TIE_EPS`] relative gap.
pub fn principal_orientation(centred: &[[f64; 2]]) -> f64 {
    let mut a = 0.0;
    let mut b = 0.0;
    let mut c = 0.0;
    for p in centred {
        a += p[0] * p[0];
        b += p[0] * p[1];
        c += p[1] * p[1];
    }
    let tr = a + c;
    let disc = ((a - c).powi(2) + 4.0 * b * b).sqrt();
    let l1 = (tr + disc) / 2.0;
    let l2 = (tr - disc) / 2.0;
    if tr <= 0.0 || (l1 - l2) <= EIGEN_TIE_EPS * tr {
        return 0.0;
    }
    // Eigenvector for l1; pick the better-conditioned of the two closed forms.
    let v1 = [b, l1 - a];
    let v2 = [l1 - c, b];
    let v = if v1[0] * v1[0] + v1[1] * v1[1] >= v2[0] * v2[0] + v2[1] * v2[1] {
        v1
    } else {
        v2
    };
    let mut theta = v[1].atan2(v[0]);
    if theta < 0.0 {
        theta += std::f64::consts::PI;
    }
    if theta >= std::f64::consts::PI {
        theta -= std::f64::consts::PI;
    }
    theta
}

/// Exterior shoelace area minus hole areas, always from absolute values so
/// winding order never matters. Self-intersecting rings are accepted; the
/// caller flags them via [`ring_self_intersects`].
pub fn footprint_area(poly: &FootprintPolygon) -> Result<f64> {
    let mut area = ring_signed_area(&poly.points).abs();
    for hole in &poly.holes {
        area -= ring_signed_area(hole).abs();
    }
    if area <= 0.0 {
        return Err(Error::DegenerateGeometry {
            uprn: poly.uprn.clone(),
            reason: "zero or negative footprint area".to_string(),
        });
    }
    Ok(area)
}

/// True when any two non-adjacent edges of the ring properly cross.
pub fn ring_self_intersects(ring: &[[f64; 2]]) -> bool {
    let n = ring.len();
    if n < 4 {
        return false;
    }
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| -> f64 {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        for j in (i + 1)..n {
            // Skip the edge itself and the two neighbours sharing a vertex.
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let c = ring[j];
            let d = ring[(j + 1) % n];
            let o1 = orient(a, b, c);
            let o2 = orient(a, b, d);
            let o3 = orient(c, d, a);
            let o4 = orient(c, d, b);
            if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
                return true;
            }
        }
    }
    false
}

/// Full geometry pipeline for one footprint: resample to `l` points,
/// normalize, then measure orientation on the normalized sequence and area
/// and height on the raw polygon.
pub fn build_spatial_features(
    poly: &FootprintPolygon,
    l: usize,
) -> Result<(SpatialFeatures, BoundarySequence)> {
    let resampled = resample_boundary(poly, l)?;
    let seq = normalize_boundary(&resampled).map_err(|e| match e {
        Error::DegenerateGeometry { reason, .. } => Error::DegenerateGeometry {
            uprn: poly.uprn.clone(),
            reason,
        },
        other => other,
    })?;
    let orientation = principal_orientation(&seq.points);
    let footprint_area = footprint_area(poly)?;
    Ok((
        SpatialFeatures {
            footprint_area,
            height: poly.height,
            orientation,
        },
        seq,
    ))
}
