//! The map F(z) = z + uₙ(x, y) and its Beltrami coefficient off Γₙ.
//!
//! uₙ is extended to the plane as ∫_{−∞}^x Aₙ(t, y) dt: zero left of the
//! unit square and below or above it, A₁(y) to its right.

use std::fmt::Write as _;

use num_integer::Integer;
use num_traits::{Signed, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::{self, ExactScalar};
use crate::tower::{self, tent, ConstructionParams};
use crate::verifier::{self, SampleConfig};

/// uₙ on the whole plane.
pub fn u_plane(params: &ConstructionParams, n: usize, x: &ExactScalar, y: &ExactScalar) -> Result<ExactScalar> {
    if n == 0 || n > params.max_depth() {
        return Err(Error::Range(format!("level {n} outside 1..={}", params.max_depth())));
    }
    let one = exact::int(1);
    if y.is_negative() || *y > one || !x.is_positive() {
        return Ok(ExactScalar::zero());
    }
    if *x >= one {
        return Ok(tent(y));
    }
    tower::u_eval(params, n, x, y)
}

/// F(x, y) = (x + uₙ(x, y), y).
#[allow(non_snake_case)]
pub fn F_eval(params: &ConstructionParams, n: usize, x: &ExactScalar, y: &ExactScalar) -> Result<(ExactScalar, ExactScalar)> {
    Ok((x + u_plane(params, n, x, y)?, y.clone()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub pass: bool,
    /// First index i with F(xᵢ₊₁) ≤ F(xᵢ).
    pub violation: Option<usize>,
    /// min (F(xᵢ₊₁) − F(xᵢ)) / (xᵢ₊₁ − xᵢ); at least 1 when uₙ is
    /// nondecreasing in x.
    pub min_gap_ratio: Option<ExactScalar>,
}

pub fn monotonicity_check(
    params: &ConstructionParams,
    n: usize,
    y: &ExactScalar,
    xs: &[ExactScalar],
) -> Result<MonotonicityReport> {
    if let Some(i) = xs.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Domain(format!("x list not strictly increasing at index {}", i + 1)));
    }
    let images: Vec<ExactScalar> = xs
        .par_iter()
        .map(|x| F_eval(params, n, x, y).map(|p| p.0))
        .collect::<Result<_>>()?;
    let mut violation = None;
    let mut min_gap_ratio: Option<ExactScalar> = None;
    for (i, (f, x)) in images.windows(2).zip(xs.windows(2)).enumerate() {
        if f[1] <= f[0] && violation.is_none() {
            violation = Some(i);
        }
        let r = (&f[1] - &f[0]) / (&x[1] - &x[0]);
        if min_gap_ratio.as_ref().map_or(true, |m| r < *m) {
            min_gap_ratio = Some(r);
        }
    }
    Ok(MonotonicityReport {
        pass: violation.is_none(),
        violation,
        min_gap_ratio,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeltramiSample {
    pub x: ExactScalar,
    pub y: ExactScalar,
    pub u_x: f64,
    pub u_y: f64,
    /// |u_y| / √(4 + u_y²).
    pub mu_abs: f64,
    /// √(u_x² + u_y²) / √((2 + u_x)² + u_y²) from both difference quotients.
    pub mu_full: f64,
    pub level: usize,
}

/// Clearance between (x, y) and Γₙ along the horizontal line at height y,
/// measured inside the column that keeps the line off Γₙ; `None` on Γₙ.
fn gap_to_support(params: &ConstructionParams, n: usize, x: &ExactScalar, y: &ExactScalar) -> Result<Option<ExactScalar>> {
    let one = exact::int(1);
    if *x > one {
        return Ok(Some(x - one));
    }
    if x.is_negative() {
        return Ok(Some(-x.clone()));
    }
    if y.is_negative() || *y > one {
        return Err(Error::Domain(format!("y = {y} outside [0,1] with x inside")));
    }
    if tower::locate(params, x, y, n)?.is_some() {
        return Ok(None);
    }
    // Inside the square the horizontal line through the point leaves the
    // support in some column of some rectangle: either the column is empty
    // or its rectangle misses y. A = 0 across that column at height y.
    let cols = exact::from_big(params.columns().clone());
    let mut rect = tower::Rect::unit();
    for _ in 1..n {
        let col_w = &rect.width / &cols;
        let j = exact::floor_int(&((x - &rect.x0) / &col_w)).min(params.columns() - 1);
        let left = &rect.x0 + &col_w * exact::from_big(j.clone());
        let clearance = (x - &left).min(&left + &col_w - x);
        if j.is_even() {
            return Ok(Some(clearance));
        }
        let position = tower::column_position(params, &((&j - 1) / 2))?;
        let child = rect.child(params, &j, &position);
        if !child.contains_y(y) {
            return Ok(Some(clearance));
        }
        rect = child;
    }
    Ok(None)
}

/// Beltrami coefficient of F at a point off Γₙ, from exact symmetric
/// difference quotients; the x-step is half the horizontal gap to Γₙ.
pub fn beltrami(params: &ConstructionParams, n: usize, x: &ExactScalar, y: &ExactScalar) -> Result<BeltramiSample> {
    let gap = gap_to_support(params, n, x, y)?
        .ok_or_else(|| Error::Domain(format!("({x}, {y}) lies on the level-{n} support")))?;
    let g = tower::level_geometry(params, n)?;
    let hx = (&gap / exact::int(2)).min(g.width.clone() / exact::int(4));
    let hy = &g.height / exact::from_big(params.rows().clone()) * exact::ratio(1, 1 << 20);
    let two = exact::int(2);
    let u_y = (u_plane(params, n, x, &(y + &hy))? - u_plane(params, n, x, &(y - &hy))?) / (&two * &hy);
    let u_x = (u_plane(params, n, &(x + &hx), y)? - u_plane(params, n, &(x - &hx), y)?) / (&two * &hx);
    let (ux, uy) = (exact::to_f64(&u_x), exact::to_f64(&u_y));
    Ok(BeltramiSample {
        x: x.clone(),
        y: y.clone(),
        u_x: ux,
        u_y: uy,
        mu_abs: uy.abs() / (4.0 + uy * uy).sqrt(),
        mu_full: ux.hypot(uy) / (2.0 + ux).hypot(uy),
        level: n,
    })
}

/// Off-support sample points used for level n: for each m ≤ n the empty
/// columns of level-(m−1) rectangles (right of the square for m = 1), with
/// y at ladder midpoints. uₙ agrees with uₘ on those columns.
pub fn sample_points(params: &ConstructionParams, n: usize, cfg: &SampleConfig) -> Result<Vec<(usize, ExactScalar, ExactScalar)>> {
    let mut out = Vec::new();
    for m in 1..=n {
        let ladder = verifier::gap_samples(params, m, cfg)?;
        for s in ladder {
            let xs: Vec<ExactScalar> = if m == 1 { vec![exact::ratio(3, 2)] } else { s.xs };
            for x in &xs {
                for w in s.ys.windows(2) {
                    let y = (&w[0] + &w[1]) / exact::int(2);
                    out.push((m, x.clone(), y));
                }
            }
        }
    }
    Ok(out)
}

pub fn beltrami_samples(params: &ConstructionParams, n: usize, cfg: &SampleConfig) -> Result<Vec<BeltramiSample>> {
    sample_points(params, n, cfg)?
        .par_iter()
        .map(|(_, x, y)| beltrami(params, n, x, y))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeltramiSup {
    pub level: usize,
    pub k: f64,
    /// Largest |μ| discrepancy between closed form and full quotient.
    pub max_discrepancy: f64,
    pub samples: usize,
}

/// Steepest gap point found by the line scan at each level m ≤ n (right of
/// the square for m = 1).
fn scan_points(params: &ConstructionParams, n: usize) -> Result<Vec<(ExactScalar, ExactScalar)>> {
    (1..=n)
        .map(|m| {
            if m == 1 {
                return Ok((exact::ratio(3, 2), exact::ratio(1, 4)));
            }
            Ok(verifier::scan_bn(params, m)?.argmax)
        })
        .collect()
}

fn sup_over(level: usize, samples: &[BeltramiSample]) -> BeltramiSup {
    BeltramiSup {
        level,
        k: samples.iter().map(|s| s.mu_abs).fold(0.0, f64::max),
        max_discrepancy: samples.iter().map(|s| (s.mu_abs - s.mu_full).abs()).fold(0.0, f64::max),
        samples: samples.len(),
    }
}

/// k = max |μ_F| over the off-support grid plus the steepest gap point of
/// every level m ≤ n.
pub fn beltrami_sup(params: &ConstructionParams, n: usize, cfg: &SampleConfig) -> Result<BeltramiSup> {
    let mut samples = beltrami_samples(params, n, cfg)?;
    for (x, y) in scan_points(params, n)? {
        samples.push(beltrami(params, n, &x, &y)?);
    }
    Ok(sup_over(n, &samples))
}

/// [`beltrami_sup`] for levels 1..=n_max, sharing the line scans.
pub fn beltrami_levels(params: &ConstructionParams, n_max: usize, cfg: &SampleConfig) -> Result<Vec<BeltramiSup>> {
    let peaks = scan_points(params, n_max)?;
    (1..=n_max)
        .map(|n| {
            let mut samples = beltrami_samples(params, n, cfg)?;
            for (x, y) in &peaks[..n] {
                samples.push(beltrami(params, n, x, y)?);
            }
            Ok(sup_over(n, &samples))
        })
        .collect()
}

/// Distortion (1 + k)/(1 − k).
pub fn distortion(k: f64) -> f64 {
    (1.0 + k) / (1.0 - k)
}

pub fn samples_csv(samples: &[BeltramiSample]) -> String {
    let mut out = String::from("x,y,u_y,mu_abs,level\n");
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            exact::to_fraction_string(&s.x),
            exact::to_fraction_string(&s.y),
            s.u_y,
            s.mu_abs,
            s.level
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{int, ratio};

    fn p(a: u32, b: u32, depth: usize) -> ConstructionParams {
        ConstructionParams::with_exponents(a, b, depth).unwrap()
    }

    #[test]
    fn f_eval_examples() {
        let q = p(2, 2, 3);
        assert_eq!(F_eval(&q, 3, &int(0), &ratio(1, 3)).unwrap(), (int(0), ratio(1, 3)));
        assert_eq!(F_eval(&q, 3, &int(1), &ratio(1, 2)).unwrap(), (int(2), ratio(1, 2)));
        assert_eq!(F_eval(&q, 2, &int(3), &ratio(1, 4)).unwrap().0, int(3) + ratio(1, 2));
    }

    #[test]
    fn monotone_on_lines() {
        let q = p(3, 2, 3);
        let xs: Vec<_> = (0..1000).map(|i| ratio(i, 1000)).collect();
        let r = monotonicity_check(&q, 3, &ratio(1, 3), &xs).unwrap();
        assert!(r.pass);
        assert!(r.min_gap_ratio.unwrap() >= int(1));
        let single = monotonicity_check(&q, 3, &ratio(1, 3), &[ratio(1, 2)]).unwrap();
        assert!(single.pass && single.min_gap_ratio.is_none());
        assert!(monotonicity_check(&q, 3, &ratio(1, 3), &[ratio(1, 2), ratio(1, 3)]).is_err());
    }

    #[test]
    fn beltrami_closed_form_examples() {
        let q = p(2, 2, 2);
        // Right of the square u = A₁, slope 2 below the middle.
        let s = beltrami(&q, 1, &ratio(3, 2), &ratio(1, 4)).unwrap();
        assert_eq!(s.u_y, 2.0);
        assert!((s.mu_abs - 2.0 / 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.u_x, 0.0);
        // Left of the square u vanishes.
        let s = beltrami(&q, 2, &ratio(-1, 2), &ratio(1, 4)).unwrap();
        assert_eq!(s.mu_abs, 0.0);
        assert!(beltrami(&q, 2, &ratio(1, 16), &ratio(1, 2)).is_err());
    }

    #[test]
    fn level_one_sup_is_tent_slope() {
        for (a, b) in [(2, 2), (3, 2), (2, 3)] {
            let k = beltrami_sup(&p(a, b, 2), 1, &SampleConfig::default()).unwrap();
            assert!((k.k - 2.0 / 8f64.sqrt()).abs() < 1e-12, "{k:?}");
        }
    }

    #[test]
    fn off_support_samples_have_zero_x_derivative() {
        let q = p(3, 2, 3);
        let cfg = SampleConfig { grid: 8, max_rects: 4, seed: 3 };
        for s in beltrami_samples(&q, 3, &cfg).unwrap() {
            assert_eq!(s.u_x, 0.0, "{s:?}");
            assert!(s.mu_abs < 1.0);
        }
    }
}
