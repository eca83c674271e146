//! Finite-level certification of the estimates behind the tower.
//!
//! Asymptotic `≲` statements are checked in their only assertable finite
//! form: the constant `measured / bound_form(n)` is computed level by level
//! and must stay within a fixed factor across the tested levels.

use std::collections::HashSet;
use std::fmt;
use std::ops::RangeInclusive;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::{self, ExactScalar};
use crate::tower::{
    self, level_geometry, tent, ConstructionParams, PathStep, Rect, RectAddress,
};

/// Default spread allowed between the largest and smallest implied constant.
pub const DEFAULT_STABILITY_FACTOR: f64 = 4.0;

/// Ratios inside this band give an inconclusive series verdict.
pub const DEAD_ZONE: (f64, f64) = (0.95, 1.05);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Converges,
    Diverges,
    Inconclusive,
}

impl Verdict {
    /// Ratio-test verdict with the dead zone.
    pub fn from_ratio(ratio: f64) -> Verdict {
        if !ratio.is_finite() {
            Verdict::Inconclusive
        } else if ratio < DEAD_ZONE.0 {
            Verdict::Converges
        } else if ratio > DEAD_ZONE.1 {
            Verdict::Diverges
        } else {
            Verdict::Inconclusive
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Converges => "converges",
            Verdict::Diverges => "diverges",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// One measured quantity against its bound at one level.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub level: usize,
    pub measured: f64,
    pub bound: f64,
    pub ratio: f64,
    pub pass: bool,
}

impl BoundReport {
    pub fn new(level: usize, measured: f64, bound: f64, tolerance: f64) -> Self {
        let ratio = measured / bound;
        BoundReport {
            level,
            measured,
            bound,
            ratio,
            pass: ratio <= 1.0 + tolerance,
        }
    }
}

/// Implied constants of a `≲` claim across levels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantStability {
    pub constants: Vec<(usize, f64)>,
    pub min: f64,
    pub max: f64,
    pub factor: f64,
    pub pass: bool,
}

impl ConstantStability {
    pub fn new(constants: Vec<(usize, f64)>, factor: f64) -> Self {
        let min = constants.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let max = constants.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let pass = !constants.is_empty() && min > 0.0 && max / min <= factor;
        ConstantStability {
            constants,
            min,
            max,
            factor,
            pass,
        }
    }

    pub fn spread(&self) -> f64 {
        self.max / self.min
    }

    /// Per-level bound reports with the bound pinned to `factor × min`
    /// constant, so every level passes exactly when the spread does.
    pub fn bound_reports(&self, forms: &[f64], tolerance: f64) -> Vec<BoundReport> {
        self.constants
            .iter()
            .zip(forms)
            .map(|(&(n, c), form)| {
                BoundReport::new(n, c * form, self.factor * self.min * form, tolerance)
            })
            .collect()
    }
}

/// Terms of a non-negative series with ratio diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesReport {
    pub terms: Vec<(i64, f64)>,
    pub partial_sums: Vec<f64>,
    pub successive_ratios: Vec<f64>,
    pub modeled_ratio: f64,
    pub verdict: Verdict,
}

impl SeriesReport {
    /// Builds partial sums and successive ratios; the verdict follows the
    /// supplied ratio through the dead zone.
    pub fn from_terms(terms: Vec<(i64, f64)>, modeled_ratio: f64) -> Self {
        let mut partial_sums = Vec::with_capacity(terms.len());
        let mut acc = 0.0;
        for (_, t) in &terms {
            acc += t;
            partial_sums.push(acc);
        }
        let successive_ratios = terms.windows(2).map(|w| w[1].1 / w[0].1).collect();
        SeriesReport {
            terms,
            partial_sums,
            successive_ratios,
            modeled_ratio,
            verdict: Verdict::from_ratio(modeled_ratio),
        }
    }
}

/// Controls for grid-based measurements. Identical configs give identical
/// samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleConfig {
    /// Points per axis inside each sampled rectangle.
    pub grid: usize,
    /// Rectangles per level; all of them when the level has no more.
    pub max_rects: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            grid: 32,
            max_rects: 16,
            seed: 0x5eed,
        }
    }
}

/// Address of the rectangle that stays centred on y = 1/2: at every level it
/// takes the first occupied column at offset N/2 − 1.
pub fn central_address(params: &ConstructionParams, level: usize) -> RectAddress {
    let position: BigInt = params.rows() / BigInt::from(2) - BigInt::one();
    let column: BigInt = &position * 2 + 1;
    RectAddress {
        path: (1..level)
            .map(|_| PathStep {
                column: column.clone(),
                position: position.clone(),
            })
            .collect(),
    }
}

/// Central rectangle plus seeded random ones, or every rectangle when the
/// level is small enough. Always deterministic for a given config.
pub fn sample_rects(
    params: &ConstructionParams,
    level: usize,
    cfg: &SampleConfig,
) -> Result<Vec<Rect>> {
    let count = num_traits::pow(params.occupied().clone(), level - 1);
    if count <= BigInt::from(cfg.max_rects.max(1)) {
        return tower::enumerate_level(params, level, cfg.max_rects.max(1) as u64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (level as u64).wrapping_mul(0x9e37_79b9));
    let mut out = vec![tower::address_rect(params, &central_address(params, level))?];
    let mut seen = HashSet::new();
    seen.insert(out[0].x0.clone());
    let mut attempts = 0;
    while out.len() < cfg.max_rects.max(1) && attempts < 20 * cfg.max_rects {
        attempts += 1;
        let mut rect = Rect::unit();
        for _ in 1..level {
            let k = BigInt::from(rng.gen::<u64>()) % params.occupied();
            let position = tower::column_position(params, &k)?;
            rect = rect.child(params, &(&k * 2 + 1), &position);
        }
        if seen.insert(rect.x0.clone()) {
            out.push(rect);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Mass conservation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct MassSample {
    pub y: ExactScalar,
    pub line_mass: ExactScalar,
    pub expected: ExactScalar,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MassReport {
    pub level: usize,
    pub samples: Vec<MassSample>,
}

impl MassReport {
    pub fn pass(&self) -> bool {
        self.samples.iter().all(|s| s.pass)
    }

    pub fn first_failure(&self) -> Option<&MassSample> {
        self.samples.iter().find(|s| !s.pass)
    }
}

/// Checks uₙ(1, y) = A₁(y) exactly for every sample (line mass preserved).
pub fn check_mass_conservation(
    params: &ConstructionParams,
    n: usize,
    ys: &[ExactScalar],
) -> Result<MassReport> {
    let one = exact::int(1);
    let samples = ys
        .iter()
        .map(|y| {
            let line_mass = tower::u_eval(params, n, &one, y)?;
            let expected = tent(y);
            Ok(MassSample {
                y: y.clone(),
                pass: line_mass == expected,
                line_mass,
                expected,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MassReport { level: n, samples })
}

// ---------------------------------------------------------------------------
// Density bounds
// ---------------------------------------------------------------------------

/// Sup of Aₙ and of |∂Aₙ/∂y| over Γₙ, with their implied constants
/// against 1/(Mⁿlₙ) and 1/(Mⁿlₙl̃ₙ).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMeasurement {
    pub level: usize,
    pub sup_density: ExactScalar,
    pub sup_slope: ExactScalar,
    pub density_constant: f64,
    pub slope_constant: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Dir {
    Up,
    Down,
}

/// Aₙ(y) and its one-sided y-derivative on the addressed rectangle.
fn density_jet(
    params: &ConstructionParams,
    addr: &RectAddress,
    y: &ExactScalar,
    dir: Dir,
) -> (ExactScalar, ExactScalar) {
    let half = exact::ratio(1, 2);
    let tent_slope = if *y < half || (*y == half && dir == Dir::Down) {
        exact::int(2)
    } else {
        exact::int(-2)
    };
    let mut factors = vec![(tent(y), tent_slope)];
    let gain = exact::from_big(params.gain().clone());
    let rows = exact::from_big(params.rows().clone());
    let top = exact::from_big(params.rows() - 1);
    let mut rect = Rect::unit();
    for step in &addr.path {
        let s = rect.normalise_y(y);
        let value = tower::phi_eval(params, &step.position, &s).unwrap_or_else(|_| ExactScalar::zero());
        let t = &s * &rows;
        let apex = exact::from_big(&step.position + 1);
        let one = exact::int(1);
        let up = dir == Dir::Up;
        let clamped = (t < one || (t == one && !up)) || (t > top || (t == top && up));
        let d = &t - &apex;
        let unit_slope = if clamped {
            ExactScalar::zero()
        } else if d.abs() > one || (d == one && up) || (d == -one.clone() && !up) {
            ExactScalar::zero()
        } else if d.is_zero() {
            if up {
                -one
            } else {
                one
            }
        } else if d.is_positive() {
            -one
        } else {
            one
        };
        let slope = unit_slope * &rows / &rect.height * &gain;
        factors.push((value * &gain, slope));
        rect = rect.child(params, &step.column, &step.position);
    }
    let value: ExactScalar = factors.iter().map(|f| f.0.clone()).product();
    let mut slope = ExactScalar::zero();
    for i in 0..factors.len() {
        let mut term = factors[i].1.clone();
        for (j, f) in factors.iter().enumerate() {
            if i != j {
                term *= &f.0;
            }
        }
        slope += term;
    }
    (value, slope)
}

/// Distinct offset paths at a level (rectangles sharing a path share their
/// density profile), capped.
fn position_paths(params: &ConstructionParams, level: usize, cap: usize) -> Vec<RectAddress> {
    let per = (params.rows() - BigInt::one()).to_usize().unwrap_or(usize::MAX);
    let mut paths = vec![RectAddress::default()];
    for _ in 1..level {
        let mut next = Vec::new();
        'outer: for base in &paths {
            for i in 0..per {
                if next.len() >= cap {
                    break 'outer;
                }
                let position = BigInt::from(i);
                let mut addr = base.clone();
                // The first `N − 1` occupied columns carry offsets 0..N−2 in order.
                addr.path.push(PathStep {
                    column: &position * 2 + 1,
                    position,
                });
                next.push(addr);
            }
        }
        paths = next;
    }
    if paths.len() >= cap {
        // Make sure the centred path is always present.
        paths.push(central_address(params, level));
    }
    paths
}

pub fn measure_density_bounds(
    params: &ConstructionParams,
    n: usize,
    subdivisions: usize,
) -> Result<DensityMeasurement> {
    let geom = level_geometry(params, n)?;
    let rows = exact::from_big(params.rows().clone());
    let sub = subdivisions.max(1) as i64;
    let paths = position_paths(params, n, 4096);
    let per_path: Vec<(ExactScalar, ExactScalar)> = paths
        .par_iter()
        .map(|addr| {
            let rect = tower::address_rect(params, addr).expect("path built from valid offsets");
            let cell = &rect.height / &rows;
            let nodes = params.rows().to_i64().unwrap_or(i64::MAX).min(1 << 12);
            let step = if nodes == params.rows().to_i64().unwrap_or(-1) {
                cell / exact::int(sub)
            } else {
                &rect.height / exact::int(nodes * sub)
            };
            let total = nodes * sub;
            let mut best_value = ExactScalar::zero();
            let mut best_slope = ExactScalar::zero();
            for m in 0..=total {
                let y = &rect.y0 + &step * exact::int(m);
                for dir in [Dir::Up, Dir::Down] {
                    if (m == 0 && dir == Dir::Down) || (m == total && dir == Dir::Up) {
                        continue;
                    }
                    let (v, s) = density_jet(params, addr, &y, dir);
                    if v > best_value {
                        best_value = v;
                    }
                    let s = s.abs();
                    if s > best_slope {
                        best_slope = s;
                    }
                }
            }
            (best_value, best_slope)
        })
        .collect();
    let sup_density = per_path.iter().map(|p| p.0.clone()).max().unwrap_or_default();
    let sup_slope = per_path.iter().map(|p| p.1.clone()).max().unwrap_or_default();
    let scale = exact::from_big(num_traits::pow(params.repeats().clone(), n)) * &geom.width;
    let density_constant = exact::to_f64(&(&sup_density * &scale));
    let slope_constant = exact::to_f64(&(&sup_slope * &scale * &geom.height));
    Ok(DensityMeasurement {
        level: n,
        sup_density,
        sup_slope,
        density_constant,
        slope_constant,
    })
}

/// Bound reports and stability for sup Aₙ (DefAn) and sup|∂Aₙ/∂y| (derAn).
pub fn density_bound_reports(
    params: &ConstructionParams,
    levels: RangeInclusive<usize>,
    factor: f64,
    tolerance: f64,
) -> Result<(Vec<DensityMeasurement>, ConstantStability, ConstantStability, Vec<BoundReport>, Vec<BoundReport>)> {
    let mut rows = Vec::new();
    let mut forms_a = Vec::new();
    let mut forms_d = Vec::new();
    for n in levels {
        let geom = level_geometry(params, n)?;
        let mn = exact::from_big(num_traits::pow(params.repeats().clone(), n));
        forms_a.push(exact::to_f64(&(exact::int(1) / (&mn * &geom.width))));
        forms_d.push(exact::to_f64(&(exact::int(1) / (&mn * &geom.width * &geom.height))));
        rows.push(measure_density_bounds(params, n, 4)?);
    }
    let sa = ConstantStability::new(rows.iter().map(|r| (r.level, r.density_constant)).collect(), factor);
    let sd = ConstantStability::new(rows.iter().map(|r| (r.level, r.slope_constant)).collect(), factor);
    let ra = sa.bound_reports(&forms_a, tolerance);
    let rd = sd.bound_reports(&forms_d, tolerance);
    Ok((rows, sa, sd, ra, rd))
}

// ---------------------------------------------------------------------------
// Cauchy bound |u_{n+1} − uₙ| ≲ 1/M^{n+1}
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct CauchyMeasurement {
    pub level: usize,
    pub sup_difference: f64,
    /// sup · M^{n+1}.
    pub constant: f64,
    pub points: usize,
}

pub fn measure_cauchy(
    params: &ConstructionParams,
    n: usize,
    cfg: &SampleConfig,
) -> Result<CauchyMeasurement> {
    if n + 1 > params.max_depth() {
        return Err(Error::Range(format!(
            "level {} needed but max depth is {}",
            n + 1,
            params.max_depth()
        )));
    }
    let rects = sample_rects(params, n, cfg)?;
    let g = cfg.grid.max(1) as i64;
    let points: Vec<(ExactScalar, ExactScalar)> = rects
        .iter()
        .flat_map(|r| {
            (0..g).flat_map(move |i| {
                (0..g).map(move |j| {
                    let x = &r.x0 + &r.width * exact::ratio(2 * i + 1, 2 * g);
                    let y = &r.y0 + &r.height * exact::ratio(2 * j + 1, 2 * g);
                    (x, y)
                })
            })
        })
        .collect();
    let sup = points
        .par_iter()
        .map(|(x, y)| {
            let d = tower::u_unchecked(params, n + 1, x, y) - tower::u_unchecked(params, n, x, y);
            exact::to_f64(&d.abs())
        })
        .reduce(|| 0.0, f64::max);
    let scale = exact::to_f64(&exact::from_big(num_traits::pow(params.repeats().clone(), n + 1)));
    Ok(CauchyMeasurement {
        level: n,
        sup_difference: sup,
        constant: sup * scale,
        points: points.len(),
    })
}

// ---------------------------------------------------------------------------
// bₙ = sup |∂uₙ/∂y| on Γ_{n−1} \ Γₙ and its recursion increment
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct BnMeasurement {
    pub level: usize,
    /// sup |∂uₙ/∂y| over the scanned gap points of Γ_{n−1} \ Γₙ.
    pub b: f64,
    /// sup |∂/∂y ∫_{x'}^{x} Aₙ(t, y) dt|, x' the left edge of the enclosing
    /// level-(n−1) rectangle.
    pub increment: f64,
    /// increment · M^{n−1} · l̃ₙ.
    pub increment_constant: f64,
    /// Horizontal lines scanned.
    pub pairs: usize,
}

/// Gap sample points at level n: x positions inside the level-(n−1)
/// rectangle that lie off Γₙ, the rectangle's left edge, and a y ladder.
#[derive(Clone, Debug)]
pub struct GapSample {
    pub rect: Rect,
    pub xs: Vec<ExactScalar>,
    pub ys: Vec<ExactScalar>,
}

/// Points of Γ_{n−1} \ Γₙ used for y-derivatives. Level 1 uses the right
/// edge x = 1 of the unit square, where u₁ = A₁.
pub fn gap_samples(params: &ConstructionParams, n: usize, cfg: &SampleConfig) -> Result<Vec<GapSample>> {
    if n == 0 || n > params.max_depth() {
        return Err(Error::Range(format!("level {n} outside 1..={}", params.max_depth())));
    }
    let g = cfg.grid.max(2) as i64;
    if n == 1 {
        let g = g + (g % 2);
        return Ok(vec![GapSample {
            rect: Rect::unit(),
            xs: vec![exact::int(1)],
            ys: (0..=g).map(|m| exact::ratio(m, g)).collect(),
        }]);
    }
    let rects = sample_rects(params, n - 1, cfg)?;
    let cols = params.columns().to_i64().unwrap_or(i64::MAX);
    let gaps = (cols / 2).min(cfg.grid.max(1) as i64);
    let rows = params.rows().to_i64().unwrap_or(i64::MAX);
    // Align the y ladder with the child rows when there are few of them.
    let ladder = if rows.saturating_mul(4) <= 4 * g { rows * 4 } else { g };
    Ok(rects
        .into_iter()
        .map(|rect| {
            let col_w = &rect.width / exact::from_big(params.columns().clone());
            let xs = (0..gaps)
                .map(|q| {
                    // Spread the chosen even columns evenly across the parent.
                    let j = 2 * ((q * (cols / 2)) / gaps);
                    &rect.x0 + &col_w * exact::ratio(2 * j + 1, 2)
                })
                .collect();
            let ys = (0..=ladder)
                .map(|m| &rect.y0 + &rect.height * exact::ratio(m, ladder))
                .collect();
            GapSample { rect, xs, ys }
        })
        .collect())
}

/// Largest y-slope of uₙ at level-n gaps on one horizontal line, found by a
/// prefix sum over the line's rectangles: uₙ(x, y) is the sum of width·Aₙ(y)
/// over the rectangles left of x.
#[derive(Clone, Debug, PartialEq)]
pub struct LineScan {
    pub level: usize,
    pub b: f64,
    pub increment: f64,
    /// Gap point where `b` is attained.
    pub argmax: (ExactScalar, ExactScalar),
    pub lines: usize,
}

/// Cap on the number of horizontal lines scanned per level.
pub const LINE_CAP: usize = 6144;

fn scan_line(
    params: &ConstructionParams,
    n: usize,
    y: &ExactScalar,
    h: &ExactScalar,
) -> Result<Option<(f64, f64, ExactScalar)>> {
    let up = tower::enumerate_line(params, n, &(y + h), tower::DEFAULT_RECT_CAP)?;
    let down = tower::enumerate_line(params, n, &(y - h), tower::DEFAULT_RECT_CAP)?;
    if up.len() != down.len() || up.iter().zip(&down).any(|(a, b)| a.0.x0 != b.0.x0) {
        return Ok(None);
    }
    let g = level_geometry(params, n)?;
    let parent_w = level_geometry(params, n - 1)?.width;
    let half_col = &g.width / exact::int(2);
    let two_h = h * exact::int(2);
    let mut prefix = 0.0f64;
    let mut base = 0.0f64;
    let mut parent: Option<BigInt> = None;
    let mut best = (0.0f64, 0.0f64, ExactScalar::zero());
    for ((rect, d_up), (_, d_down)) in up.iter().zip(&down) {
        let idx = exact::floor_int(&(&rect.x0 / &parent_w));
        if parent.as_ref() != Some(&idx) {
            // Column 0 of the new parent is empty: the prefix so far is the
            // slope there, with zero increment.
            base = prefix;
            let x = exact::from_big(idx.clone()) * &parent_w + &half_col;
            if base.abs() > best.0 {
                best = (base.abs(), best.1, x);
            }
            parent = Some(idx.clone());
        }
        prefix += exact::to_f64(&(&rect.width * (d_up - d_down) / &two_h));
        let parent_x1 = exact::from_big(idx + 1) * &parent_w;
        if rect.x1() < parent_x1 {
            if prefix.abs() > best.0 {
                best = (prefix.abs(), best.1, rect.x1() + &half_col);
            }
            best.1 = best.1.max((prefix - base).abs());
        }
    }
    Ok(Some(best))
}

/// Exact-line search for bₙ: every horizontal line of a ladder with three
/// points per breakpoint cell of Aₙ (both ends and the middle), y-slopes by
/// symmetric quotients with a step far below the cell size.
pub fn scan_bn(params: &ConstructionParams, n: usize) -> Result<LineScan> {
    if n == 0 || n > params.max_depth() {
        return Err(Error::Range(format!("level {n} outside 1..={}", params.max_depth())));
    }
    if n == 1 {
        return Ok(LineScan {
            level: 1,
            b: 2.0,
            increment: 2.0,
            argmax: (exact::int(1), exact::ratio(1, 4)),
            lines: 1,
        });
    }
    let g = level_geometry(params, n)?;
    let cell = &g.height / exact::int(2);
    let cells = exact::floor_int(&(exact::int(1) / &cell))
        .to_usize()
        .ok_or_else(|| Error::CapExceeded { needed: "breakpoint cells".into(), cap: LINE_CAP as u64 })?;
    let stride = (3 * cells).div_ceil(LINE_CAP).max(1);
    let h = &cell * exact::ratio(1, 1 << 20);
    let offsets = [exact::ratio(1, 1024), exact::ratio(1, 2), exact::ratio(1023, 1024)];
    let ys: Vec<ExactScalar> = (0..cells)
        .step_by(stride)
        .flat_map(|c| {
            let c0 = &cell * exact::int(c as i64);
            offsets.iter().map(|o| &c0 + &cell * o).collect::<Vec<_>>()
        })
        .collect();
    let rows: Vec<Option<(f64, f64, ExactScalar, ExactScalar)>> = ys
        .par_iter()
        .map(|y| Ok(scan_line(params, n, y, &h)?.map(|(b, inc, x)| (b, inc, x, y.clone()))))
        .collect::<Result<_>>()?;
    let mut out = LineScan {
        level: n,
        b: 0.0,
        increment: 0.0,
        argmax: (ExactScalar::zero(), ExactScalar::zero()),
        lines: 0,
    };
    for (b, inc, x, y) in rows.into_iter().flatten() {
        out.lines += 1;
        if b > out.b {
            out.b = b;
            out.argmax = (x, y);
        }
        out.increment = out.increment.max(inc);
    }
    Ok(out)
}

pub fn measure_bn(params: &ConstructionParams, n: usize) -> Result<BnMeasurement> {
    let scan = scan_bn(params, n)?;
    let geom = level_geometry(params, n)?;
    let form_inv = exact::from_big(num_traits::pow(params.repeats().clone(), n - 1)) * &geom.height;
    Ok(BnMeasurement {
        level: n,
        b: scan.b,
        increment: scan.increment,
        increment_constant: scan.increment * exact::to_f64(&form_inv),
        pairs: scan.lines,
    })
}

/// Closed-form growth model for bₙ: (N/M)ⁿ when N > M, otherwise N.
pub fn bn_model(params: &ConstructionParams, n: usize) -> f64 {
    let m = exact::to_f64(&exact::from_big(params.repeats().clone()));
    let rows = exact::to_f64(&exact::from_big(params.rows().clone()));
    if rows > m {
        (rows / m).powi(n as i32)
    } else {
        rows
    }
}

// ---------------------------------------------------------------------------
// Gradient Lᵖ series
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeriesMode {
    Modeled,
    Measured,
}

/// Series report plus the exact modelled ratio 2N^{p−1}/Mᵖ when it is
/// rational (always for integer p).
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSeries {
    pub report: SeriesReport,
    /// log₂ of the modelled ratio, exact: 1 − b + p(b − a).
    pub log2_ratio: ExactScalar,
    pub exact_ratio: Option<ExactScalar>,
    pub exact_terms: Option<Vec<ExactScalar>>,
}

/// Modelled terms use the closed forms area(Γₙ) = MⁿNⁿ·(NM)^{−n}·(2/N)ⁿ and
/// bₙ = (N/M)ⁿ, so every term is (2N^{p−1}/Mᵖ)ⁿ. Measured mode keeps the
/// area model and substitutes scanned values of bₙ.
pub fn gradient_lp_series(
    params: &ConstructionParams,
    p: &ExactScalar,
    n_max: usize,
    mode: SeriesMode,
) -> Result<GradientSeries> {
    if n_max == 0 {
        return Err(Error::Range("series needs at least one level".into()));
    }
    let a = exact::int(params.a() as i64);
    let b = exact::int(params.b() as i64);
    let log2_ratio = exact::int(1) - &b + p * (&b - &a);
    let exact_ratio = if log2_ratio.is_integer() {
        let e = log2_ratio.to_integer();
        let pow = exact::pow2(e.abs().to_u32().unwrap_or(u32::MAX));
        Some(if e.is_negative() {
            ExactScalar::new(BigInt::one(), pow)
        } else {
            exact::from_big(pow)
        })
    } else {
        None
    };
    let two = exact::int(2);
    let rows = exact::from_big(params.rows().clone());
    let repeats = exact::from_big(params.repeats().clone());
    let area = |n: usize| exact::pow(&(&two / &rows), n as u32);
    match mode {
        SeriesMode::Modeled => {
            let exact_terms = if p.is_integer() {
                let pe = p.to_integer().to_u32().unwrap_or(u32::MAX);
                Some(
                    (1..=n_max)
                        .map(|n| {
                            let mn = exact::pow(&(&repeats * &rows), n as u32);
                            let width = exact::int(1) / &mn;
                            let bn = exact::pow(&(&rows / &repeats), n as u32);
                            mn * width * area(n) * exact::pow(&bn, pe * 1)
                        })
                        .collect::<Vec<_>>(),
                )
            } else {
                None
            };
            let lr = exact::to_f64(&log2_ratio);
            let terms = (1..=n_max)
                .map(|n| (n as i64, (lr * n as f64).exp2()))
                .collect();
            Ok(GradientSeries {
                report: SeriesReport::from_terms(terms, lr.exp2()),
                log2_ratio,
                exact_ratio,
                exact_terms,
            })
        }
        SeriesMode::Measured => {
            if n_max > params.max_depth() {
                return Err(Error::Range(format!(
                    "measured series to level {n_max} beyond max depth {}",
                    params.max_depth()
                )));
            }
            let pf = exact::to_f64(p);
            let terms: Vec<(i64, f64)> = (1..=n_max)
                .map(|n| {
                    let bn = measure_bn(params, n)?;
                    Ok((n as i64, exact::to_f64(&area(n)) * bn.b.powf(pf)))
                })
                .collect::<Result<_>>()?;
            let last = if terms.len() >= 2 {
                terms[terms.len() - 1].1 / terms[terms.len() - 2].1
            } else {
                f64::NAN
            };
            Ok(GradientSeries {
                report: SeriesReport::from_terms(terms, last),
                log2_ratio,
                exact_ratio,
                exact_terms: None,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// condition2
// ---------------------------------------------------------------------------

/// l̃ₙ ≤ M^α (lₙ/M)^α = lₙ^α, checked exactly as l̃ₙ^q ≤ lₙ^r for α = r/q.
/// The constant M^α is the one fixed by l₁ = l̃₁ = 1.
pub fn check_condition2(params: &ConstructionParams, alpha: &ExactScalar, n_max: usize) -> Result<Vec<(usize, bool)>> {
    let r = alpha.numer().to_u32().ok_or_else(|| Error::Domain("alpha numerator too large".into()))?;
    let q = alpha.denom().to_u32().ok_or_else(|| Error::Domain("alpha denominator too large".into()))?;
    (1..=n_max)
        .map(|n| {
            let g = level_geometry(params, n)?;
            Ok((n, exact::pow(&g.height, q) <= exact::pow(&g.width, r)))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Hölder exponent
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct HolderEstimate {
    /// Envelope slope; `None` when every increment is zero.
    pub alpha_hat: Option<f64>,
    pub c_hat: f64,
    /// Per dyadic scale: (Δx, max |Δf|).
    pub envelope: Vec<(f64, f64)>,
    pub pairs: usize,
}

impl HolderEstimate {
    pub fn is_degenerate(&self) -> bool {
        self.alpha_hat.is_none()
    }
}

/// Least-squares slope of log y against log x.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Upper-envelope Hölder fit from `(Δx, |Δf|)` pairs: per dyadic scale keep
/// the largest increment, regress log max|Δf| on log Δx.
pub fn holder_from_pairs(pairs: &[(f64, f64)]) -> Result<HolderEstimate> {
    if pairs.len() < 100 {
        return Err(Error::InsufficientSamples(format!(
            "need at least 100 pairs, got {}",
            pairs.len()
        )));
    }
    let min_dx = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_dx = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    if !(min_dx > 0.0) || min_dx == max_dx {
        return Err(Error::Degenerate("all increments share one Δx".into()));
    }
    if max_dx / min_dx < 1000.0 {
        return Err(Error::InsufficientSamples(format!(
            "scales span {:.3} decades, need 3",
            (max_dx / min_dx).log10()
        )));
    }
    let mut bins: Vec<(i64, f64, f64)> = Vec::new();
    for &(dx, df) in pairs {
        let key = dx.log2().round() as i64;
        match bins.iter_mut().find(|b| b.0 == key) {
            Some(b) => b.2 = b.2.max(df.abs()),
            None => bins.push((key, dx, df.abs())),
        }
    }
    bins.sort_by_key(|b| std::cmp::Reverse(b.0));
    let envelope: Vec<(f64, f64)> = bins.iter().map(|b| (b.1, b.2)).collect();
    if envelope.iter().all(|e| e.1 == 0.0) {
        return Ok(HolderEstimate {
            alpha_hat: None,
            c_hat: 0.0,
            envelope,
            pairs: pairs.len(),
        });
    }
    let alpha_hat = log_log_slope(&envelope);
    let c_hat = match alpha_hat {
        Some(a) => pairs
            .iter()
            .filter(|p| p.1 != 0.0)
            .map(|&(dx, df)| df.abs() / dx.powf(a))
            .fold(0.0, f64::max),
        None => 0.0,
    };
    Ok(HolderEstimate {
        alpha_hat,
        c_hat,
        envelope,
        pairs: pairs.len(),
    })
}

/// Hölder fit of the level-n approximant, sampled exactly at dyadic scales
/// 2^{−1} … 2^{−K} with 2^{−K} ≥ lₙ, `per_scale` seeded pairs each.
pub fn holder_exponent_for_tower(
    params: &ConstructionParams,
    n: usize,
    per_scale: usize,
    seed: u64,
) -> Result<HolderEstimate> {
    let geom = level_geometry(params, n)?;
    let finest = if n == 1 {
        12
    } else {
        // floor(log2(1/lₙ)) from the bit lengths, adjusted exactly.
        let inv = exact::int(1) / &geom.width;
        let mut k = exact::floor_int(&inv).bits().saturating_sub(1) as u32;
        while exact::from_big(exact::pow2(k + 1)) <= inv {
            k += 1;
        }
        k.max(10)
    };
    let resolution = finest + 16;
    let denom = exact::pow2(resolution);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    for k in 1..=finest {
        let span = exact::pow2(resolution) - exact::pow2(resolution - k);
        for _ in 0..per_scale {
            let r = random_below(&mut rng, &span);
            jobs.push((k, ExactScalar::new(r, denom.clone())));
        }
    }
    let pairs: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|(k, x)| {
            let dx = ExactScalar::new(BigInt::one(), exact::pow2(*k));
            let f0 = tower::graph_value(params, n, x)?;
            let f1 = tower::graph_value(params, n, &(x + &dx))?;
            Ok((exact::to_f64(&dx), exact::to_f64(&(f1 - f0).abs())))
        })
        .collect::<Result<_>>()?;
    holder_from_pairs(&pairs)
}

fn random_below(rng: &mut ChaCha8Rng, bound: &BigInt) -> BigInt {
    let bits = bound.bits();
    loop {
        let mut v = BigInt::zero();
        let mut got = 0;
        while got < bits {
            v = (v << 32) + BigInt::from(rng.gen::<u32>());
            got += 32;
        }
        v >>= (got - bits) as usize;
        if v < *bound {
            return v;
        }
    }
}

// ---------------------------------------------------------------------------
// Box counting
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct BoxDimension {
    pub estimate: f64,
    /// (depth, occupied boxes of side 2^{−depth}).
    pub counts: Vec<(u32, u64)>,
    /// 2 − alpha_hat when supplied.
    pub reference: Option<f64>,
}

/// Dyadic cells of side `1/scale` crossed by the segment.
fn mark_segment(p0: (f64, f64), p1: (f64, f64), scale: f64, out: &mut HashSet<(i64, i64)>) {
    let (x0, y0) = (p0.0 * scale, p0.1 * scale);
    let (x1, y1) = (p1.0 * scale, p1.1 * scale);
    let (mut cx, mut cy) = (x0.floor() as i64, y0.floor() as i64);
    let (ex, ey) = (x1.floor() as i64, y1.floor() as i64);
    out.insert((cx, cy));
    let (dx, dy) = (x1 - x0, y1 - y0);
    let step_x = if dx > 0.0 { 1 } else { -1 };
    let step_y = if dy > 0.0 { 1 } else { -1 };
    let mut t_max_x = if dx > 0.0 {
        ((cx + 1) as f64 - x0) / dx
    } else if dx < 0.0 {
        (cx as f64 - x0) / dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        ((cy + 1) as f64 - y0) / dy
    } else if dy < 0.0 {
        (cy as f64 - y0) / dy
    } else {
        f64::INFINITY
    };
    let t_dx = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_dy = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    let (mut left_x, mut left_y) = ((ex - cx).abs(), (ey - cy).abs());
    while left_x + left_y > 0 {
        if (t_max_x < t_max_y && left_x > 0) || left_y == 0 {
            cx += step_x;
            t_max_x += t_dx;
            left_x -= 1;
        } else {
            cy += step_y;
            t_max_y += t_dy;
            left_y -= 1;
        }
        out.insert((cx, cy));
    }
}

pub fn box_counts(polyline: &[(f64, f64)], depth: u32) -> u64 {
    let scale = (depth as f64).exp2();
    let mut cells = HashSet::new();
    for w in polyline.windows(2) {
        mark_segment(w[0], w[1], scale, &mut cells);
    }
    if polyline.len() == 1 {
        let p = polyline[0];
        cells.insert(((p.0 * scale).floor() as i64, (p.1 * scale).floor() as i64));
    }
    cells.len() as u64
}

/// Slope of log(occupied boxes) against log(1/side) over `depths`.
pub fn box_dimension(
    polyline: &[(f64, f64)],
    depths: RangeInclusive<u32>,
    alpha_hat: Option<f64>,
) -> Result<BoxDimension> {
    let (lo, hi) = (*depths.start(), *depths.end());
    if hi <= lo {
        return Err(Error::Domain("depth range needs at least two depths".into()));
    }
    let segments = polyline.len().saturating_sub(1) as f64;
    if segments < (hi as f64).exp2() {
        return Err(Error::Resolution(format!(
            "{segments} segments cannot resolve depth {hi}"
        )));
    }
    let counts: Vec<(u32, u64)> = depths
        .clone()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&d| (d, box_counts(polyline, d)))
        .collect();
    let pts: Vec<(f64, f64)> = counts
        .iter()
        .map(|&(d, c)| ((d as f64).exp2(), c as f64))
        .collect();
    let estimate = log_log_slope(&pts).ok_or_else(|| Error::Degenerate("no box counts".into()))?;
    Ok(BoxDimension {
        estimate,
        counts,
        reference: alpha_hat.map(|a| 2.0 - a),
    })
}

/// Straight segment from (0, y0) to (1, y1) cut into `2^depth` pieces.
pub fn straight_line(y0: f64, y1: f64, depth: u32) -> Vec<(f64, f64)> {
    let n = 1usize << depth;
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            (t, y0 + (y1 - y0) * t)
        })
        .collect()
}

/// Boustrophedon path through every cell centre of the 2^depth grid on
/// [0,1]²: an area-filling control curve.
pub fn staircase_curve(depth: u32) -> Vec<(f64, f64)> {
    let n = 1usize << depth;
    let h = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        let y = (row as f64 + 0.5) * h;
        for c in 0..n {
            let col = if row % 2 == 0 { c } else { n - 1 - c };
            out.push(((col as f64 + 0.5) * h, y));
        }
    }
    out
}

/// Level-n approximant as an `f64` polyline.
pub fn tower_polyline(params: &ConstructionParams, n: usize, cap: u64) -> Result<Vec<(f64, f64)>> {
    Ok(tower::graph_polyline(params, n, cap)?
        .iter()
        .map(|(x, y)| (exact::to_f64(x), exact::to_f64(y)))
        .collect())
}
