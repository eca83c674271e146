//! Exact construction of the nested rectangle tower Γₙ together with the
//! densities Aₙ and potentials uₙ(x, y) = ∫₀ˣ Aₙ(t, y) dt.
//!
//! Every level-n black rectangle is refined by cutting its x side into
//! 2(N−1)M mesh columns and its y side into N rows. Only odd mesh columns are
//! occupied; the k-th occupied column holds one rectangle two rows tall at
//! row offset [`column_position`]`(k)`, following a triangle wave that visits
//! each of the N−1 offsets exactly M times. Densities follow the
//! mass-preserving rule A_{n+1} l_{n+1} M = φᵢ(y) Aₙ lₙ with the
//! piecewise-linear partition of unity [`phi_eval`].
//!
//! Point evaluation walks a single root-to-leaf path, so its cost is linear in
//! the level and independent of the number of rectangles. The brute-force
//! routines materialise rectangles explicitly and are used as oracles.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::exact::{self, ExactScalar};

/// Default cap on materialised rectangles for the brute-force paths.
pub const DEFAULT_RECT_CAP: u64 = 1_000_000;

/// Default maximum level used when parameters come out of the solver.
pub const DEFAULT_MAX_DEPTH: usize = 4;

/// Knobs of the construction. `M = 2^a` is the number of times each row
/// offset repeats inside a parent, `N = 2^b` the number of rows a parent is
/// cut into.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstructionParams {
    a: u32,
    b: u32,
    p: ExactScalar,
    alpha_target: ExactScalar,
    max_depth: usize,
    repeats: BigInt,
    rows: BigInt,
    columns: BigInt,
    occupied: BigInt,
    period: BigInt,
}

impl ConstructionParams {
    pub fn new(
        a: u32,
        b: u32,
        p: ExactScalar,
        alpha_target: ExactScalar,
        max_depth: usize,
    ) -> Result<Self> {
        if a < 2 || b < 2 {
            return Err(Error::Domain(format!(
                "a and b must be at least 2 so that M, N >= 4 (got a={a}, b={b})"
            )));
        }
        if p <= exact::int(1) {
            return Err(Error::Domain(format!("p must exceed 1, got {p}")));
        }
        if alpha_target <= ExactScalar::zero() || alpha_target >= exact::int(1) {
            return Err(Error::Domain(format!(
                "alpha_target must lie in (0,1), got {alpha_target}"
            )));
        }
        if max_depth == 0 {
            return Err(Error::Domain("max_depth must be positive".into()));
        }
        let repeats = exact::pow2(a);
        let rows = exact::pow2(b);
        let period = (&rows - 1) * 2;
        let occupied = (&rows - 1) * &repeats;
        let columns = &occupied * 2;
        Ok(Self {
            a,
            b,
            p,
            alpha_target,
            max_depth,
            repeats,
            rows,
            columns,
            occupied,
            period,
        })
    }

    /// Parameters with `p = 2` and the largest exponent the pair supports,
    /// `(b − 1)/(1 + a + b)`.
    pub fn with_exponents(a: u32, b: u32, max_depth: usize) -> Result<Self> {
        let alpha = exact::ratio(b as i64 - 1, 1 + a as i64 + b as i64);
        Self::new(a, b, exact::int(2), alpha, max_depth)
    }

    pub fn with_max_depth(mut self, max_depth: usize) -> Result<Self> {
        if max_depth == 0 {
            return Err(Error::Domain("max_depth must be positive".into()));
        }
        self.max_depth = max_depth;
        Ok(self)
    }

    pub fn a(&self) -> u32 {
        self.a
    }

    pub fn b(&self) -> u32 {
        self.b
    }

    /// M = 2^a.
    pub fn repeats(&self) -> &BigInt {
        &self.repeats
    }

    /// N = 2^b.
    pub fn rows(&self) -> &BigInt {
        &self.rows
    }

    pub fn p(&self) -> &ExactScalar {
        &self.p
    }

    pub fn alpha_target(&self) -> &ExactScalar {
        &self.alpha_target
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Mesh columns per parent, 2(N−1)M.
    pub fn columns(&self) -> &BigInt {
        &self.columns
    }

    /// Occupied columns per parent, (N−1)M.
    pub fn occupied(&self) -> &BigInt {
        &self.occupied
    }

    /// Density gain per level, lₙ/(l_{n+1}M) = 2(N−1). Also the wave period.
    pub fn gain(&self) -> &BigInt {
        &self.period
    }

    fn check_level(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.max_depth {
            return Err(Error::Range(format!(
                "level {n} outside 1..={}",
                self.max_depth
            )));
        }
        Ok(())
    }

    fn rows_q(&self) -> ExactScalar {
        exact::from_big(self.rows.clone())
    }
}

/// Lexicographically smallest `(a, b)` in `[2, bound]²` with
/// `b(p−1) + 1 < ap` (condition1 in exponent form) and
/// `α(1 + a + b) ≤ b − 1` (condition2 in exponent form), checked exactly.
pub fn solve_parameters(
    alpha: &ExactScalar,
    p: &ExactScalar,
    search_bound: u32,
) -> Result<ConstructionParams> {
    let one = exact::int(1);
    if *alpha <= ExactScalar::zero() || *alpha >= one {
        return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if *p <= one {
        return Err(Error::Domain(format!("p must exceed 1, got {p}")));
    }
    if search_bound < 4 {
        return Err(Error::Domain(format!(
            "search bound must be at least 4, got {search_bound}"
        )));
    }
    for a in 2..=search_bound {
        let ap = exact::int(a as i64) * p;
        for b in 2..=search_bound {
            let bq = exact::int(b as i64);
            if !(&bq * (p - &one) + &one < ap) {
                // The left side grows with b, so no larger b can work either.
                break;
            }
            if alpha * exact::int(1 + a as i64 + b as i64) <= &bq - &one {
                return ConstructionParams::new(a, b, p.clone(), alpha.clone(), DEFAULT_MAX_DEPTH);
            }
        }
    }
    Err(Error::Infeasible {
        bound: search_bound,
    })
}

/// Exact sizes of the level-n rectangles.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelGeometry {
    pub n: usize,
    /// x side lₙ.
    pub width: ExactScalar,
    /// y side l̃ₙ.
    pub height: ExactScalar,
    pub rect_count: BigInt,
    pub columns_per_parent: BigInt,
    pub occupied_per_parent: BigInt,
}

pub fn level_geometry(params: &ConstructionParams, n: usize) -> Result<LevelGeometry> {
    params.check_level(n)?;
    let mut width = exact::int(1);
    let mut height = exact::int(1);
    let col = exact::from_big(params.columns.clone());
    let rows = params.rows_q();
    for _ in 1..n {
        width = width / &col;
        height = height * exact::int(2) / &rows;
    }
    Ok(LevelGeometry {
        n,
        width,
        height,
        rect_count: num_traits::pow(params.occupied.clone(), n - 1),
        columns_per_parent: params.columns.clone(),
        occupied_per_parent: params.occupied.clone(),
    })
}

/// Row offset of the k-th occupied column: a triangle wave of period
/// 2(N−1) that repeats each end value twice (0,1,…,N−2,N−2,…,1,0,0,1,…).
pub fn column_position(params: &ConstructionParams, k: &BigInt) -> Result<BigInt> {
    if k.is_negative() || *k >= params.occupied {
        return Err(Error::Range(format!(
            "occupied column {k} outside [0, {})",
            params.occupied
        )));
    }
    Ok(wave(params, k))
}

fn wave(params: &ConstructionParams, k: &BigInt) -> BigInt {
    let m = k.mod_floor(&params.period);
    let top = &params.rows - 2;
    if m <= top {
        m
    } else {
        &params.period - 1 - m
    }
}

/// Number of `k' < complete` with `column_position(k') == position`.
fn position_count(params: &ConstructionParams, complete: &BigInt, position: &BigInt) -> BigInt {
    let (q, r) = complete.div_mod_floor(&params.period);
    let mut count = q * 2;
    if *position < r {
        count += 1;
    }
    let mirror = &params.period - 1 - position;
    if mirror < r {
        count += 1;
    }
    count
}

/// Partition of unity on the parent-normalised coordinate `s ∈ [0,1]`.
///
/// φᵢ is the hat with apex at (i+1)/N and half-width 1/N, except that φ₀ is
/// flat on [0, 1/N] and φ_{N−2} is flat on [(N−1)/N, 1]. Equivalently
/// φᵢ(s) = max(0, 1 − |t − (i+1)|) with t = clamp(sN, 1, N−1).
pub fn phi_eval(params: &ConstructionParams, i: &BigInt, s: &ExactScalar) -> Result<ExactScalar> {
    let top = &params.rows - 2;
    if i.is_negative() || *i > top {
        return Err(Error::Range(format!("position {i} outside [0, {top}]")));
    }
    if s.is_negative() || *s > exact::int(1) {
        return Err(Error::Domain(format!("normalised coordinate {s} outside [0,1]")));
    }
    Ok(phi(params, i, s))
}

fn clamped_node(params: &ConstructionParams, s: &ExactScalar) -> ExactScalar {
    let t = s * params.rows_q();
    let lo = exact::int(1);
    let hi = exact::from_big(&params.rows - 1);
    if t < lo {
        lo
    } else if t > hi {
        hi
    } else {
        t
    }
}

fn phi(params: &ConstructionParams, i: &BigInt, s: &ExactScalar) -> ExactScalar {
    let t = clamped_node(params, s);
    let d = (t - exact::from_big(i + 1)).abs();
    let v = exact::int(1) - d;
    if v.is_positive() {
        v
    } else {
        ExactScalar::zero()
    }
}

/// Positions whose φ is non-zero at `s`, with their weights (at most two).
pub fn active_positions(params: &ConstructionParams, s: &ExactScalar) -> Vec<(BigInt, ExactScalar)> {
    let t = clamped_node(params, s);
    let node = exact::floor_int(&t);
    let frac = &t - exact::from_big(node.clone());
    let mut out = Vec::with_capacity(2);
    let lower = &node - 1;
    let w_lower = exact::int(1) - &frac;
    if w_lower.is_positive() {
        out.push((lower, w_lower));
    }
    if frac.is_positive() && node <= &params.rows - 2 {
        out.push((node, frac));
    }
    out
}

/// Level-one profile A₁(y) = 1 − |2y − 1|.
pub fn tent(y: &ExactScalar) -> ExactScalar {
    exact::int(1) - (y * exact::int(2) - exact::int(1)).abs()
}

/// One step of a rectangle address.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathStep {
    /// Mesh column inside the parent, always odd.
    pub column: BigInt,
    /// Row offset of the rectangle, equal to `column_position((column−1)/2)`.
    pub position: BigInt,
}

/// Path from the unit square to one level-n black rectangle.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RectAddress {
    pub path: Vec<PathStep>,
}

impl RectAddress {
    pub fn level(&self) -> usize {
        self.path.len() + 1
    }
}

/// Axis-aligned rectangle with exact corners.
#[derive(Clone, Debug, PartialEq)]
pub struct Rect {
    pub level: usize,
    pub x0: ExactScalar,
    pub y0: ExactScalar,
    pub width: ExactScalar,
    pub height: ExactScalar,
    /// Whether the bottom edge belongs to the rectangle. Sibling y-intervals
    /// overlap, so they are taken lower-open except for offset zero; this
    /// keeps every y in the parent covered and never double-claims an edge
    /// where a density is non-zero.
    pub closed_bottom: bool,
}

impl Rect {
    pub fn unit() -> Self {
        Rect {
            level: 1,
            x0: ExactScalar::zero(),
            y0: ExactScalar::zero(),
            width: exact::int(1),
            height: exact::int(1),
            closed_bottom: true,
        }
    }

    pub fn x1(&self) -> ExactScalar {
        &self.x0 + &self.width
    }

    pub fn y1(&self) -> ExactScalar {
        &self.y0 + &self.height
    }

    pub fn contains_y(&self, y: &ExactScalar) -> bool {
        let above = if self.closed_bottom {
            *y >= self.y0
        } else {
            *y > self.y0
        };
        above && *y <= self.y1()
    }

    /// Whether `x` projects into the rectangle (left-closed, right-open, with
    /// the unit square also owning x = 1).
    pub fn contains_x(&self, x: &ExactScalar) -> bool {
        *x >= self.x0 && (*x < self.x1() || (self.level == 1 && *x == self.x1()))
    }

    /// Parent-normalised coordinate of `y`.
    pub fn normalise_y(&self, y: &ExactScalar) -> ExactScalar {
        (y - &self.y0) / &self.height
    }

    pub fn child(&self, params: &ConstructionParams, column: &BigInt, position: &BigInt) -> Rect {
        let cols = exact::from_big(params.columns.clone());
        let rows = params.rows_q();
        let width = &self.width / &cols;
        let row = &self.height / &rows;
        Rect {
            level: self.level + 1,
            x0: &self.x0 + &width * exact::from_big(column.clone()),
            y0: &self.y0 + &row * exact::from_big(position.clone()),
            width,
            height: row * exact::int(2),
            closed_bottom: position.is_zero(),
        }
    }

    /// Mesh column of `x` inside this rectangle; may equal `columns` only at
    /// the right edge of the unit square.
    fn column_of(&self, params: &ConstructionParams, x: &ExactScalar) -> BigInt {
        let xi = (x - &self.x0) / &self.width * exact::from_big(params.columns.clone());
        exact::floor_int(&xi)
    }

    fn occupied_child(&self, params: &ConstructionParams, column: &BigInt) -> Option<(BigInt, Rect)> {
        if column.is_even() || column.is_negative() || *column >= params.columns {
            return None;
        }
        let position = wave(params, &((column - 1) / 2));
        let child = self.child(params, column, &position);
        Some((position, child))
    }
}

fn check_unit(x: &ExactScalar, y: &ExactScalar) -> Result<()> {
    let one = exact::int(1);
    if x.is_negative() || *x > one || y.is_negative() || *y > one {
        return Err(Error::Domain(format!("point ({x}, {y}) outside the unit square")));
    }
    Ok(())
}

/// Level-n black rectangle containing `(x, y)`, or `None` when the point is
/// off Γₙ. Costs O(n) exact operations.
pub fn locate(
    params: &ConstructionParams,
    x: &ExactScalar,
    y: &ExactScalar,
    n: usize,
) -> Result<Option<RectAddress>> {
    check_unit(x, y)?;
    params.check_level(n)?;
    Ok(locate_rect(params, x, y, n).map(|(addr, _)| addr))
}

fn locate_rect(
    params: &ConstructionParams,
    x: &ExactScalar,
    y: &ExactScalar,
    n: usize,
) -> Option<(RectAddress, Rect)> {
    let mut rect = Rect::unit();
    let mut addr = RectAddress::default();
    for _ in 1..n {
        let column = rect.column_of(params, x);
        let (position, child) = rect.occupied_child(params, &column)?;
        if !child.contains_y(y) {
            return None;
        }
        addr.path.push(PathStep { column, position });
        rect = child;
    }
    Some((addr, rect))
}

/// Rectangle described by an address, validating every step.
pub fn address_rect(params: &ConstructionParams, addr: &RectAddress) -> Result<Rect> {
    let mut rect = Rect::unit();
    for step in &addr.path {
        let (position, child) = rect
            .occupied_child(params, &step.column)
            .ok_or_else(|| Error::Mismatch(format!("column {} is not occupied", step.column)))?;
        if position != step.position {
            return Err(Error::Mismatch(format!(
                "column {} holds position {position}, address says {}",
                step.column, step.position
            )));
        }
        rect = child;
    }
    Ok(rect)
}

/// Aₙ on the addressed rectangle at height `y`:
/// A₁(y) · ∏ 2(N−1) φ_{iₖ}(sₖ(y)).
pub fn density_eval(
    params: &ConstructionParams,
    addr: &RectAddress,
    y: &ExactScalar,
) -> Result<ExactScalar> {
    if addr.level() > params.max_depth {
        return Err(Error::Range(format!(
            "address level {} beyond max depth {}",
            addr.level(),
            params.max_depth
        )));
    }
    let gain = exact::from_big(params.period.clone());
    let mut rect = Rect::unit();
    if !rect.contains_y(y) {
        return Err(Error::Mismatch(format!("y = {y} outside [0,1]")));
    }
    let mut value = tent(y);
    for step in &addr.path {
        let (position, child) = rect
            .occupied_child(params, &step.column)
            .ok_or_else(|| Error::Mismatch(format!("column {} is not occupied", step.column)))?;
        if position != step.position {
            return Err(Error::Mismatch(format!(
                "column {} holds position {position}, address says {}",
                step.column, step.position
            )));
        }
        if !child.contains_y(y) {
            return Err(Error::Mismatch(format!(
                "y = {y} outside the level-{} rectangle [{}, {}]",
                child.level,
                child.y0,
                child.y1()
            )));
        }
        value = value * &gain * phi(params, &position, &rect.normalise_y(y));
        rect = child;
    }
    Ok(value)
}

/// uₙ(x, y) = ∫₀ˣ Aₙ(t, y) dt, evaluated along the single path through `x`.
///
/// At each level the completed occupied columns left of `x` each carry mass
/// φᵢ(s)·D·l/M; their per-position counts come from the wave in closed form.
pub fn u_eval(
    params: &ConstructionParams,
    n: usize,
    x: &ExactScalar,
    y: &ExactScalar,
) -> Result<ExactScalar> {
    check_unit(x, y)?;
    params.check_level(n)?;
    Ok(u_unchecked(params, n, x, y))
}

pub(crate) fn u_unchecked(
    params: &ConstructionParams,
    n: usize,
    x: &ExactScalar,
    y: &ExactScalar,
) -> ExactScalar {
    let gain = exact::from_big(params.period.clone());
    let repeats = exact::from_big(params.repeats.clone());
    let mut total = ExactScalar::zero();
    let mut density = tent(y);
    let mut rect = Rect::unit();
    for _ in 1..n {
        if density.is_zero() {
            return total;
        }
        let s = rect.normalise_y(y);
        let column = rect.column_of(params, x).min(params.columns.clone());
        let complete = &column / 2;
        let unit_mass = &density * &rect.width / &repeats;
        for (position, weight) in active_positions(params, &s) {
            let count = position_count(params, &complete, &position);
            total += &unit_mass * weight * exact::from_big(count);
        }
        match rect.occupied_child(params, &column) {
            Some((position, child)) => {
                density = density * &gain * phi(params, &position, &s);
                rect = child;
            }
            None => return total,
        }
    }
    total + density * (x - &rect.x0)
}

/// Independent oracle for [`u_eval`]: materialises every level-n rectangle on
/// the line, applies the density recursion literally and integrates the
/// piecewise-constant profile.
pub fn u_eval_bruteforce(
    params: &ConstructionParams,
    n: usize,
    x: &ExactScalar,
    y: &ExactScalar,
    cap: u64,
) -> Result<ExactScalar> {
    check_unit(x, y)?;
    let rects = enumerate_line(params, n, y, cap)?;
    let mut total = ExactScalar::zero();
    for (rect, density) in rects {
        if *x <= rect.x0 {
            break;
        }
        let right = rect.x1();
        let covered = if *x < right { x - &rect.x0 } else { rect.width.clone() };
        total += density * covered;
    }
    Ok(total)
}

fn check_cap(params: &ConstructionParams, n: usize, cap: u64) -> Result<()> {
    let count = num_traits::pow(params.occupied.clone(), n - 1);
    if count > BigInt::from(cap) {
        return Err(Error::CapExceeded {
            needed: count.to_string(),
            cap,
        });
    }
    Ok(())
}

fn cap_columns(params: &ConstructionParams) -> Result<u64> {
    params
        .occupied
        .to_u64()
        .ok_or_else(|| Error::CapExceeded {
            needed: params.occupied.to_string(),
            cap: u64::MAX,
        })
}

/// All level-n rectangles whose y-interval holds `y`, left to right, with the
/// density Aₙ they carry on that line.
pub fn enumerate_line(
    params: &ConstructionParams,
    n: usize,
    y: &ExactScalar,
    cap: u64,
) -> Result<Vec<(Rect, ExactScalar)>> {
    params.check_level(n)?;
    if y.is_negative() || *y > exact::int(1) {
        return Err(Error::Domain(format!("y = {y} outside [0,1]")));
    }
    check_cap(params, n, cap)?;
    let per_parent = cap_columns(params)?;
    let repeats = exact::from_big(params.repeats.clone());
    let mut out = Vec::new();
    let mut stack = vec![(Rect::unit(), tent(y))];
    // Depth-first, pushing children right to left so they pop in x order.
    while let Some((rect, density)) = stack.pop() {
        if rect.level == n {
            out.push((rect, density));
            continue;
        }
        let s = rect.normalise_y(y);
        for k in (0..per_parent).rev() {
            let k = BigInt::from(k);
            let position = column_position(params, &k)?;
            let column = &k * 2 + 1;
            let child = rect.child(params, &column, &position);
            if !child.contains_y(y) {
                continue;
            }
            let weight = phi_eval(params, &position, &s)?;
            let child_density = weight * &density * &rect.width / (&child.width * &repeats);
            stack.push((child, child_density));
        }
    }
    Ok(out)
}

/// Every level-n rectangle, left to right.
pub fn enumerate_level(params: &ConstructionParams, n: usize, cap: u64) -> Result<Vec<Rect>> {
    params.check_level(n)?;
    check_cap(params, n, cap)?;
    let per_parent = cap_columns(params)?;
    let mut out = Vec::new();
    let mut stack = vec![Rect::unit()];
    while let Some(rect) = stack.pop() {
        if rect.level == n {
            out.push(rect);
            continue;
        }
        for k in (0..per_parent).rev() {
            let k = BigInt::from(k);
            let position = wave(params, &k);
            stack.push(rect.child(params, &(&k * 2 + 1), &position));
        }
    }
    Ok(out)
}

/// Vertical extent of the level-n graph approximant above `x`.
///
/// Inside a black rectangle this is its y-interval. Across a gap it is the
/// affine interpolation between the nearest level-n rectangles on either
/// side (from the right edge of the left one to the left edge of the right
/// one); beyond the outermost rectangles it is constant. The approximant
/// fₙ(x) is the midpoint.
pub fn gamma_eval(
    params: &ConstructionParams,
    n: usize,
    x: &ExactScalar,
) -> Result<(ExactScalar, ExactScalar)> {
    params.check_level(n)?;
    if x.is_negative() || *x > exact::int(1) {
        return Err(Error::Domain(format!("x = {x} outside [0,1]")));
    }
    let mut rect = Rect::unit();
    let mut left: Option<Rect> = None;
    let mut right: Option<Rect> = None;
    for _ in 1..n {
        let column = rect.column_of(params, x);
        if let Some((_, child)) = rect.occupied_child(params, &column) {
            if let Some((_, l)) = rect.occupied_child(params, &(&column - 2)) {
                left = Some(l);
            }
            if let Some((_, r)) = rect.occupied_child(params, &(&column + 2)) {
                right = Some(r);
            }
            rect = child;
            continue;
        }
        if let Some((_, l)) = rect.occupied_child(params, &(&column - 1)) {
            left = Some(l);
        }
        if let Some((_, r)) = rect.occupied_child(params, &(&column + 1)) {
            right = Some(r);
        }
        let l = left.map(|r| extreme_descendant(params, r, n, Side::Right));
        let r = right.map(|r| extreme_descendant(params, r, n, Side::Left));
        return Ok(match (l, r) {
            (Some(l), Some(r)) => {
                let xl = l.x1();
                let t = (x - &xl) / (&r.x0 - &xl);
                let lo = &l.y0 + (&r.y0 - &l.y0) * &t;
                let hi = l.y1() + (r.y1() - l.y1()) * &t;
                (lo, hi)
            }
            (Some(only), None) | (None, Some(only)) => (only.y0.clone(), only.y1()),
            (None, None) => unreachable!("every parent has occupied columns"),
        });
    }
    Ok((rect.y0.clone(), rect.y1()))
}

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
}

fn extreme_descendant(params: &ConstructionParams, mut rect: Rect, n: usize, side: Side) -> Rect {
    let column = match side {
        Side::Left => BigInt::one(),
        Side::Right => &params.columns - 1,
    };
    while rect.level < n {
        let (_, child) = rect
            .occupied_child(params, &column)
            .expect("first and last columns are occupied");
        rect = child;
    }
    rect
}

/// Midpoint of [`gamma_eval`].
pub fn graph_value(params: &ConstructionParams, n: usize, x: &ExactScalar) -> Result<ExactScalar> {
    let (lo, hi) = gamma_eval(params, n, x)?;
    Ok((lo + hi) / exact::int(2))
}

/// Exact vertices of the level-n approximant: the two top-edge midpoints of
/// every rectangle, plus the constant extension to x = 0 and x = 1. Linear
/// interpolation between consecutive vertices reproduces [`graph_value`].
pub fn graph_polyline(
    params: &ConstructionParams,
    n: usize,
    cap: u64,
) -> Result<Vec<(ExactScalar, ExactScalar)>> {
    let rects = enumerate_level(params, n, cap)?;
    let two = exact::int(2);
    let mut out = Vec::with_capacity(2 * rects.len() + 2);
    for rect in &rects {
        let mid = (&rect.y0 + rect.y1()) / &two;
        if out.is_empty() && rect.x0.is_positive() {
            out.push((ExactScalar::zero(), mid.clone()));
        }
        out.push((rect.x0.clone(), mid.clone()));
        out.push((rect.x1(), mid));
    }
    if let Some((x, y)) = out.last().cloned() {
        if x < exact::int(1) {
            out.push((exact::int(1), y));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{int, ratio};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p44(depth: usize) -> ConstructionParams {
        ConstructionParams::with_exponents(2, 2, depth).unwrap()
    }

    fn big(v: i64) -> BigInt {
        BigInt::from(v)
    }

    /// Independent Λ walk: climb one row per column, linger one extra column
    /// at each end, descend.
    fn walk_positions(rows: i64, count: usize) -> Vec<i64> {
        let top = rows - 2;
        let mut out = Vec::with_capacity(count);
        let (mut pos, mut up, mut lingered) = (0i64, true, false);
        while out.len() < count {
            out.push(pos);
            let at_end = (up && pos == top) || (!up && pos == 0);
            if at_end && !lingered {
                lingered = true;
                up = !up;
                continue;
            }
            lingered = false;
            pos += if up { 1 } else { -1 };
        }
        out
    }

    #[test]
    fn solver_examples() {
        let p = solve_parameters(&ratio(3, 5), &int(2), 64).unwrap();
        assert_eq!((p.a(), p.b()), (12, 22));
        assert!(matches!(
            solve_parameters(&ratio(2, 3), &int(2), 256),
            Err(Error::Infeasible { bound: 256 })
        ));
        let small = solve_parameters(&ratio(1, 100), &int(2), 64).unwrap();
        assert_eq!((small.a(), small.b()), (2, 2));
    }

    #[test]
    fn solver_rejects_bad_domains() {
        assert!(matches!(solve_parameters(&int(1), &int(2), 64), Err(Error::Domain(_))));
        assert!(matches!(solve_parameters(&int(0), &int(2), 64), Err(Error::Domain(_))));
        assert!(matches!(solve_parameters(&ratio(1, 2), &int(1), 64), Err(Error::Domain(_))));
        assert!(matches!(solve_parameters(&ratio(1, 2), &int(2), 3), Err(Error::Domain(_))));
    }

    /// Exhaustive scan written independently of the solver loop.
    #[test]
    fn solver_matches_exhaustive_scan() {
        for (alpha, p) in [(ratio(1, 2), int(2)), (ratio(3, 10), ratio(3, 2)), (ratio(11, 20), int(2))] {
            let mut best = None;
            for a in 2..=64i64 {
                for b in 2..=64i64 {
                    let c1 = int(b) * (&p - int(1)) + int(1) < int(a) * &p;
                    let c2 = &alpha * int(1 + a + b) <= int(b - 1);
                    if c1 && c2 && best.is_none() {
                        best = Some((a as u32, b as u32));
                    }
                }
            }
            let got = solve_parameters(&alpha, &p, 64).unwrap();
            assert_eq!(Some((got.a(), got.b())), best);
        }
    }

    #[test]
    fn level_geometry_examples() {
        let p = p44(4);
        let g = level_geometry(&p, 2).unwrap();
        assert_eq!(g.width, ratio(1, 24));
        assert_eq!(g.height, ratio(1, 2));
        assert_eq!(g.rect_count, big(12));
        let g1 = level_geometry(&p, 1).unwrap();
        assert_eq!((g1.width, g1.height, g1.rect_count), (int(1), int(1), big(1)));
        assert!(level_geometry(&p, 5).is_err());

        let wide = ConstructionParams::with_exponents(12, 22, 3).unwrap();
        let g = level_geometry(&wide, 2).unwrap();
        let den = (exact::pow2(22) - 1) * 2 * exact::pow2(12);
        assert_eq!(g.width, ExactScalar::new(BigInt::one(), den));
    }

    #[test]
    fn column_position_examples() {
        let p = p44(3);
        let got: Vec<i64> = (0..12)
            .map(|k| column_position(&p, &big(k)).unwrap().to_i64().unwrap())
            .collect();
        assert_eq!(got, vec![0, 1, 2, 2, 1, 0, 0, 1, 2, 2, 1, 0]);
        assert!(column_position(&p, &big(12)).is_err());
        assert!(column_position(&p, &big(-1)).is_err());
    }

    #[test]
    fn column_position_matches_walk_and_histogram() {
        for (a, b) in [(2, 2), (3, 2), (2, 3), (3, 4)] {
            let p = ConstructionParams::with_exponents(a, b, 2).unwrap();
            let count = p.occupied().to_usize().unwrap();
            let rows = p.rows().to_i64().unwrap();
            let walk = walk_positions(rows, count);
            let mut hist = vec![0u64; (rows - 1) as usize];
            for (k, expect) in walk.iter().enumerate() {
                let got = column_position(&p, &big(k as i64)).unwrap().to_i64().unwrap();
                assert_eq!(got, *expect, "a={a} b={b} k={k}");
                hist[got as usize] += 1;
                if k > 0 {
                    assert!((got - walk[k - 1]).abs() <= 1);
                }
            }
            let m = p.repeats().to_u64().unwrap();
            assert!(hist.iter().all(|&h| h == m), "{hist:?}");
        }
    }

    #[test]
    fn position_count_matches_direct_count() {
        let p = ConstructionParams::with_exponents(2, 3, 2).unwrap();
        let total = p.occupied().to_i64().unwrap();
        for complete in 0..=total {
            for pos in 0..(p.rows().to_i64().unwrap() - 1) {
                let direct = (0..complete)
                    .filter(|k| wave(&p, &big(*k)) == big(pos))
                    .count() as i64;
                assert_eq!(position_count(&p, &big(complete), &big(pos)), big(direct));
            }
        }
    }

    #[test]
    fn phi_examples() {
        let p = p44(2);
        assert_eq!(phi_eval(&p, &big(1), &ratio(1, 2)).unwrap(), int(1));
        assert_eq!(phi_eval(&p, &big(0), &ratio(1, 2)).unwrap(), int(0));
        assert_eq!(phi_eval(&p, &big(2), &ratio(1, 2)).unwrap(), int(0));
        assert_eq!(phi_eval(&p, &big(0), &ratio(3, 8)).unwrap(), ratio(1, 2));
        assert_eq!(phi_eval(&p, &big(1), &ratio(3, 8)).unwrap(), ratio(1, 2));
        assert_eq!(phi_eval(&p, &big(0), &int(0)).unwrap(), int(1));
        assert_eq!(phi_eval(&p, &big(2), &int(1)).unwrap(), int(1));
        assert!(matches!(phi_eval(&p, &big(3), &int(0)), Err(Error::Range(_))));
        assert!(matches!(phi_eval(&p, &big(0), &ratio(3, 2)), Err(Error::Domain(_))));
    }

    #[test]
    fn phi_is_a_partition_of_unity() {
        let p = ConstructionParams::with_exponents(2, 3, 2).unwrap();
        for q in 0..=200 {
            let s = ratio(q, 200);
            let vals: Vec<ExactScalar> = (0..7).map(|i| phi_eval(&p, &big(i), &s).unwrap()).collect();
            let sum: ExactScalar = vals.iter().cloned().sum();
            assert_eq!(sum, int(1), "s = {s}");
            assert!(vals.iter().filter(|v| !v.is_zero()).count() <= 2);
            let active = active_positions(&p, &s);
            let nonzero: Vec<_> = (0..7).filter(|i| !vals[*i as usize].is_zero()).collect();
            assert_eq!(active.len(), nonzero.len());
            for (pos, w) in active {
                assert_eq!(w, vals[pos.to_usize().unwrap()]);
            }
        }
    }

    #[test]
    fn locate_examples() {
        let p = p44(3);
        let addr = locate(&p, &ratio(3, 48), &ratio(1, 4), 2).unwrap().unwrap();
        assert_eq!(addr.path, vec![PathStep { column: big(1), position: big(0) }]);
        assert!(locate(&p, &int(0), &int(0), 2).unwrap().is_none());
        assert!(locate(&p, &ratio(1, 2), &ratio(1, 2), 2).unwrap().is_none());
        assert!(locate(&p, &int(2), &int(0), 2).is_err());
        assert_eq!(locate(&p, &ratio(1, 3), &ratio(1, 3), 1).unwrap().unwrap().level(), 1);
    }

    #[test]
    fn locate_agrees_with_rectangle_list() {
        let p = p44(3);
        let rects = enumerate_level(&p, 3, DEFAULT_RECT_CAP).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let x = ratio(rng.gen_range(0..=2000), 2000);
            let y = ratio(rng.gen_range(0..=2000), 2000);
            let hit = rects.iter().find(|r| r.contains_x(&x) && r.contains_y(&y));
            let found = locate_rect(&p, &x, &y, 3).map(|(_, r)| r);
            assert_eq!(found.as_ref(), hit, "x={x} y={y}");
        }
    }

    #[test]
    fn density_examples() {
        let p = p44(3);
        // Column 3 is occupied column k = 1, position 1.
        let addr = RectAddress { path: vec![PathStep { column: big(3), position: big(1) }] };
        assert_eq!(density_eval(&p, &addr, &ratio(1, 2)).unwrap(), int(6));
        assert_eq!(density_eval(&p, &RectAddress::default(), &int(1)).unwrap(), int(0));
        let wrong = RectAddress { path: vec![PathStep { column: big(3), position: big(2) }] };
        assert!(matches!(density_eval(&p, &wrong, &ratio(1, 2)), Err(Error::Mismatch(_))));
        let even = RectAddress { path: vec![PathStep { column: big(2), position: big(0) }] };
        assert!(matches!(density_eval(&p, &even, &ratio(1, 2)), Err(Error::Mismatch(_))));
        assert!(matches!(density_eval(&p, &addr, &ratio(1, 8)), Err(Error::Mismatch(_))));
    }

    #[test]
    fn density_matches_line_enumeration() {
        let p = p44(3);
        for q in [1, 5, 17, 32, 40, 63] {
            let y = ratio(q, 64);
            for (rect, d) in enumerate_line(&p, 3, &y, DEFAULT_RECT_CAP).unwrap() {
                let mid = (&rect.x0 + rect.x1()) / int(2);
                let addr = locate(&p, &mid, &y, 3).unwrap().expect("rect on line");
                assert_eq!(density_eval(&p, &addr, &y).unwrap(), d);
            }
        }
    }

    #[test]
    fn u_eval_examples() {
        let p = p44(3);
        assert_eq!(u_eval(&p, 2, &int(0), &ratio(1, 3)).unwrap(), int(0));
        assert_eq!(u_eval(&p, 2, &ratio(1, 2), &ratio(1, 2)).unwrap(), ratio(1, 2));
        for n in 1..=3 {
            for y in [ratio(1, 3), ratio(1, 2), ratio(7, 9), int(0), int(1)] {
                assert_eq!(u_eval(&p, n, &int(1), &y).unwrap(), tent(&y));
            }
        }
        assert!(matches!(u_eval(&p, 2, &int(2), &int(0)), Err(Error::Domain(_))));
        assert!(matches!(u_eval(&p, 4, &int(0), &int(0)), Err(Error::Range(_))));
    }

    #[test]
    fn bruteforce_examples() {
        let p = p44(3);
        for (x, y) in [(int(0), ratio(1, 3)), (ratio(1, 2), ratio(1, 2)), (int(1), ratio(2, 7))] {
            assert_eq!(
                u_eval_bruteforce(&p, 2, &x, &y, DEFAULT_RECT_CAP).unwrap(),
                u_eval(&p, 2, &x, &y).unwrap()
            );
        }
        let (x, y) = (ratio(3, 7), ratio(2, 5));
        assert_eq!(u_eval_bruteforce(&p, 1, &x, &y, DEFAULT_RECT_CAP).unwrap(), &x * tent(&y));
        assert!(matches!(
            u_eval_bruteforce(&p, 3, &x, &y, 100),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn bruteforce_matches_analytic_on_random_points() {
        let p = p44(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = ratio(rng.gen_range(0..=10_000), 10_000);
            let y = ratio(rng.gen_range(0..=9_973), 9_973);
            assert_eq!(
                u_eval(&p, 3, &x, &y).unwrap(),
                u_eval_bruteforce(&p, 3, &x, &y, DEFAULT_RECT_CAP).unwrap(),
                "x={x} y={y}"
            );
        }
    }

    #[test]
    fn enumerate_line_examples() {
        let p = p44(2);
        assert_eq!(enumerate_line(&p, 2, &ratio(1, 2), DEFAULT_RECT_CAP).unwrap().len(), 8);
        let near_top = enumerate_line(&p, 2, &ratio(999, 1000), DEFAULT_RECT_CAP).unwrap();
        assert_eq!(near_top.len(), 4);
        let one = enumerate_line(&p, 1, &ratio(1, 5), DEFAULT_RECT_CAP).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].0, Rect::unit());
        let xs: Vec<_> = near_top.iter().map(|(r, _)| r.x0.clone()).collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn gamma_examples() {
        let p = p44(3);
        // Occupied column j = 1 spans [1/24, 2/24).
        assert_eq!(gamma_eval(&p, 2, &ratio(3, 48)).unwrap(), (int(0), ratio(1, 2)));
        assert_eq!(gamma_eval(&p, 1, &ratio(1, 3)).unwrap(), (int(0), int(1)));
        // Gap between columns 1 (position 0) and 3 (position 1), at its centre.
        let (lo, hi) = gamma_eval(&p, 2, &ratio(5, 48)).unwrap();
        assert_eq!((lo, hi), (ratio(1, 8), ratio(5, 8)));
        // Left of the first occupied column: constant extension.
        assert_eq!(gamma_eval(&p, 2, &int(0)).unwrap(), (int(0), ratio(1, 2)));
        assert_eq!(gamma_eval(&p, 2, &int(1)).unwrap().0, int(0));
    }

    #[test]
    fn adjacent_column_midpoints_differ_by_one_row() {
        let p = p44(3);
        let g = level_geometry(&p, 2).unwrap();
        // One parent row, l̃₁/N = l̃₂/2.
        let row = &g.height / int(2);
        let rects = enumerate_level(&p, 2, DEFAULT_RECT_CAP).unwrap();
        for w in rects.windows(2) {
            let d = (&w[1].y0 - &w[0].y0).abs();
            assert!(d.is_zero() || d == row);
        }
    }

    #[test]
    fn polyline_interpolates_gamma_midpoints() {
        let p = p44(3);
        let poly = graph_polyline(&p, 3, DEFAULT_RECT_CAP).unwrap();
        assert_eq!(poly.first().unwrap().0, int(0));
        assert_eq!(poly.last().unwrap().0, int(1));
        assert!(poly.windows(2).all(|w| w[0].0 < w[1].0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = ratio(rng.gen_range(0..=100_000), 100_000);
            let idx = poly.partition_point(|(px, _)| *px <= x);
            let expect = if idx == poly.len() {
                poly[idx - 1].1.clone()
            } else {
                let (x0, y0) = &poly[idx - 1];
                let (x1, y1) = &poly[idx];
                y0 + (y1 - y0) * (&x - x0) / (x1 - x0)
            };
            assert_eq!(graph_value(&p, 3, &x).unwrap(), expect, "x = {x}");
        }
    }

    #[test]
    fn off_support_points_are_stable_across_levels() {
        let p = p44(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 100 {
            let x = ratio(rng.gen_range(0..=50_000), 50_000);
            let y = ratio(rng.gen_range(0..=50_000), 50_000);
            for n in 1..4 {
                if locate(&p, &x, &y, n).unwrap().is_none() {
                    assert_eq!(u_eval(&p, n + 1, &x, &y).unwrap(), u_eval(&p, n, &x, &y).unwrap());
                    checked += 1;
                }
            }
        }
    }
}
