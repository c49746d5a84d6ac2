//! Structured node grids on the truncated cylinder `(a, b) x T^{N-1}` and on
//! the unit torus `T^N`, for `N` in `{1, 2}`.
//!
//! Nodes in `x1` sit at `x_left + i / m1`; the spacing divides one exactly, so
//! a translation by one flux period is a shift by `m1` node indices. The
//! transverse direction `x2` (present only when `N = 2`) is periodic with `m2`
//! nodes per period and no duplicated endpoint.
//!
//! Quadrature is the trapezoid rule along the non-periodic `x1` axis of a
//! cylinder and the rectangle rule along every periodic axis.

use std::fmt::Debug;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Common interface of the cylinder and torus grids.
pub trait Grid: Copy + PartialEq + Debug + Send + Sync {
    /// Nodes per unit length along `x1`.
    fn m1(&self) -> usize;
    /// Nodes per period along `x2`, absent in one dimension.
    fn m2(&self) -> Option<usize>;
    /// Number of `x1` nodes.
    fn n1(&self) -> usize;
    /// `x1` coordinate of node column `i`.
    fn x1(&self, i: usize) -> f64;
    /// Whether `x1` wraps around.
    fn periodic_x1(&self) -> bool;
    /// Quadrature weight of node column `i` along `x1`.
    fn weight1(&self, i: usize) -> f64;

    fn n2(&self) -> usize {
        self.m2().unwrap_or(1)
    }

    fn dim(&self) -> usize {
        if self.m2().is_some() {
            2
        } else {
            1
        }
    }

    fn h1(&self) -> f64 {
        1.0 / self.m1() as f64
    }

    fn h2(&self) -> f64 {
        1.0 / self.n2() as f64
    }

    fn x2(&self, j: usize) -> f64 {
        j as f64 * self.h2()
    }

    fn len(&self) -> usize {
        self.n1() * self.n2()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        i * self.n2() + j
    }

    fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x1(i), self.x2(j)]
    }

    /// Full quadrature weight of node `(i, j)`.
    fn weight(&self, i: usize, _j: usize) -> f64 {
        self.weight1(i) * self.h2()
    }
}

/// Truncated cylinder `(x_left, x_left + length) x T^{N-1}` with nodes on both
/// `x1` endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CylinderGrid {
    x_left: i64,
    length: usize,
    m1: usize,
    m2: Option<usize>,
}

impl CylinderGrid {
    /// The symmetric cylinder `Omega_R = (-R, R) x T^{N-1}`.
    pub fn symmetric(half_length: i64, m1: usize, m2: Option<usize>) -> Result<Self> {
        if half_length < 1 {
            return Err(Error::Validation(format!(
                "half-length R must be a positive integer, got {half_length}"
            )));
        }
        Self::with_extent(-half_length, 2 * half_length as usize, m1, m2)
    }

    /// Cylinder with integer left end and integer length.
    pub fn with_extent(x_left: i64, length: usize, m1: usize, m2: Option<usize>) -> Result<Self> {
        if length == 0 {
            return Err(Error::Validation("cylinder length must be positive".into()));
        }
        if m1 < 2 {
            return Err(Error::Validation(format!(
                "m1 must be at least 2, got {m1}"
            )));
        }
        if let Some(m2) = m2 {
            if m2 < 2 {
                return Err(Error::Validation(format!(
                    "m2 must be at least 2, got {m2}"
                )));
            }
        }
        Ok(Self {
            x_left,
            length,
            m1,
            m2,
        })
    }

    /// Builds `Omega_R` from a real-valued half-length, rejecting non-integers.
    pub fn from_real(half_length: f64, m1: usize, m2: Option<usize>) -> Result<Self> {
        Self::symmetric(integer_half_length(half_length)?, m1, m2)
    }

    pub fn x_left(&self) -> i64 {
        self.x_left
    }

    pub fn x_right(&self) -> i64 {
        self.x_left + self.length as i64
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// `R` when the cylinder is symmetric about the origin.
    pub fn half_length(&self) -> Option<i64> {
        (self.x_left + self.x_right() == 0).then_some(-self.x_left)
    }

    /// Node column sitting at integer abscissa `x`, if inside the grid.
    pub fn column_at(&self, x: i64) -> Option<usize> {
        (x >= self.x_left && x <= self.x_right()).then(|| ((x - self.x_left) as usize) * self.m1)
    }

    /// Intersection with another cylinder of the same resolution.
    pub fn intersect(&self, other: &Self) -> Result<Self> {
        self.check_resolution(other)?;
        let left = self.x_left.max(other.x_left);
        let right = self.x_right().min(other.x_right());
        if right <= left {
            return Err(Error::Domain(format!(
                "cylinders ({}, {}) and ({}, {}) do not overlap",
                self.x_left,
                self.x_right(),
                other.x_left,
                other.x_right()
            )));
        }
        Self::with_extent(left, (right - left) as usize, self.m1, self.m2)
    }

    /// The same cylinder relabelled by `x -> x - k`.
    pub fn translated(&self, k: i64) -> Self {
        Self {
            x_left: self.x_left - k,
            ..*self
        }
    }

    pub fn check_resolution(&self, other: &Self) -> Result<()> {
        if self.m1 != other.m1 || self.m2 != other.m2 {
            return Err(Error::GridMismatch(format!(
                "resolution (m1={}, m2={:?}) vs (m1={}, m2={:?})",
                self.m1, self.m2, other.m1, other.m2
            )));
        }
        Ok(())
    }

    /// The torus with the same resolution.
    pub fn torus(&self) -> TorusGrid {
        TorusGrid {
            m1: self.m1,
            m2: self.m2,
        }
    }
}

impl Grid for CylinderGrid {
    fn m1(&self) -> usize {
        self.m1
    }

    fn m2(&self) -> Option<usize> {
        self.m2
    }

    fn n1(&self) -> usize {
        self.length * self.m1 + 1
    }

    fn x1(&self, i: usize) -> f64 {
        self.x_left as f64 + i as f64 / self.m1 as f64
    }

    fn periodic_x1(&self) -> bool {
        false
    }

    fn weight1(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n1() {
            0.5 * self.h1()
        } else {
            self.h1()
        }
    }
}

/// Unit torus `T^N` with `m1` (and `m2`) nodes per period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    m1: usize,
    m2: Option<usize>,
}

impl TorusGrid {
    pub fn new(m1: usize, m2: Option<usize>) -> Result<Self> {
        if m1 < 2 {
            return Err(Error::Validation(format!(
                "m1 must be at least 2, got {m1}"
            )));
        }
        if matches!(m2, Some(m) if m < 2) {
            return Err(Error::Validation("m2 must be at least 2".into()));
        }
        Ok(Self { m1, m2 })
    }
}

impl Grid for TorusGrid {
    fn m1(&self) -> usize {
        self.m1
    }

    fn m2(&self) -> Option<usize> {
        self.m2
    }

    fn n1(&self) -> usize {
        self.m1
    }

    fn x1(&self, i: usize) -> f64 {
        i as f64 / self.m1 as f64
    }

    fn periodic_x1(&self) -> bool {
        true
    }

    fn weight1(&self, _i: usize) -> f64 {
        self.h1()
    }
}

/// Rejects non-integer or non-positive half-lengths.
pub fn integer_half_length(r: f64) -> Result<i64> {
    if !r.is_finite() || r.fract() != 0.0 || r < 1.0 {
        return Err(Error::Validation(format!(
            "half-length R must be a positive integer, got {r}"
        )));
    }
    Ok(r as i64)
}

/// Nodal values on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<G: Grid> {
    grid: G,
    values: Vec<f64>,
}

pub type CylinderField = Field<CylinderGrid>;
pub type TorusField = Field<TorusGrid>;

impl<G: Grid> Field<G> {
    pub fn new(grid: G, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite value at node {pos}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: G, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: G) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: G, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.n1() {
            for j in 0..grid.n2() {
                values.push(f(grid.x1(i), grid.x2(j)));
            }
        }
        Self { grid, values }
    }

    /// Wraps values without the finiteness scan. Length must match.
    pub(crate) fn from_raw(grid: G, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &G {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Mean over `x'` at node column `i1` (rectangle rule on the period).
    pub fn slice_integral(&self, i1: usize) -> f64 {
        let n2 = self.grid.n2();
        let row = &self.values[i1 * n2..(i1 + 1) * n2];
        row.iter().sum::<f64>() / n2 as f64
    }

    /// Slice integrals for every column.
    pub fn slice_integrals(&self) -> Vec<f64> {
        (0..self.grid.n1())
            .map(|i| self.slice_integral(i))
            .collect()
    }

    pub fn integral(&self) -> f64 {
        let n2 = self.grid.n2();
        (0..self.grid.n1())
            .map(|i| self.grid.weight1(i) * self.values[i * n2..(i + 1) * n2].iter().sum::<f64>())
            .sum::<f64>()
            * self.grid.h2()
    }

    pub fn l1_norm(&self) -> f64 {
        let n2 = self.grid.n2();
        (0..self.grid.n1())
            .map(|i| {
                self.grid.weight1(i)
                    * self.values[i * n2..(i + 1) * n2]
                        .iter()
                        .map(|v| v.abs())
                        .sum::<f64>()
            })
            .sum::<f64>()
            * self.grid.h2()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    /// Writes the field as CSV (`x1,x2,value` or `x1,value`), optionally
    /// preceded by `#`-comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let two_d = self.grid.dim() == 2;
        if two_d {
            writeln!(w, "x1,x2,value")?;
        } else {
            writeln!(w, "x1,value")?;
        }
        for i in 0..self.grid.n1() {
            for j in 0..self.grid.n2() {
                let v = self.get(i, j);
                if two_d {
                    writeln!(
                        w,
                        "{},{},{}",
                        fmt17(self.grid.x1(i)),
                        fmt17(self.grid.x2(j)),
                        fmt17(v)
                    )?;
                } else {
                    writeln!(w, "{},{}", fmt17(self.grid.x1(i)), fmt17(v))?;
                }
            }
        }
        Ok(())
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// L1 distance with the grid's quadrature.
pub fn l1_distance<G: Grid>(f: &Field<G>, g: &Field<G>) -> Result<f64> {
    f.check_same_grid(g)?;
    let grid = f.grid();
    let n2 = grid.n2();
    let mut total = 0.0;
    for i in 0..grid.n1() {
        let row: f64 = (0..n2)
            .map(|j| (f.values[i * n2 + j] - g.values[i * n2 + j]).abs())
            .sum();
        total += grid.weight1(i) * row;
    }
    Ok(total * grid.h2())
}

impl Field<CylinderGrid> {
    /// Restriction to a sub-cylinder of the same resolution.
    pub fn restrict(&self, sub: &CylinderGrid) -> Result<Self> {
        self.grid.check_resolution(sub)?;
        if sub.x_left() < self.grid.x_left() || sub.x_right() > self.grid.x_right() {
            return Err(Error::Domain(format!(
                "({}, {}) is not inside ({}, {})",
                sub.x_left(),
                sub.x_right(),
                self.grid.x_left(),
                self.grid.x_right()
            )));
        }
        let n2 = self.grid.n2();
        let start = (sub.x_left() - self.grid.x_left()) as usize * self.grid.m1();
        let values = self.values[start * n2..(start + sub.n1()) * n2].to_vec();
        Ok(Self::from_raw(*sub, values))
    }

    /// `g(x) = f(x + k e1)` on the whole relabelled cylinder `(a - k, b - k)`.
    pub fn translate(&self, k: i64) -> Self {
        Self::from_raw(self.grid.translated(k), self.values.clone())
    }

    /// `tau_k f` restricted to where both `x` and `x + k e1` lie in the grid.
    pub fn shift_e1(&self, k: i64) -> Result<Self> {
        if k.unsigned_abs() as usize >= self.grid.length() {
            return Err(Error::Domain(format!(
                "shift {k} leaves no overlap on a cylinder of length {}",
                self.grid.length()
            )));
        }
        let shifted = self.translate(k);
        let common = self.grid.intersect(shifted.grid())?;
        shifted.restrict(&common)
    }

    /// Reads a field written by [`Field::write_csv`]; the grid is recovered
    /// from the coordinates.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        let mut header: Option<Vec<String>> = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if header.is_none() {
                header = Some(t.split(',').map(|s| s.trim().to_string()).collect());
                continue;
            }
            let cols: Vec<f64> = t
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            match cols.as_slice() {
                [x1, v] => rows.push((*x1, 0.0, *v)),
                [x1, x2, v] => rows.push((*x1, *x2, *v)),
                _ => {
                    return Err(Error::Parse(format!(
                        "line {}: expected 2 or 3 columns",
                        lineno + 1
                    )))
                }
            }
        }
        let header = header.ok_or_else(|| Error::Parse("missing header".into()))?;
        let two_d = header.len() == 3;
        if rows.len() < 3 {
            return Err(Error::Parse("too few rows".into()));
        }
        let n2 = if two_d {
            rows.iter().take_while(|r| r.0 == rows[0].0).count()
        } else {
            1
        };
        if rows.len() % n2 != 0 {
            return Err(Error::Parse(
                "row count is not a multiple of the x2 count".into(),
            ));
        }
        let n1 = rows.len() / n2;
        let h1 = rows[n2].0 - rows[0].0;
        let m1 = (1.0 / h1).round() as usize;
        let length = ((n1 - 1) as f64 / m1 as f64).round() as usize;
        let x_left = rows[0].0.round() as i64;
        if (rows[0].0 - x_left as f64).abs() > 1e-9 || length * m1 + 1 != n1 {
            return Err(Error::Parse(
                "coordinates do not describe a cylinder with integer ends".into(),
            ));
        }
        let grid = CylinderGrid::with_extent(x_left, length, m1, two_d.then_some(n2))?;
        for (idx, row) in rows.iter().enumerate() {
            let (i, j) = (idx / n2, idx % n2);
            if (row.0 - grid.x1(i)).abs() > 1e-9 || (two_d && (row.1 - grid.x2(j)).abs() > 1e-9) {
                return Err(Error::Parse(format!("row {idx} is out of grid order")));
            }
        }
        Field::new(grid, rows.into_iter().map(|r| r.2).collect())
    }
}

impl Field<TorusGrid> {
    /// Value at a global column index, wrapped into the period.
    #[inline]
    pub fn periodic(&self, i: i64, j: usize) -> f64 {
        let m1 = self.grid.m1() as i64;
        self.get(i.rem_euclid(m1) as usize, j)
    }

    /// The periodic field sampled on a cylinder of the same resolution.
    pub fn tile(&self, cyl: &CylinderGrid) -> Result<CylinderField> {
        if cyl.torus() != self.grid {
            return Err(Error::GridMismatch(format!(
                "torus {:?} vs cylinder {:?}",
                self.grid, cyl
            )));
        }
        let offset = cyl.x_left() * cyl.m1() as i64;
        let mut values = Vec::with_capacity(cyl.len());
        for i in 0..cyl.n1() {
            for j in 0..cyl.n2() {
                values.push(self.periodic(offset + i as i64, j));
            }
        }
        Ok(Field::from_raw(*cyl, values))
    }

    /// The `x2` profile on the slice `x1 = integer`.
    pub fn integer_slice(&self) -> Vec<f64> {
        (0..self.grid.n2()).map(|j| self.get(0, j)).collect()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}
