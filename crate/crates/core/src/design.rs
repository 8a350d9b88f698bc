//! Input domains and space-filling designs.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::io;

/// Relative slack allowed when checking that a point lies in its domain.
const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl Dimension {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// A rectangular input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Dimension>", into = "Vec<Dimension>")]
pub struct Domain {
    dims: Vec<Dimension>,
}

impl TryFrom<Vec<Dimension>> for Domain {
    type Error = Error;

    fn try_from(dims: Vec<Dimension>) -> Result<Self> {
        Domain::new(dims)
    }
}

impl From<Domain> for Vec<Dimension> {
    fn from(d: Domain) -> Self {
        d.dims
    }
}

impl Domain {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidDomain("no dimensions".into()));
        }
        for (i, d) in dims.iter().enumerate() {
            if !(d.lower.is_finite() && d.upper.is_finite()) || d.lower >= d.upper {
                return Err(Error::InvalidDomain(format!(
                    "dimension {:?} has bounds [{}, {}]",
                    d.name, d.lower, d.upper
                )));
            }
            if dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::InvalidDomain(format!("duplicate dimension name {:?}", d.name)));
            }
        }
        Ok(Self { dims })
    }

    /// Convenience constructor from `(name, lower, upper)` triples.
    pub fn from_bounds(bounds: &[(&str, f64, f64)]) -> Result<Self> {
        Self::new(bounds.iter().map(|&(n, l, u)| Dimension::new(n, l, u)).collect())
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.dims.iter().map(|d| d.name.clone()).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len()
            && self.dims.iter().zip(x).all(|(d, &v)| {
                let slack = BOUND_SLACK * d.width();
                v >= d.lower - slack && v <= d.upper + slack
            })
    }

    pub fn center(&self) -> Vec<f64> {
        self.dims.iter().map(|d| 0.5 * (d.lower + d.upper)).collect()
    }

    /// Affine map onto `[0,1]^p`; rejects points outside the domain.
    pub fn to_unit_cube(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.len(), x.len())?;
        if !self.contains(x) {
            return Err(Error::OutOfRange(format!("{x:?} is outside the domain")));
        }
        Ok(self.to_unit_cube_unchecked(x))
    }

    /// Same affine map without the bounds check (used for extrapolation).
    pub fn to_unit_cube_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(x)
            .map(|(d, &v)| (v - d.lower) / d.width())
            .collect()
    }

    pub fn from_unit_cube(&self, u: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.len(), u.len())?;
        if u.iter().any(|&v| !(-BOUND_SLACK..=1.0 + BOUND_SLACK).contains(&v)) {
            return Err(Error::OutOfRange(format!("{u:?} is outside the unit cube")));
        }
        Ok(self
            .dims
            .iter()
            .zip(u)
            .map(|(d, &v)| (d.lower + v * d.width()).clamp(d.lower, d.upper))
            .collect())
    }
}

/// A set of `n` points (rows) in a `p`-dimensional domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    points: DMatrix<f64>,
    domain: Domain,
}

impl DesignMatrix {
    pub fn new(points: DMatrix<f64>, domain: Domain) -> Result<Self> {
        ensure_len(domain.len(), points.ncols())?;
        for (i, row) in points.row_iter().enumerate() {
            let x: Vec<f64> = row.iter().copied().collect();
            if !domain.contains(&x) {
                return Err(Error::OutOfRange(format!("design point {i} {x:?}")));
            }
        }
        Ok(Self { points, domain })
    }

    pub fn from_rows(rows: &[Vec<f64>], domain: Domain) -> Result<Self> {
        let p = domain.len();
        for r in rows {
            ensure_len(p, r.len())?;
        }
        let points = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(points, domain)
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn p(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.point(i)).collect()
    }

    /// The design mapped to the unit cube.
    pub fn unit_points(&self) -> DMatrix<f64> {
        let d = self.domain.dims();
        DMatrix::from_fn(self.n(), self.p(), |i, j| {
            (self.points[(i, j)] - d[j].lower) / d[j].width()
        })
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            points: self.points.select_rows(idx),
            domain: self.domain.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = io::csv_writer(w);
        wtr.write_record(self.domain.names())?;
        for i in 0..self.n() {
            wtr.write_record(self.points.row(i).iter().map(|&v| io::fmt_real(v)))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a design written by [`DesignMatrix::write_csv`]; the header must
    /// match the domain's dimension names.
    pub fn read_csv<R: Read>(r: R, domain: Domain) -> Result<Self> {
        let (header, rows) = io::read_real_table(r)?;
        if header != domain.names() {
            return Err(Error::Parse(format!(
                "design header {header:?} does not match domain {:?}",
                domain.names()
            )));
        }
        Self::from_rows(&rows, domain)
    }
}

/// Knobs for [`lhc_maximin_with`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LhcOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Uniform jitter inside each stratum instead of the stratum midpoint.
    pub jitter: bool,
    /// Coordinate-swap proposals per restart.
    pub swaps: usize,
}

impl Default for LhcOptions {
    fn default() -> Self {
        Self {
            restarts: 50,
            seed: 0,
            jitter: false,
            swaps: 2000,
        }
    }
}

/// Result of a maximin search, with the score trail of every candidate.
#[derive(Debug, Clone)]
pub struct LhcSearch {
    pub design: DesignMatrix,
    /// Minimum pairwise unit-cube distance of the returned design.
    pub min_distance: f64,
    /// Minimum distance of every candidate state visited, all restarts.
    pub visited: Vec<f64>,
}

/// Maximin Latin hypercube with midpoint placement.
pub fn lhc_maximin(n: usize, domain: &Domain, restarts: usize, seed: u64) -> Result<DesignMatrix> {
    let opts = LhcOptions {
        restarts,
        seed,
        ..LhcOptions::default()
    };
    Ok(lhc_maximin_with(n, domain, &opts)?.design)
}

/// Multi-restart random LHC improved by stratum-preserving swaps.
///
/// Each restart draws an independent LHC from its own ChaCha stream, then
/// hill-climbs on (min distance, -number of pairs at the min distance).
/// The winner is picked by (distance, restart index), so the result does
/// not depend on how restarts are scheduled across threads.
pub fn lhc_maximin_with(n: usize, domain: &Domain, opts: &LhcOptions) -> Result<LhcSearch> {
    if n == 0 {
        return Err(Error::InvalidArgument("design size must be >= 1".into()));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be >= 1".into()));
    }
    // Revalidate in case the domain was built by hand.
    let domain = Domain::new(domain.dims().to_vec())?;
    let p = domain.len();

    let runs: Vec<(Vec<Vec<f64>>, Score, Vec<f64>)> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(r as u64);
            climb(n, p, opts, &mut rng)
        })
        .collect();

    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.1.better_than(&runs[best].1) {
            best = r;
        }
    }
    let visited = runs.iter().flat_map(|r| r.2.iter().copied()).collect();
    let (unit, score, _) = &runs[best];
    let rows: Vec<Vec<f64>> = unit.iter().map(|u| domain.from_unit_cube(u)).collect::<Result<_>>()?;
    Ok(LhcSearch {
        design: DesignMatrix::from_rows(&rows, domain)?,
        min_distance: score.min_dist2.sqrt(),
        visited,
    })
}

#[derive(Debug, Clone, Copy)]
struct Score {
    min_dist2: f64,
    ties: usize,
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        self.min_dist2 > other.min_dist2 || (self.min_dist2 == other.min_dist2 && self.ties < other.ties)
    }
}

fn score(pts: &[Vec<f64>]) -> Score {
    let mut min_dist2 = f64::INFINITY;
    let mut ties = 0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d2: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < min_dist2 {
                min_dist2 = d2;
                ties = 1;
            } else if d2 == min_dist2 {
                ties += 1;
            }
        }
    }
    Score { min_dist2, ties }
}

fn climb(n: usize, p: usize, opts: &LhcOptions, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Score, Vec<f64>) {
    let mut pts = vec![vec![0.0; p]; n];
    for j in 0..p {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, &k) in perm.iter().enumerate() {
            let offset = if opts.jitter { rng.random::<f64>() } else { 0.5 };
            pts[i][j] = (k as f64 + offset) / n as f64;
        }
    }
    let mut current = score(&pts);
    let mut visited = vec![current.min_dist2.sqrt()];
    if n < 2 {
        return (pts, current, visited);
    }
    for _ in 0..opts.swaps {
        let j = rng.random_range(0..p);
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        swap_coord(&mut pts, a, b, j);
        let s = score(&pts);
        if s.better_than(&current) {
            current = s;
            visited.push(s.min_dist2.sqrt());
        } else {
            swap_coord(&mut pts, a, b, j);
        }
    }
    (pts, current, visited)
}

fn swap_coord(pts: &mut [Vec<f64>], a: usize, b: usize, j: usize) {
    let t = pts[a][j];
    pts[a][j] = pts[b][j];
    pts[b][j] = t;
}

/// `n` i.i.d. uniform points in the domain.
pub fn random_test_design(n: usize, domain: &Domain, seed: u64) -> Result<DesignMatrix> {
    if n == 0 {
        return Err(Error::InvalidArgument("design size must be >= 1".into()));
    }
    let domain = Domain::new(domain.dims().to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            domain
                .dims()
                .iter()
                .map(|d| d.lower + rng.random::<f64>() * d.width())
                .collect()
        })
        .collect();
    DesignMatrix::from_rows(&rows, domain)
}
