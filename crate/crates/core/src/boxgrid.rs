//! Uniform cubical grids and box sets.
//!
//! A [`BoxSet`] is a dense membership bit-vector over the boxes of a shared
//! [`Grid`]; its point set is the union of the member boxes taken closed.
//! All approximations are outer: covers include a box if any sample point
//! qualifies, dilations are measured between box centres padded by half a
//! box diagonal.

use std::fmt::Write as _;
use std::sync::Arc;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

/// Grids are capped at 2^26 boxes.
pub const MAX_BOXES: usize = 1 << 26;

/// Relative slack used when comparing distances against thresholds.
const DIST_RTOL: f64 = 1e-9;

pub type Index = SmallVec<[usize; 4]>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid corners and resolution must have the same nonzero dimension")]
    Dimension,
    #[error("grid needs lo < hi in every coordinate (dimension {0})")]
    Degenerate(usize),
    #[error("grid resolution must be positive in every coordinate")]
    ZeroResolution,
    #[error("grid has {0} boxes, more than the cap of 2^26")]
    TooLarge(usize),
    #[error("operation needs a nonempty box set")]
    EmptySet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    res: Vec<usize>,
    width: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
    res: Vec<usize>,
}

impl TryFrom<GridSpec> for Grid {
    type Error = GridError;
    fn try_from(g: GridSpec) -> Result<Self, GridError> {
        Grid::new(g.lo, g.hi, g.res)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec {
            lo: g.lo,
            hi: g.hi,
            res: g.res,
        }
    }
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, res: Vec<usize>) -> Result<Grid, GridError> {
        let d = lo.len();
        if d == 0 || hi.len() != d || res.len() != d {
            return Err(GridError::Dimension);
        }
        for i in 0..d {
            if !(lo[i] < hi[i]) || !lo[i].is_finite() || !hi[i].is_finite() {
                return Err(GridError::Degenerate(i));
            }
        }
        if res.contains(&0) {
            return Err(GridError::ZeroResolution);
        }
        let len = res
            .iter()
            .try_fold(1usize, |acc, &r| acc.checked_mul(r))
            .filter(|&n| n <= MAX_BOXES)
            .ok_or(GridError::TooLarge(res.iter().product()))?;
        let width = (0..d).map(|i| (hi[i] - lo[i]) / res[i] as f64).collect();
        let mut strides = Vec::with_capacity(d);
        let mut acc = 1;
        for &r in &res {
            strides.push(acc);
            acc *= r;
        }
        Ok(Grid {
            lo,
            hi,
            res,
            width,
            strides,
            len,
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn res(&self) -> &[usize] {
        &self.res
    }

    /// Box widths per coordinate.
    pub fn widths(&self) -> &[f64] {
        &self.width
    }

    pub fn num_boxes(&self) -> usize {
        self.len
    }

    /// Length of a box diagonal.
    pub fn diagonal(&self) -> f64 {
        self.width.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.diagonal()
    }

    /// Largest box width.
    pub fn max_width(&self) -> f64 {
        self.width.iter().copied().fold(0.0, f64::max)
    }

    /// Largest distance between two points of the rectangle.
    pub fn diameter(&self) -> f64 {
        (0..self.dim())
            .map(|i| (self.hi[i] - self.lo[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    pub fn unravel(&self, mut flat: usize) -> Index {
        let mut idx = Index::with_capacity(self.dim());
        for &r in &self.res {
            idx.push(flat % r);
            flat /= r;
        }
        idx
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        self.center_into(flat, &mut c);
        c
    }

    pub fn center_into(&self, mut flat: usize, out: &mut [f64]) {
        for i in 0..self.dim() {
            let k = flat % self.res[i];
            flat /= self.res[i];
            out[i] = self.lo[i] + (k as f64 + 0.5) * self.width[i];
        }
    }

    /// Lower and upper corners of a box.
    pub fn bounds(&self, flat: usize) -> (Vec<f64>, Vec<f64>) {
        let idx = self.unravel(flat);
        let lo = (0..self.dim())
            .map(|i| self.lo[i] + idx[i] as f64 * self.width[i])
            .collect();
        let hi = (0..self.dim())
            .map(|i| self.lo[i] + (idx[i] + 1) as f64 * self.width[i])
            .collect();
        (lo, hi)
    }

    /// Box containing `x`; points on a shared face go to the upper box,
    /// points on the upper edge of the rectangle to the last box.
    #[inline]
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut flat = 0;
        for i in 0..self.dim() {
            let v = x[i];
            if !(v >= self.lo[i] && v <= self.hi[i]) {
                return None;
            }
            let k = (((v - self.lo[i]) / self.width[i]) as usize).min(self.res[i] - 1);
            flat += k * self.strides[i];
        }
        Some(flat)
    }

    /// Whether the box lies on the edge of the grid rectangle.
    pub fn touches_edge(&self, flat: usize) -> bool {
        self.unravel(flat)
            .iter()
            .zip(&self.res)
            .any(|(&k, &r)| k == 0 || k + 1 == r)
    }

    /// Distance from `x` to the closed box `flat`.
    pub fn point_box_distance(&self, x: &[f64], flat: usize) -> f64 {
        let mut rest = flat;
        let mut d2 = 0.0;
        for i in 0..self.dim() {
            let k = rest % self.res[i];
            rest /= self.res[i];
            let lo = self.lo[i] + k as f64 * self.width[i];
            let hi = lo + self.width[i];
            let e = (lo - x[i]).max(x[i] - hi).max(0.0);
            d2 += e * e;
        }
        d2.sqrt()
    }

    /// Regular sample points inside box `flat`, `n` per coordinate, at
    /// cell-centred offsets `(j + 1/2) / n`.
    pub fn interior_samples(&self, flat: usize, n: usize) -> Vec<Vec<f64>> {
        self.samples(flat, n, |j, n| (j as f64 + 0.5) / n as f64)
    }

    /// Regular sample points including the corners (for `n >= 2`); a single
    /// sample is the centre.
    pub fn corner_samples(&self, flat: usize, n: usize) -> Vec<Vec<f64>> {
        if n <= 1 {
            return vec![self.center(flat)];
        }
        self.samples(flat, n, |j, n| j as f64 / (n - 1) as f64)
    }

    fn samples(&self, flat: usize, n: usize, frac: impl Fn(usize, usize) -> f64) -> Vec<Vec<f64>> {
        let n = n.max(1);
        let d = self.dim();
        let idx = self.unravel(flat);
        let total = n.pow(d as u32);
        (0..total)
            .map(|mut m| {
                (0..d)
                    .map(|i| {
                        let j = m % n;
                        m /= n;
                        self.lo[i] + (idx[i] as f64 + frac(j, n)) * self.width[i]
                    })
                    .collect()
            })
            .collect()
    }

    /// Index offsets to all 3^d - 1 face and corner neighbours.
    fn neighbour_offsets(&self) -> Vec<SmallVec<[isize; 4]>> {
        let d = self.dim();
        let mut out = Vec::new();
        for m in 0..3usize.pow(d as u32) {
            let mut r = m;
            let off: SmallVec<[isize; 4]> = (0..d)
                .map(|_| {
                    let o = (r % 3) as isize - 1;
                    r /= 3;
                    o
                })
                .collect();
            if off.iter().any(|&o| o != 0) {
                out.push(off);
            }
        }
        out
    }

    fn shift(&self, flat: usize, off: &[isize]) -> Option<usize> {
        let idx = self.unravel(flat);
        let mut out = 0;
        for i in 0..self.dim() {
            let k = idx[i] as isize + off[i];
            if k < 0 || k >= self.res[i] as isize {
                return None;
            }
            out += k as usize * self.strides[i];
        }
        Some(out)
    }
}

/// A subset of the boxes of a grid.
#[derive(Clone, PartialEq)]
pub struct BoxSet {
    grid: Arc<Grid>,
    bits: BitVec<usize, Lsb0>,
}

impl std::fmt::Debug for BoxSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoxSet")
            .field("res", &self.grid.res)
            .field("len", &self.len())
            .finish()
    }
}

impl BoxSet {
    pub fn empty(grid: Arc<Grid>) -> BoxSet {
        let bits = bitvec![usize, Lsb0; 0; grid.num_boxes()];
        BoxSet { grid, bits }
    }

    pub fn full(grid: Arc<Grid>) -> BoxSet {
        let bits = bitvec![usize, Lsb0; 1; grid.num_boxes()];
        BoxSet { grid, bits }
    }

    pub fn from_indices(grid: Arc<Grid>, flat: impl IntoIterator<Item = usize>) -> BoxSet {
        let mut s = BoxSet::empty(grid);
        for k in flat {
            s.insert(k);
        }
        s
    }

    /// Boxes whose centre satisfies `pred`.
    pub fn from_centers(grid: Arc<Grid>, pred: impl Fn(&[f64]) -> bool) -> BoxSet {
        let mut s = BoxSet::empty(grid.clone());
        let mut c = vec![0.0; grid.dim()];
        for k in 0..grid.num_boxes() {
            grid.center_into(k, &mut c);
            if pred(&c) {
                s.insert(k);
            }
        }
        s
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn insert(&mut self, flat: usize) {
        self.bits.set(flat, true);
    }

    pub fn remove(&mut self, flat: usize) {
        self.bits.set(flat, false);
    }

    #[inline]
    pub fn contains(&self, flat: usize) -> bool {
        self.bits[flat]
    }

    /// Whether the box containing `x` (see [`Grid::locate`]) is a member.
    #[inline]
    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.grid.locate(x).is_some_and(|k| self.bits[k])
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.not_any()
    }

    /// Member indices in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter_ones()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.iter().collect()
    }

    fn check_grid(&self, other: &BoxSet) {
        assert!(
            Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid,
            "box sets live on different grids"
        );
    }

    pub fn union(&self, other: &BoxSet) -> BoxSet {
        self.check_grid(other);
        BoxSet {
            grid: self.grid.clone(),
            bits: self.bits.clone() | &other.bits,
        }
    }

    pub fn intersection(&self, other: &BoxSet) -> BoxSet {
        self.check_grid(other);
        BoxSet {
            grid: self.grid.clone(),
            bits: self.bits.clone() & &other.bits,
        }
    }

    pub fn difference(&self, other: &BoxSet) -> BoxSet {
        self.check_grid(other);
        let mut bits = self.bits.clone();
        for k in other.iter() {
            bits.set(k, false);
        }
        BoxSet {
            grid: self.grid.clone(),
            bits,
        }
    }

    pub fn complement(&self) -> BoxSet {
        BoxSet {
            grid: self.grid.clone(),
            bits: !self.bits.clone(),
        }
    }

    pub fn is_subset(&self, other: &BoxSet) -> bool {
        self.check_grid(other);
        self.iter().all(|k| other.contains(k))
    }

    /// Whether any member lies on the edge of the grid rectangle.
    pub fn touches_domain_edge(&self) -> bool {
        self.iter().any(|k| self.grid.touches_edge(k))
    }

    /// Squared distance from every box centre to the nearest member centre
    /// (`f64::INFINITY` everywhere for the empty set).
    pub fn distance_field(&self) -> Vec<f64> {
        let g = &*self.grid;
        let mut f: Vec<f64> = self.bits.iter().map(|b| if *b { 0.0 } else { f64::INFINITY }).collect();
        if self.is_empty() {
            return f;
        }
        let mut line = Vec::new();
        let mut out = Vec::new();
        for axis in 0..g.dim() {
            let n = g.res[axis];
            let stride = g.strides[axis];
            let w2 = g.width[axis] * g.width[axis];
            for start in 0..g.len {
                // visit each line along `axis` once, from its first box
                if !(start / stride).is_multiple_of(n) {
                    continue;
                }
                line.clear();
                line.extend((0..n).map(|j| f[start + j * stride]));
                edt_1d(&line, w2, &mut out);
                for j in 0..n {
                    f[start + j * stride] = out[j];
                }
            }
        }
        f
    }

    /// Outer approximation of the open `delta`-neighbourhood: boxes whose
    /// centre is within `delta` plus half a diagonal of a member centre.
    pub fn dilate(&self, delta: f64) -> BoxSet {
        assert!(delta >= 0.0, "dilation radius must be nonnegative");
        let r = delta + self.grid.half_diagonal();
        let r2 = r * r * (1.0 + DIST_RTOL);
        let field = self.distance_field();
        let mut out = BoxSet::empty(self.grid.clone());
        for (k, d2) in field.iter().enumerate() {
            if *d2 <= r2 {
                out.insert(k);
            }
        }
        out
    }

    /// Members all of whose neighbours are members and which do not touch
    /// the edge of the grid rectangle.
    pub fn interior(&self) -> BoxSet {
        let offs = self.grid.neighbour_offsets();
        let mut out = BoxSet::empty(self.grid.clone());
        for k in self.iter() {
            if self.grid.touches_edge(k) {
                continue;
            }
            if offs
                .iter()
                .all(|o| self.grid.shift(k, o).is_some_and(|j| self.contains(j)))
            {
                out.insert(k);
            }
        }
        out
    }

    pub fn boundary(&self) -> BoxSet {
        self.difference(&self.interior())
    }

    /// One-sided Hausdorff semidistance `sup_{a in self} inf_{b in other} |a - b|`
    /// between box centres.
    pub fn semidist(&self, other: &BoxSet) -> Result<f64, GridError> {
        self.check_grid(other);
        if self.is_empty() || other.is_empty() {
            return Err(GridError::EmptySet);
        }
        let field = other.distance_field();
        Ok(self.iter().map(|k| field[k]).fold(0.0, f64::max).sqrt())
    }

    /// Symmetric Hausdorff distance between box centres.
    pub fn hausdorff(&self, other: &BoxSet) -> Result<f64, GridError> {
        Ok(self.semidist(other)?.max(other.semidist(self)?))
    }

    /// Supremum of the radii `delta` with `self.dilate(delta) ⊆ outer`.
    ///
    /// Returns `None` when `self` is not contained in `outer` even without
    /// dilation, and `f64::INFINITY` when `self` is empty or `outer` is the
    /// whole grid.
    pub fn dilation_margin(&self, outer: &BoxSet) -> Option<f64> {
        self.check_grid(outer);
        if self.is_empty() {
            return Some(f64::INFINITY);
        }
        let field = self.distance_field();
        let nearest_outside = outer
            .complement()
            .iter()
            .map(|k| field[k])
            .fold(f64::INFINITY, f64::min);
        let margin = nearest_outside.sqrt() - self.grid.half_diagonal();
        if margin > 0.0 {
            Some(margin)
        } else if self.dilate(0.0).is_subset(outer) {
            Some(0.0)
        } else {
            None
        }
    }

    /// CSV with one line per member: indices `i1..id`, then centre `x1..xd`.
    pub fn to_csv(&self) -> String {
        let d = self.grid.dim();
        let mut s = String::new();
        let header: Vec<String> = (1..=d)
            .map(|i| format!("i{i}"))
            .chain((1..=d).map(|i| format!("x{i}")))
            .collect();
        s.push_str(&header.join(","));
        s.push('\n');
        let mut c = vec![0.0; d];
        for k in self.iter() {
            self.write_row(k, &mut c, &mut s);
            s.push('\n');
        }
        s
    }

    pub(crate) fn write_row(&self, k: usize, c: &mut [f64], s: &mut String) {
        let idx = self.grid.unravel(k);
        self.grid.center_into(k, c);
        let mut first = true;
        for i in idx.iter() {
            if !first {
                s.push(',');
            }
            first = false;
            let _ = write!(s, "{i}");
        }
        for v in c.iter() {
            let _ = write!(s, ",{v}");
        }
    }

    /// Parse the output of [`BoxSet::to_csv`]; only the index columns are read.
    pub fn from_csv(grid: Arc<Grid>, text: &str) -> Result<BoxSet, String> {
        let d = grid.dim();
        let mut s = BoxSet::empty(grid.clone());
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let idx: Result<Vec<usize>, _> = line.split(',').take(d).map(|f| f.trim().parse()).collect();
            let idx = idx.map_err(|e| format!("line {}: {e}", line_no + 1))?;
            if idx.len() != d || idx.iter().zip(grid.res()).any(|(k, r)| k >= r) {
                return Err(format!("line {}: index out of range", line_no + 1));
            }
            s.insert(grid.ravel(&idx));
        }
        Ok(s)
    }
}

/// Exact 1-D lower envelope `out[q] = min_p (w2 (q - p)^2 + f[p])`.
fn edt_1d(f: &[f64], w2: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + w2 * (q * q) as f64;
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.clear();
                z.push(f64::NEG_INFINITY);
                break;
            };
            let fp = f[p] + w2 * (p * p) as f64;
            let s = (fq - fp) / (2.0 * w2 * (q - p) as f64);
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
                continue;
            }
            v.push(q);
            z.push(s);
            break;
        }
    }
    if v.is_empty() {
        return;
    }
    let mut j = 0;
    for q in 0..n {
        while j + 1 < v.len() && z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let dq = q as f64 - p as f64;
        out[q] = w2 * dq * dq + f[p];
    }
}

/// Boxes with at least one of their `samples_per_box^d` regularly spaced
/// sample points (corners included when `samples_per_box >= 2`) satisfying
/// `pred`.
pub fn cover(grid: Arc<Grid>, pred: impl Fn(&[f64]) -> bool, samples_per_box: usize) -> BoxSet {
    let mut s = BoxSet::empty(grid.clone());
    for k in 0..grid.num_boxes() {
        if grid.corner_samples(k, samples_per_box).iter().any(|p| pred(p)) {
            s.insert(k);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(lo: f64, hi: f64, res: usize) -> Arc<Grid> {
        Arc::new(Grid::new(vec![lo], vec![hi], vec![res]).unwrap())
    }

    fn brute_semidist(a: &BoxSet, b: &BoxSet) -> f64 {
        let g = a.grid();
        a.iter()
            .map(|i| {
                let ci = g.center(i);
                b.iter()
                    .map(|j| {
                        let cj = g.center(j);
                        ci.iter().zip(&cj).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    fn brute_dilate(s: &BoxSet, delta: f64) -> BoxSet {
        let g = s.grid().clone();
        let r = delta + g.half_diagonal();
        let mut out = BoxSet::empty(g.clone());
        for k in 0..g.num_boxes() {
            let ck = g.center(k);
            if s.iter().any(|j| {
                let cj = g.center(j);
                ck.iter().zip(&cj).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt() <= r * (1.0 + 1e-9)
            }) {
                out.insert(k);
            }
        }
        out
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(vec![0.0], vec![0.0], vec![4]).is_err());
        assert!(Grid::new(vec![0.0], vec![1.0], vec![0]).is_err());
        assert!(Grid::new(vec![0.0, 0.0], vec![1.0], vec![4]).is_err());
        assert!(matches!(
            Grid::new(vec![0.0; 2], vec![1.0; 2], vec![1 << 14, 1 << 13]),
            Err(GridError::TooLarge(_))
        ));
        let g = Grid::new(vec![-1.0, 0.0], vec![1.0, 3.0], vec![4, 6]).unwrap();
        assert_eq!(g.num_boxes(), 24);
        assert_eq!(g.widths(), &[0.5, 0.5]);
        let k = g.ravel(&[2, 3]);
        assert_eq!(g.unravel(k).as_slice(), &[2, 3]);
        assert_eq!(g.center(k), vec![0.25, 1.75]);
        assert_eq!(g.locate(&[0.25, 1.75]), Some(k));
        assert_eq!(g.locate(&[1.0, 3.0]), Some(g.num_boxes() - 1));
        assert_eq!(g.locate(&[1.01, 0.0]), None);
    }

    #[test]
    fn cover_examples() {
        let g = line(-1.0, 1.0, 8);
        assert_eq!(cover(g.clone(), |_| true, 2).len(), 8);
        // boxes 2..=5 span [-0.5, 0.5]; boxes 1 and 6 touch it at a corner
        let s = cover(g.clone(), |x| x[0].abs() <= 0.5, 3);
        assert_eq!(s.indices(), vec![1, 2, 3, 4, 5, 6]);
        let s = cover(g, |x| x[0].abs() <= 0.5, 1);
        assert_eq!(s.indices(), vec![2, 3, 4, 5]);
    }

    #[test]
    fn disk_cover_area() {
        let g = Arc::new(Grid::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![64, 64]).unwrap());
        let s = cover(g.clone(), |x| x[0] * x[0] + x[1] * x[1] <= 1.0, 3);
        let area = s.len() as f64 * g.widths()[0] * g.widths()[1];
        // Monte-Carlo oracle for the disk area on the same rectangle
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| {
                let (x, y): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                x * x + y * y <= 1.0
            })
            .count();
        let mc = 16.0 * hits as f64 / n as f64;
        assert!((area - mc).abs() / mc < 0.10, "area {area} vs {mc}");
        assert!(area >= mc * 0.99);
    }

    #[test]
    fn dilate_examples() {
        let g = line(0.0, 1.0, 20);
        let s = BoxSet::from_indices(g.clone(), [10]);
        assert_eq!(s.dilate(0.0), s);
        let h = g.widths()[0];
        assert_eq!(s.dilate(1.5 * h).indices(), vec![8, 9, 10, 11, 12]);
        let g2 = Arc::new(Grid::new(vec![0.0; 2], vec![1.0; 2], vec![10, 10]).unwrap());
        let s2 = BoxSet::from_indices(g2.clone(), [g2.ravel(&[3, 3]), g2.ravel(&[7, 2])]);
        assert_eq!(s2.dilate(0.0), s2);
    }

    #[test]
    fn interior_and_boundary() {
        let g = line(-1.0, 1.0, 8);
        let s = BoxSet::from_indices(g.clone(), 2..=5);
        assert_eq!(s.interior().indices(), vec![3, 4]);
        assert_eq!(s.boundary().indices(), vec![2, 5]);
        let full = BoxSet::full(g);
        assert_eq!(full.interior().indices(), vec![1, 2, 3, 4, 5, 6]);
        let g2 = Arc::new(Grid::new(vec![0.0; 2], vec![1.0; 2], vec![3, 3]).unwrap());
        // only the middle box is off the edge, and it has all neighbours
        assert_eq!(BoxSet::full(g2.clone()).interior().indices(), vec![4]);
        let g3 = Arc::new(Grid::new(vec![0.0; 2], vec![1.0; 2], vec![2, 2]).unwrap());
        assert!(BoxSet::full(g3).interior().is_empty());
    }

    #[test]
    fn semidist_examples() {
        // centres at 0.0, 0.5, 1.0 on a grid of width 0.5
        let g = line(-0.25, 1.25, 3);
        let a = BoxSet::from_indices(g.clone(), [0]);
        let b = BoxSet::from_indices(g.clone(), [1, 2]);
        assert_eq!(a.semidist(&a).unwrap(), 0.0);
        assert!((a.semidist(&b).unwrap() - 0.5).abs() < 1e-15);
        assert!((b.semidist(&a).unwrap() - 1.0).abs() < 1e-15);
        let c = BoxSet::from_indices(g.clone(), [2]);
        assert!((a.semidist(&c).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(a.semidist(&BoxSet::empty(g)).unwrap_err(), GridError::EmptySet);
    }

    #[test]
    fn csv_round_trip() {
        let g = Arc::new(Grid::new(vec![0.0; 2], vec![1.0, 2.0], vec![4, 5]).unwrap());
        let s = BoxSet::from_indices(g.clone(), [0, 7, 19]);
        let text = s.to_csv();
        assert!(text.starts_with("i1,i2,x1,x2\n"));
        assert_eq!(BoxSet::from_csv(g, &text).unwrap(), s);
    }

    #[test]
    fn dilation_margin_matches_search() {
        let g = line(0.0, 1.0, 50);
        let inner = BoxSet::from_indices(g.clone(), 20..25);
        let outer = BoxSet::from_indices(g.clone(), 15..33);
        let m = inner.dilation_margin(&outer).unwrap();
        assert!(inner.dilate(m * 0.999).is_subset(&outer));
        assert!(!inner.dilate(m * 1.001 + 1e-12).is_subset(&outer));
        let off = BoxSet::from_indices(g.clone(), 0..3);
        assert_eq!(off.dilation_margin(&outer), None);
    }

    fn arb_set(res: (usize, usize)) -> impl Strategy<Value = BoxSet> {
        let g = Arc::new(Grid::new(vec![-1.0, 0.0], vec![1.0, 1.5], vec![res.0, res.1]).unwrap());
        prop::collection::vec(any::<bool>(), res.0 * res.1).prop_map(move |bits| {
            BoxSet::from_indices(g.clone(), bits.iter().enumerate().filter(|b| *b.1).map(|b| b.0))
        })
    }

    fn pair() -> impl Strategy<Value = (BoxSet, BoxSet)> {
        (arb_set((9, 7)), prop::collection::vec(any::<bool>(), 63)).prop_map(|(a, bits)| {
            let b = BoxSet::from_indices(a.grid().clone(), bits.iter().enumerate().filter(|b| *b.1).map(|b| b.0));
            (a, b)
        })
    }

    proptest! {
        #[test]
        fn de_morgan((a, b) in pair()) {
            prop_assert_eq!(a.union(&b).complement(), a.complement().intersection(&b.complement()));
            prop_assert_eq!(a.intersection(&b).complement(), a.complement().union(&b.complement()));
            prop_assert_eq!(a.difference(&b), a.intersection(&b.complement()));
        }

        #[test]
        fn distance_transform_is_exact((a, b) in pair(), delta in 0.0f64..0.8) {
            if !a.is_empty() && !b.is_empty() {
                let fast = a.semidist(&b).unwrap();
                prop_assert!((fast - brute_semidist(&a, &b)).abs() < 1e-12);
            }
            prop_assert_eq!(a.dilate(delta), brute_dilate(&a, delta));
        }

        #[test]
        fn dilate_monotone((a, b) in pair(), delta in 0.0f64..0.5) {
            let ab = a.union(&b);
            prop_assert!(a.dilate(delta).is_subset(&ab.dilate(delta)));
            prop_assert!(a.is_subset(&a.dilate(0.0)));
        }

        #[test]
        fn dilate_composition((a, _b) in pair(), x in 0.0f64..0.4, y in 0.0f64..0.4) {
            let diag = a.grid().diagonal();
            let twice = a.dilate(x).dilate(y);
            prop_assert!(a.dilate((x + y - diag).max(0.0)).is_subset(&twice));
        }

        #[test]
        fn interior_boundary_partition((a, _b) in pair()) {
            let int = a.interior();
            prop_assert!(int.is_subset(&a));
            prop_assert_eq!(a.boundary().union(&int), a.clone());
            prop_assert!(a.boundary().intersection(&int).is_empty());
        }
    }

    #[test]
    fn interior_of_dilation_contains_set() {
        let g = Arc::new(Grid::new(vec![0.0; 2], vec![1.0; 2], vec![40, 40]).unwrap());
        let s = BoxSet::from_centers(g.clone(), |x| (x[0] - 0.5).powi(2) + (x[1] - 0.45).powi(2) < 0.04);
        assert!(s.is_subset(&s.dilate(2.0 * g.diagonal()).interior()));
    }
}
