//! Tensor-product cubic B-splines with not-a-knot end conditions on
//! rectangular grids of one to three dimensions, replicated per discrete
//! shock index.
//!
//! Evaluation is generic over [`Real`] so that derivatives with respect to
//! the evaluation point propagate through dual numbers. Outside the node
//! hull the field continues linearly from the boundary value and slope, and
//! the evaluation reports that it extrapolated.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::real::{Dual, Real};

pub const MAX_DIMS: usize = 3;
const MAX_STENCIL: usize = 64;

#[derive(Debug, Clone)]
pub struct Axis {
    nodes: Vec<f64>,
    knots: Vec<f64>,
    /// Inverse of the collocation matrix `B[i][j] = N_j(x_i)`.
    inverse: DMatrix<f64>,
}

impl PartialEq for Axis {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
    }
}

impl Axis {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        let n = nodes.len();
        if n < 4 {
            return Err(Error::Config(format!("spline axis needs at least 4 nodes, got {n}")));
        }
        if nodes.iter().any(|v| !v.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("spline axis nodes must be finite and strictly increasing".into()));
        }
        let mut knots = vec![nodes[0]; 4];
        knots.extend_from_slice(&nodes[2..n - 2]);
        knots.extend(std::iter::repeat(nodes[n - 1]).take(4));
        let mut axis = Axis {
            nodes,
            knots,
            inverse: DMatrix::zeros(0, 0),
        };
        let mut b = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let (span, w, _) = axis.basis(axis.nodes[i]);
            for (r, wr) in w.iter().enumerate() {
                b[(i, span - 3 + r)] = *wr;
            }
        }
        axis.inverse = b
            .try_inverse()
            .ok_or_else(|| Error::Config("singular spline collocation matrix".into()))?;
        Ok(axis)
    }

    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("axis needs at least 2 nodes".into()));
        }
        Self::new((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
    }

    /// Nodes equally spaced in logs between `lo > 0` and `hi`.
    pub fn geometric(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && n >= 2) {
            return Err(Error::Config(format!("invalid geometric axis [{lo}, {hi}] with {n} nodes")));
        }
        let step = (hi / lo).ln() / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| lo * (step * i as f64).exp()).collect();
        nodes[n - 1] = hi;
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Identity inside `[lo, hi]`; outside, saturates smoothly within one
    /// mean node spacing of the boundary (`hi + h tanh((x - hi)/h)`). Used to
    /// keep continuation lookups from extrapolating far off the grid.
    pub fn soft_clamp<T: Real>(&self, x: T) -> T {
        let h = (self.hi() - self.lo()) / (self.nodes.len() - 1) as f64;
        let v = x.re();
        let (edge, u) = if v > self.hi() {
            (self.hi(), (v - self.hi()) / h)
        } else if v < self.lo() {
            (self.lo(), (v - self.lo()) / h)
        } else {
            return x;
        };
        let t = u.tanh();
        x.chain(edge + h * t, 1.0 - t * t)
    }

    fn span(&self, x: f64) -> usize {
        let n = self.nodes.len();
        // Valid spans are 3..=n-1 with knots[span] <= x < knots[span+1].
        let (mut lo, mut hi) = (3usize, n - 1);
        if x >= self.knots[n - 1] {
            return n - 1;
        }
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Nonzero cubic basis functions at `x` (indices `span-3..=span`) and
    /// their first derivatives.
    fn basis<T: Real>(&self, x: T) -> (usize, [T; 4], [T; 4]) {
        let t = &self.knots;
        let span = self.span(x.re());
        let zero = T::cst(0.0);
        let mut left = [zero; 4];
        let mut right = [zero; 4];
        let mut n = [zero; 4];
        let mut n2 = [zero; 3];
        n[0] = T::cst(1.0);
        for j in 1..=3 {
            left[j] = x - t[span + 1 - j];
            right[j] = -x + t[span + j];
            let mut saved = zero;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
            if j == 2 {
                n2.copy_from_slice(&n[..3]);
            }
        }
        let mut d = [zero; 4];
        for r in 0..4 {
            let i = span - 3 + r;
            let mut v = zero;
            if r >= 1 {
                let den = t[i + 3] - t[i];
                if den > 0.0 {
                    v += n2[r - 1] * (3.0 / den);
                }
            }
            if r <= 2 {
                let den = t[i + 4] - t[i + 1];
                if den > 0.0 {
                    v -= n2[r] * (3.0 / den);
                }
            }
            d[r] = v;
        }
        (span, n, d)
    }
}

/// A rectangular tensor grid; the coefficient layout is row-major with the
/// last axis varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
    strides: Vec<usize>,
    size: usize,
}

/// Coefficient indices and weights such that `f(x) = sum w_i c[idx_i]`.
#[derive(Clone, Copy)]
pub struct Stencil<T> {
    pub idx: [usize; MAX_STENCIL],
    pub w: [T; MAX_STENCIL],
    pub len: usize,
    pub extrapolated: bool,
}

impl<T: Real> Stencil<T> {
    #[inline]
    pub fn apply(&self, coeffs: &[f64]) -> T {
        let mut acc = T::cst(0.0);
        for k in 0..self.len {
            acc += self.w[k] * coeffs[self.idx[k]];
        }
        acc
    }
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > MAX_DIMS {
            return Err(Error::Config(format!(
                "spline grids support 1 to {MAX_DIMS} dimensions, got {}",
                axes.len()
            )));
        }
        let mut strides = vec![1; axes.len()];
        for d in (0..axes.len() - 1).rev() {
            strides[d] = strides[d + 1] * axes[d + 1].len();
        }
        let size = axes.iter().map(Axis::len).product();
        Ok(Grid { axes, strides, size })
    }

    pub fn from_nodes(nodes: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(nodes.into_iter().map(Axis::new).collect::<Result<_>>()?)
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, d: usize) -> &Axis {
        &self.axes[d]
    }

    /// Number of tensor nodes (and coefficients per shock).
    pub fn size(&self) -> usize {
        self.size
    }

    /// Multi-index of flat node `i`.
    pub fn unflatten(&self, mut i: usize) -> [usize; MAX_DIMS] {
        let mut out = [0; MAX_DIMS];
        for d in 0..self.dims() {
            out[d] = i / self.strides[d];
            i %= self.strides[d];
        }
        out
    }

    /// Coordinates of flat node `i`.
    pub fn point(&self, i: usize) -> [f64; MAX_DIMS] {
        let m = self.unflatten(i);
        let mut x = [0.0; MAX_DIMS];
        for d in 0..self.dims() {
            x[d] = self.axes[d].nodes[m[d]];
        }
        x
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.axes
            .iter()
            .zip(x)
            .all(|(a, v)| *v >= a.lo() && *v <= a.hi())
    }

    pub fn stencil<T: Real>(&self, x: &[T]) -> Stencil<T> {
        let dims = self.dims();
        debug_assert!(x.len() >= dims);
        let zero = T::cst(0.0);
        let mut spans = [0usize; MAX_DIMS];
        let mut w1 = [[zero; 4]; MAX_DIMS];
        let mut extrapolated = false;
        for d in 0..dims {
            let a = &self.axes[d];
            let xv = x[d].re();
            if xv < a.lo() || xv > a.hi() || !xv.is_finite() {
                extrapolated = true;
                let c = if xv.is_nan() { a.lo() } else { xv.clamp(a.lo(), a.hi()) };
                let (s, v, dv) = a.basis(c);
                let delta = x[d] - c;
                spans[d] = s;
                for r in 0..4 {
                    w1[d][r] = delta * dv[r] + v[r];
                }
            } else {
                let (s, v, _) = a.basis(x[d]);
                spans[d] = s;
                w1[d] = v;
            }
        }
        // Per-axis continuations multiply, so the field is linear along each
        // clamped coordinate separately.
        let mut st = Stencil {
            idx: [0; MAX_STENCIL],
            w: [zero; MAX_STENCIL],
            len: 0,
            extrapolated,
        };
        let count = 4usize.pow(dims as u32);
        for k in 0..count {
            let mut idx = 0;
            let mut w = T::cst(1.0);
            let mut rem = k;
            for d in (0..dims).rev() {
                let r = rem % 4;
                rem /= 4;
                idx += (spans[d] - 3 + r) * self.strides[d];
                w *= w1[d][r];
            }
            st.idx[k] = idx;
            st.w[k] = w;
        }
        st.len = count;
        st
    }

    /// Interpolation coefficients for one block of node values.
    pub fn fit_block(&self, values: &[f64], out: &mut [f64]) {
        debug_assert_eq!(values.len(), self.size);
        out.copy_from_slice(values);
        let mut line = Vec::new();
        let mut res = Vec::new();
        for d in 0..self.dims() {
            let n = self.axes[d].len();
            let stride = self.strides[d];
            let inv = &self.axes[d].inverse;
            line.resize(n, 0.0);
            res.resize(n, 0.0);
            for base in 0..self.size {
                if (base / stride) % n != 0 {
                    continue;
                }
                for i in 0..n {
                    line[i] = out[base + i * stride];
                }
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += inv[(i, j)] * line[j];
                    }
                    res[i] = acc;
                }
                for i in 0..n {
                    out[base + i * stride] = res[i];
                }
            }
        }
    }
}

/// A scalar function of the continuous state, one coefficient block per
/// shock index.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineField {
    grid: Arc<Grid>,
    n_shocks: usize,
    coeffs: Vec<f64>,
}

impl SplineField {
    /// Interpolates `values`, laid out shock-major with each block in the
    /// grid's node order.
    pub fn fit(grid: Arc<Grid>, n_shocks: usize, values: &[f64]) -> Result<Self> {
        let m = grid.size();
        if n_shocks == 0 || values.len() != m * n_shocks {
            return Err(Error::Config(format!(
                "spline fit expects {} values ({} shocks x {m} nodes), got {}",
                m * n_shocks,
                n_shocks,
                values.len()
            )));
        }
        let mut coeffs = vec![0.0; values.len()];
        for s in 0..n_shocks {
            grid.fit_block(&values[s * m..(s + 1) * m], &mut coeffs[s * m..(s + 1) * m]);
        }
        Ok(SplineField { grid, n_shocks, coeffs })
    }

    pub fn from_fn(grid: Arc<Grid>, n_shocks: usize, f: impl Fn(usize, &[f64]) -> f64) -> Result<Self> {
        let m = grid.size();
        let mut values = Vec::with_capacity(m * n_shocks);
        for s in 0..n_shocks {
            for i in 0..m {
                values.push(f(s, &grid.point(i)[..grid.dims()]));
            }
        }
        Self::fit(grid, n_shocks, &values)
    }

    pub fn constant(grid: Arc<Grid>, n_shocks: usize, v: f64) -> Self {
        let m = grid.size();
        // B-spline bases form a partition of unity.
        SplineField {
            grid,
            n_shocks,
            coeffs: vec![v; m * n_shocks],
        }
    }

    pub fn from_coeffs(grid: Arc<Grid>, n_shocks: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.size() * n_shocks {
            return Err(Error::Format("coefficient count does not match the grid".into()));
        }
        Ok(SplineField { grid, n_shocks, coeffs })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn n_shocks(&self) -> usize {
        self.n_shocks
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn block(&self, shock: usize) -> &[f64] {
        let m = self.grid.size();
        &self.coeffs[shock * m..(shock + 1) * m]
    }

    fn check_shock(&self, shock: usize) -> Result<()> {
        if shock >= self.n_shocks {
            return Err(Error::Config(format!(
                "shock index {shock} out of range (field has {})",
                self.n_shocks
            )));
        }
        Ok(())
    }

    /// Value and extrapolation flag.
    pub fn eval(&self, shock: usize, x: &[f64]) -> Result<(f64, bool)> {
        self.check_shock(shock)?;
        let st = self.grid.stencil(x);
        Ok((st.apply(self.block(shock)), st.extrapolated))
    }

    pub fn eval_deriv(&self, shock: usize, x: &[f64], dim: usize) -> Result<(f64, bool)> {
        self.check_shock(shock)?;
        if dim >= self.grid.dims() {
            return Err(Error::Config(format!("dimension {dim} out of range")));
        }
        let mut xd = [Dual::<1>::constant(0.0); MAX_DIMS];
        for d in 0..self.grid.dims() {
            xd[d] = if d == dim { Dual::var(x[d], 0) } else { Dual::constant(x[d]) };
        }
        let st = self.grid.stencil(&xd[..self.grid.dims()]);
        Ok((st.apply(self.block(shock)).d[0], st.extrapolated))
    }

    /// Unchecked generic evaluation for solver inner loops.
    #[inline]
    pub fn value<T: Real>(&self, shock: usize, x: &[T]) -> T {
        self.grid.stencil(x).apply(self.block(shock))
    }

    /// Values at the grid nodes, shock-major.
    pub fn node_values(&self) -> Vec<f64> {
        let m = self.grid.size();
        let mut out = Vec::with_capacity(m * self.n_shocks);
        for s in 0..self.n_shocks {
            for i in 0..m {
                let p = self.grid.point(i);
                out.push(self.value(s, &p[..self.grid.dims()]));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(n: usize) -> Arc<Grid> {
        Arc::new(Grid::new(vec![Axis::uniform(0.0, 1.0, n).unwrap()]).unwrap())
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(Axis::new(vec![0.0, 1.0, 2.0]).is_err());
        assert!(Axis::new(vec![0.0, 1.0, 1.0, 2.0]).is_err());
        let g = grid1(5);
        assert!(SplineField::fit(g, 1, &[1.0; 4]).is_err());
    }

    #[test]
    fn constant_field() {
        let g = Arc::new(
            Grid::new(vec![
                Axis::uniform(0.0, 1.0, 5).unwrap(),
                Axis::new(vec![0.0, 0.1, 0.5, 0.7, 2.0]).unwrap(),
            ])
            .unwrap(),
        );
        let f = SplineField::fit(g.clone(), 2, &vec![3.0; 50]).unwrap();
        for x in [[0.3, 0.2], [0.99, 1.7], [0.0, 0.0]] {
            assert!((f.eval(1, &x).unwrap().0 - 3.0).abs() < 1e-12);
            assert!(f.eval_deriv(0, &x, 1).unwrap().0.abs() < 1e-12);
        }
        assert!(f.eval(2, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn reproduces_cubics() {
        let g = Arc::new(Grid::new(vec![Axis::new(vec![0.0, 0.1, 0.35, 0.5, 0.8, 1.0]).unwrap()]).unwrap());
        let f = SplineField::from_fn(g, 1, |_, x| x[0].powi(3) - 2.0 * x[0] + 0.5).unwrap();
        for k in 0..100 {
            let x = (k as f64 + 0.37) / 100.0;
            let want = x.powi(3) - 2.0 * x + 0.5;
            assert!((f.eval(0, &[x]).unwrap().0 - want).abs() < 1e-9);
            let dw = 3.0 * x * x - 2.0;
            assert!((f.eval_deriv(0, &[x], 0).unwrap().0 - dw).abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_derivative() {
        let f = SplineField::from_fn(grid1(7), 1, |_, x| x[0] * x[0]).unwrap();
        assert!((f.eval_deriv(0, &[0.5], 0).unwrap().0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn linear_midpoint() {
        let f = SplineField::from_fn(grid1(6), 1, |_, x| 2.0 * x[0] - 1.0).unwrap();
        assert!((f.eval(0, &[0.3]).unwrap().0 - (-0.4)).abs() < 1e-12);
    }

    #[test]
    fn extrapolation_is_linear_and_flagged() {
        let f = SplineField::from_fn(grid1(6), 1, |_, x| x[0] * x[0]).unwrap();
        let (v, flag) = f.eval(0, &[1.5]).unwrap();
        assert!(flag);
        assert!((v - (1.0 + 2.0 * 0.5)).abs() < 1e-9);
        assert!(!f.eval(0, &[1.0]).unwrap().1);
    }

    #[test]
    fn bilinear_cubic_product_3d() {
        let g = Arc::new(
            Grid::new(vec![
                Axis::uniform(0.0, 1.0, 5).unwrap(),
                Axis::uniform(-1.0, 1.0, 6).unwrap(),
                Axis::uniform(2.0, 3.0, 4).unwrap(),
            ])
            .unwrap(),
        );
        let h = |x: &[f64]| x[0].powi(3) * x[1] * x[1] - x[2] * x[0] + x[1].powi(3) * x[2].powi(2);
        let f = SplineField::from_fn(g, 1, |_, x| h(x)).unwrap();
        for k in 0..50 {
            let t = k as f64 / 50.0;
            let x = [t, -1.0 + 1.9 * ((t * 7.3) % 1.0), 2.0 + (t * 3.1) % 1.0];
            assert!((f.eval(0, &x).unwrap().0 - h(&x)).abs() < 1e-9);
        }
    }

    #[test]
    fn node_values_round_trip() {
        let g = Arc::new(
            Grid::new(vec![Axis::uniform(0.0, 1.0, 6).unwrap(), Axis::uniform(0.0, 1.0, 5).unwrap()]).unwrap(),
        );
        let vals: Vec<f64> = (0..60).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let f = SplineField::fit(g, 2, &vals).unwrap();
        for (a, b) in f.node_values().iter().zip(&vals) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }
}
