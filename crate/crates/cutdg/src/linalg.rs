//! Sparse symmetric kernel: CG, extremal eigenvalues, condition numbers.
//!
//! Matrices store the lower triangle in compressed rows and mirror it on
//! apply. Extremal eigenvalues come from a dense solver at small sizes
//! (also the test oracle) or from full-reorthogonalized Lanczos; the
//! smallest nonzero eigenvalue of a singular matrix is reached through
//! the pseudo-inverse, applied exactly by an envelope LDL^T factorization
//! of the kernel-pinned reduced system under a reverse Cuthill-McKee
//! ordering.

use nalgebra::{DMatrix, SymmetricEigen};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("CG did not converge in {iters} iterations (relative residual {residual:e})")]
    CgNonConvergence { iters: usize, residual: f64 },
    #[error("Lanczos did not converge in {iters} iterations (last Ritz change {change:e})")]
    LanczosNonConvergence { iters: usize, change: f64 },
    #[error("zero pivot at elimination step {index} (value {value:e})")]
    SingularPivot { index: usize, value: f64 },
}

/// Anything that can act as a symmetric operator on vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Symmetric sparse matrix; compressed rows of the lower triangle,
/// mirrored on apply, with a dense diagonal cache.
#[derive(Debug, Clone)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl SparseSym {
    /// Build from raw triplets covering both triangles.
    ///
    /// Duplicates are summed in emission order (stable sort), the two
    /// triangles are checked against each other, and the lower one is
    /// kept. Returns the matrix and the measured asymmetry
    /// `max |A_ij - A_ji|`.
    pub fn from_triplets_symmetric(n: usize, mut triplets: Vec<(u32, u32, f64)>) -> (Self, f64) {
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut coalesced: Vec<(u32, u32, f64)> = Vec::with_capacity(triplets.len());
        for (i, j, v) in triplets {
            match coalesced.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => coalesced.push((i, j, v)),
            }
        }

        // Compare the strict upper triangle against the strict lower one.
        let mut upper: Vec<(u32, u32, f64)> = coalesced
            .iter()
            .filter(|&&(i, j, _)| j > i)
            .map(|&(i, j, v)| (j, i, v))
            .collect();
        upper.sort_by_key(|&(i, j, _)| (i, j));
        let lower: Vec<(u32, u32, f64)> = coalesced
            .iter()
            .filter(|&&(i, j, _)| j <= i)
            .copied()
            .collect();

        let mut asymmetry = 0.0f64;
        {
            let (mut a, mut b) = (0, 0);
            while a < lower.len() || b < upper.len() {
                let ka = lower
                    .get(a)
                    .map(|&(i, j, _)| (i, j))
                    .unwrap_or((u32::MAX, u32::MAX));
                if ka.0 == ka.1 && a < lower.len() {
                    a += 1; // diagonal mirrors itself
                    continue;
                }
                let kb = upper
                    .get(b)
                    .map(|&(i, j, _)| (i, j))
                    .unwrap_or((u32::MAX, u32::MAX));
                match ka.cmp(&kb) {
                    std::cmp::Ordering::Equal => {
                        asymmetry = asymmetry.max((lower[a].2 - upper[b].2).abs());
                        a += 1;
                        b += 1;
                    }
                    std::cmp::Ordering::Less => {
                        asymmetry = asymmetry.max(lower[a].2.abs());
                        a += 1;
                    }
                    std::cmp::Ordering::Greater => {
                        asymmetry = asymmetry.max(upper[b].2.abs());
                        b += 1;
                    }
                }
            }
        }

        let mut row_ptr = vec![0usize; n + 1];
        for &(i, _, _) in &lower {
            row_ptr[i as usize + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut cols = vec![0u32; lower.len()];
        let mut vals = vec![0.0f64; lower.len()];
        let mut cursor = row_ptr.clone();
        let mut diag = vec![0.0f64; n];
        for (i, j, v) in lower {
            let slot = cursor[i as usize];
            cols[slot] = j;
            vals[slot] = v;
            cursor[i as usize] += 1;
            if i == j {
                diag[i as usize] = v;
            }
        }

        (
            Self {
                n,
                row_ptr,
                cols,
                vals,
                diag,
            },
            asymmetry,
        )
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let n = m.nrows();
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] != 0.0 {
                    triplets.push((i as u32, j as u32, m[(i, j)]));
                }
            }
        }
        Self::from_triplets_symmetric(n, triplets).0
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_lower(&self) -> usize {
        self.vals.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Column indices and values of the stored lower-triangle row.
    pub fn lower_row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.lower_row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j as usize)] = v;
                m[(j as usize, i)] = v;
            }
        }
        m
    }

    /// Frobenius norm (mirrored entries counted on both sides).
    pub fn frobenius_norm(&self) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.lower_row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                sum += if j as usize == i { v * v } else { 2.0 * v * v };
            }
        }
        sum.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Entrywise sum with another matrix of the same dimension.
    pub fn add(&self, other: &SparseSym) -> SparseSym {
        assert_eq!(self.n, other.n);
        let mut triplets = Vec::with_capacity(self.vals.len() + other.vals.len());
        for m in [self, other] {
            for i in 0..m.n {
                let (cols, vals) = m.lower_row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    triplets.push((i as u32, j, v));
                }
            }
        }
        Self::from_triplets_symmetric(self.n, triplets).0
    }

    /// Inverse diagonal for Jacobi preconditioning; non-positive entries
    /// fall back to 1.
    pub fn jacobi_inverse_diagonal(&self) -> Vec<f64> {
        self.diag
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect()
    }

    /// Symmetric diagonal scaling `D^{-1/2} A D^{-1/2}`; returns the
    /// scaled matrix and the `sqrt(diag)` vector used.
    pub fn jacobi_scaled(&self) -> (SparseSym, Vec<f64>) {
        let sqrt_d: Vec<f64> = self
            .diag
            .iter()
            .map(|&d| if d > 0.0 { d.sqrt() } else { 1.0 })
            .collect();
        let mut scaled = self.clone();
        for i in 0..self.n {
            let span = self.row_ptr[i]..self.row_ptr[i + 1];
            for idx in span {
                let j = scaled.cols[idx] as usize;
                scaled.vals[idx] /= sqrt_d[i] * sqrt_d[j];
            }
            scaled.diag[i] = self.diag[i] / (sqrt_d[i] * sqrt_d[i]);
        }
        (scaled, sqrt_d)
    }

    /// Coordinate-format text dump of the full matrix, sorted by (row, col).
    pub fn dump_coo(&self, out: &mut impl Write) -> io::Result<()> {
        let mut entries = Vec::with_capacity(2 * self.vals.len());
        for i in 0..self.n {
            let (cols, vals) = self.lower_row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                entries.push((i as u32, j, v));
                if j as usize != i {
                    entries.push((j, i as u32, v));
                }
            }
        }
        entries.sort_by_key(|&(i, j, _)| (i, j));
        for (i, j, v) in entries {
            writeln!(out, "{} {} {:.16e}", i, j, v)?;
        }
        Ok(())
    }
}

impl LinearOperator for SparseSym {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for i in 0..self.n {
            let (cols, vals) = self.lower_row(i);
            let xi = x[i];
            let mut yi = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                let j = j as usize;
                yi += v * x[j];
                if j != i {
                    y[j] += v * xi;
                }
            }
            y[i] += yi;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Remove the component along a unit vector.
fn project_out(x: &mut [f64], unit: &[f64]) {
    let c = dot(x, unit);
    for (xi, ui) in x.iter_mut().zip(unit) {
        *xi -= c * ui;
    }
}

pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Preconditioned conjugate gradients with optional kernel deflation.
///
/// `inv_diag` supplies the Jacobi preconditioner; `deflate` is a unit
/// kernel vector kept out of every iterate so the solve acts on the
/// orthogonal complement.
pub fn cg_solve(
    op: &dyn LinearOperator,
    b: &[f64],
    inv_diag: Option<&[f64]>,
    deflate: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<CgResult, LinalgError> {
    let n = op.dim();
    let mut rhs = b.to_vec();
    if let Some(v) = deflate {
        project_out(&mut rhs, v);
    }
    let b_norm = norm(&rhs);
    if b_norm == 0.0 {
        return Ok(CgResult {
            x: vec![0.0; n],
            iterations: 0,
            rel_residual: 0.0,
        });
    }

    let apply_precond = |z: &mut [f64], r: &[f64]| match inv_diag {
        Some(d) => {
            for i in 0..r.len() {
                z[i] = d[i] * r[i];
            }
        }
        None => z.copy_from_slice(r),
    };

    let mut x = vec![0.0; n];
    let mut r = rhs;
    let mut z = vec![0.0; n];
    apply_precond(&mut z, &r);
    if let Some(v) = deflate {
        project_out(&mut z, v);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = norm(&r) / b_norm;

    for it in 0..=max_iter {
        if rel <= tol {
            return Ok(CgResult {
                x,
                iterations: it,
                rel_residual: rel,
            });
        }
        if it == max_iter {
            break;
        }
        op.apply(&p, &mut ap);
        if let Some(v) = deflate {
            project_out(&mut ap, v);
        }
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(LinalgError::CgNonConvergence {
                iters: it,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if let Some(v) = deflate {
            project_out(&mut r, v);
            project_out(&mut x, v);
        }
        apply_precond(&mut z, &r);
        if let Some(v) = deflate {
            project_out(&mut z, v);
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = norm(&r) / b_norm;
    }
    Err(LinalgError::CgNonConvergence {
        iters: max_iter,
        residual: rel,
    })
}

/// Reverse Cuthill-McKee ordering of the matrix graph; `perm[new] = old`.
fn rcm_order(a: &SparseSym) -> Vec<u32> {
    let n = a.n;
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for i in 0..n {
        let (cols, _) = a.lower_row(i);
        for &j in cols {
            if j as usize != i {
                adj[i].push(j);
                adj[j as usize].push(i as u32);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|l| l.len()).collect();

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    loop {
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i));
        let Some(start) = start else { break };
        visited[start] = true;
        queue.push_back(start as u32);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<u32> = adj[u as usize]
                .iter()
                .copied()
                .filter(|&v| !visited[v as usize])
                .collect();
            nbrs.sort_by_key(|&v| (degree[v as usize], v));
            for v in nbrs {
                visited[v as usize] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Envelope (skyline) LDL^T factorization under an RCM permutation.
///
/// With `pin_kernel`, the last permuted row/column is omitted: for a
/// symmetric PSD matrix with one-dimensional kernel every proper
/// principal submatrix is definite, so the reduced solve combined with
/// kernel projection realizes the exact pseudo-inverse action.
pub struct EnvelopeLdl {
    n_full: usize,
    m: usize,
    inv_perm: Vec<u32>,
    first: Vec<usize>,
    offsets: Vec<usize>,
    lvals: Vec<f64>,
    d: Vec<f64>,
}

impl EnvelopeLdl {
    pub fn factor(a: &SparseSym, pin_kernel: bool) -> Result<Self, LinalgError> {
        let n = a.n;
        let m = if pin_kernel { n - 1 } else { n };
        let perm = rcm_order(a);
        let mut inv_perm = vec![0u32; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old as usize] = new as u32;
        }

        // Profile: lowest structural column per permuted row.
        let mut first: Vec<usize> = (0..m).collect();
        let mut permuted: Vec<(usize, usize, f64)> = Vec::with_capacity(a.nnz_lower());
        for i in 0..n {
            let (cols, vals) = a.lower_row(i);
            let ip = inv_perm[i] as usize;
            for (&j, &v) in cols.iter().zip(vals) {
                let jp = inv_perm[j as usize] as usize;
                let (r, c) = (ip.max(jp), ip.min(jp));
                if r < m {
                    first[r] = first[r].min(c);
                    permuted.push((r, c, v));
                }
            }
        }

        let mut offsets = vec![0usize; m + 1];
        for i in 0..m {
            offsets[i + 1] = offsets[i] + (i - first[i]);
        }
        let mut lvals = vec![0.0f64; offsets[m]];
        let mut d = vec![0.0f64; m];
        for (r, c, v) in permuted {
            if c == r {
                d[r] = v;
            } else {
                lvals[offsets[r] + (c - first[r])] = v;
            }
        }

        // In-place: lvals holds A's profile, overwritten by L.
        for i in 0..m {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = lvals[offsets[i] + (j - fi)];
                let oi = offsets[i] + (k0 - fi);
                let oj = offsets[j] + (k0 - fj);
                for k in 0..(j - k0) {
                    s -= lvals[oi + k] * d[k0 + k] * lvals[oj + k];
                }
                if d[j] == 0.0 {
                    return Err(LinalgError::SingularPivot { index: j, value: 0.0 });
                }
                lvals[offsets[i] + (j - fi)] = s / d[j];
            }
            let mut dii = d[i];
            for k in fi..i {
                let lik = lvals[offsets[i] + (k - fi)];
                dii -= lik * lik * d[k];
            }
            if dii == 0.0 {
                return Err(LinalgError::SingularPivot { index: i, value: dii });
            }
            d[i] = dii;
        }

        Ok(Self {
            n_full: n,
            m,
            inv_perm,
            first,
            offsets,
            lvals,
            d,
        })
    }

    /// Solve on the (possibly reduced) permuted system; input and output
    /// have the full dimension, with the pinned component set to zero.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0f64; self.m];
        for i in 0..self.n_full {
            let ip = self.inv_perm[i] as usize;
            if ip < self.m {
                z[ip] = b[i];
            }
        }
        // Forward substitution with unit lower profile.
        for i in 0..self.m {
            let fi = self.first[i];
            let row = &self.lvals[self.offsets[i]..self.offsets[i + 1]];
            let mut s = z[i];
            for (k, &l) in row.iter().enumerate() {
                s -= l * z[fi + k];
            }
            z[i] = s;
        }
        for i in 0..self.m {
            z[i] /= self.d[i];
        }
        // Backward substitution, scattering by rows.
        for i in (0..self.m).rev() {
            let fi = self.first[i];
            let xi = z[i];
            let row = &self.lvals[self.offsets[i]..self.offsets[i + 1]];
            for (k, &l) in row.iter().enumerate() {
                z[fi + k] -= l * xi;
            }
        }
        let mut x = vec![0.0f64; self.n_full];
        for i in 0..self.n_full {
            let ip = self.inv_perm[i] as usize;
            if ip < self.m {
                x[i] = z[ip];
            }
        }
        x
    }
}

/// Pseudo-inverse action of a PSD matrix with an optional known
/// one-dimensional kernel, through a pinned envelope factorization.
pub struct PseudoInverseOp<'a> {
    ldl: EnvelopeLdl,
    deflate: Option<&'a [f64]>,
}

impl<'a> PseudoInverseOp<'a> {
    pub fn new(a: &SparseSym, deflate: Option<&'a [f64]>) -> Result<Self, LinalgError> {
        let ldl = EnvelopeLdl::factor(a, deflate.is_some())?;
        Ok(Self { ldl, deflate })
    }
}

impl LinearOperator for PseudoInverseOp<'_> {
    fn dim(&self) -> usize {
        self.ldl.n_full
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut rhs = x.to_vec();
        if let Some(v) = self.deflate {
            project_out(&mut rhs, v);
        }
        let mut sol = self.ldl.solve(&rhs);
        if let Some(v) = self.deflate {
            project_out(&mut sol, v);
        }
        y.copy_from_slice(&sol);
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Eigenvalues of a symmetric tridiagonal matrix below `sigma`
/// (Sturm sequence count).
fn sturm_count(alphas: &[f64], betas: &[f64], sigma: f64) -> usize {
    let mut count = 0;
    let mut d = alphas[0] - sigma;
    if d < 0.0 {
        count += 1;
    }
    for i in 1..alphas.len() {
        let b2 = betas[i - 1] * betas[i - 1];
        let denom = if d == 0.0 { 1e-300 } else { d };
        d = (alphas[i] - sigma) - b2 / denom;
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// Magnitude of the last component of the (normalized) eigenvector of a
/// symmetric tridiagonal matrix for the eigenvalue `theta`, by two steps
/// of inverse iteration; feeds the Lanczos residual bound.
fn tridiag_last_component(alphas: &[f64], betas: &[f64], theta: f64) -> f64 {
    let k = alphas.len();
    if k == 1 {
        return 1.0;
    }
    let sigma = theta * (1.0 + 1e-12) + 1e-300;
    let guard = |m: f64| if m.abs() < 1e-300 { 1e-300 } else { m };
    let mut y = vec![1.0 / (k as f64).sqrt(); k];
    let mut c = vec![0.0f64; k];
    let mut z = vec![0.0f64; k];
    for _ in 0..2 {
        let mut m = guard(alphas[0] - sigma);
        c[0] = betas[0] / m;
        z[0] = y[0] / m;
        for i in 1..k {
            m = guard(alphas[i] - sigma - betas[i - 1] * c[i - 1]);
            if i + 1 < k {
                c[i] = betas[i] / m;
            }
            z[i] = (y[i] - betas[i - 1] * z[i - 1]) / m;
        }
        for i in (0..k - 1).rev() {
            z[i] -= c[i] * z[i + 1];
        }
        let nz = norm(&z);
        for i in 0..k {
            y[i] = z[i] / nz;
        }
    }
    y[k - 1].abs()
}

/// Smallest and largest eigenvalue of a symmetric tridiagonal matrix by
/// Sturm bisection.
fn tridiag_extreme_eigs(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let k = alphas.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..k {
        let r = if i > 0 { betas[i - 1].abs() } else { 0.0 }
            + if i < k - 1 { betas[i].abs() } else { 0.0 };
        lo = lo.min(alphas[i] - r);
        hi = hi.max(alphas[i] + r);
    }
    let width = (hi - lo).max(1e-300);
    let bisect = |target_below: usize| -> f64 {
        let (mut a, mut b) = (lo - 1e-12 * width, hi + 1e-12 * width);
        for _ in 0..120 {
            let mid = 0.5 * (a + b);
            if sturm_count(alphas, betas, mid) <= target_below {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    };
    (bisect(0), bisect(k - 1))
}

/// Largest-magnitude eigenvalue of a symmetric operator by Lanczos with
/// full reorthogonalization and optional kernel deflation.
pub fn lanczos_extreme(
    op: &dyn LinearOperator,
    deflate: Option<&[f64]>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<f64, LinalgError> {
    let n = op.dim();
    let mut state = 0x6c616e637a6f73u64;
    let mut v: Vec<f64> = (0..n)
        .map(|_| splitmix64(&mut state) as f64 / u64::MAX as f64 - 0.5)
        .collect();
    if let Some(u) = deflate {
        project_out(&mut v, u);
    }
    let nv = norm(&v);
    for vi in &mut v {
        *vi /= nv;
    }

    // The Krylov space on the deflated complement has dimension n - 1.
    let space = n - usize::from(deflate.is_some());
    let limit = max_iter.min(space.max(1));
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0f64; n];
    let mut last_change = f64::INFINITY;

    for k in 0..limit {
        op.apply(&basis[k], &mut w);
        let alpha = dot(&basis[k], &w);
        alphas.push(alpha);

        for _ in 0..2 {
            for u in &basis {
                project_out(&mut w, u);
            }
            if let Some(u) = deflate {
                project_out(&mut w, u);
            }
        }
        let beta = norm(&w);

        let (emin, emax) = tridiag_extreme_eigs(&alphas, &betas);
        let theta = if emax.abs() >= emin.abs() { emax } else { emin };
        let exhausted = k + 1 == space;
        let scale: f64 = theta.abs().max(1e-300);
        // Residual bound for the extreme Ritz pair: beta |s_k|.
        let residual = beta * tridiag_last_component(&alphas, &betas, theta);
        last_change = residual;
        if exhausted || residual <= rel_tol * scale || beta <= 1e-14 * scale.max(1.0) {
            return Ok(theta);
        }
        betas.push(beta);
        let next: Vec<f64> = w.iter().map(|&x| x / beta).collect();
        basis.push(next);
    }
    Err(LinalgError::LanczosNonConvergence {
        iters: limit,
        change: last_change,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigMethod {
    /// Dense up to [`DENSE_EIG_LIMIT`] unknowns, Lanczos above.
    Auto,
    Dense,
    Lanczos,
}

/// Threshold under which [`EigMethod::Auto`] takes the dense path. The
/// pure-Rust dense eigensolver is O(n^3) with a large constant, so the
/// crossover sits well below where Lanczos plus the pinned factorization
/// starts winning.
pub const DENSE_EIG_LIMIT: usize = 800;

/// Extremal eigenvalues `(lambda_max, lambda_min_nonzero)` in modulus.
///
/// `deflate` names the unit kernel vector of a singular matrix; the
/// reported minimum then skips the kernel eigenvalue.
pub fn extremal_eigs(
    a: &SparseSym,
    deflate: Option<&[f64]>,
    method: EigMethod,
) -> Result<(f64, f64), LinalgError> {
    let use_dense = match method {
        EigMethod::Dense => true,
        EigMethod::Lanczos => false,
        EigMethod::Auto => a.n <= DENSE_EIG_LIMIT,
    };
    if use_dense {
        Ok(dense_extremal_eigs(a, deflate))
    } else {
        let lambda_max = lanczos_extreme(a, deflate, 1e-6, 500)?.abs();
        match PseudoInverseOp::new(a, deflate) {
            Ok(pinv) => {
                let inv_max = lanczos_extreme(&pinv, deflate, 1e-6, 500)?.abs();
                Ok((lambda_max, 1.0 / inv_max))
            }
            Err(LinalgError::SingularPivot { .. }) => {
                // The matrix is singular beyond its declared kernel
                // (destabilized configurations). Factor a diagonally
                // shifted copy; the reported minimum saturates at the
                // shift, keeping the blow-up finite and ordered.
                let shift = 1e-14 * a.max_abs();
                let mut shifted = a.clone();
                for i in 0..shifted.n {
                    let span = shifted.row_ptr[i]..shifted.row_ptr[i + 1];
                    for idx in span {
                        if shifted.cols[idx] as usize == i {
                            shifted.vals[idx] += shift;
                        }
                    }
                    shifted.diag[i] += shift;
                }
                let pinv = PseudoInverseOp::new(&shifted, deflate)?;
                let inv_max = lanczos_extreme(&pinv, deflate, 1e-6, 500)?.abs();
                Ok((lambda_max, (1.0 / inv_max - shift).abs().max(f64::MIN_POSITIVE)))
            }
            Err(e) => Err(e),
        }
    }
}

/// Dense oracle: full symmetric eigendecomposition; the kernel eigenpair
/// (when `deflate` is given) is identified by eigenvector overlap.
pub fn dense_extremal_eigs(a: &SparseSym, deflate: Option<&[f64]>) -> (f64, f64) {
    let eig = SymmetricEigen::new(a.to_dense());
    let mut keep: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    if let Some(v) = deflate {
        let overlap = |col: usize| -> f64 {
            eig.eigenvectors
                .column(col)
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .abs()
        };
        let kernel_idx = keep
            .iter()
            .copied()
            .max_by(|&p, &q| overlap(p).total_cmp(&overlap(q)))
            .unwrap();
        keep.retain(|&i| i != kernel_idx);
    }
    let mut lambda_max = 0.0f64;
    let mut lambda_min = f64::INFINITY;
    for &i in &keep {
        let m = eig.eigenvalues[i].abs();
        lambda_max = lambda_max.max(m);
        lambda_min = lambda_min.min(m);
    }
    (lambda_max, lambda_min)
}

/// Condition number as the modulus ratio of extremal nonzero eigenvalues,
/// optionally of the Jacobi-scaled matrix.
pub fn condition_number(
    a: &SparseSym,
    deflate: Option<&[f64]>,
    jacobi: bool,
    method: EigMethod,
) -> Result<f64, LinalgError> {
    if jacobi {
        let (scaled, sqrt_d) = a.jacobi_scaled();
        let scaled_deflate = deflate.map(|v| {
            let mut w: Vec<f64> = v.iter().zip(&sqrt_d).map(|(x, s)| x * s).collect();
            let nw = norm(&w);
            for wi in &mut w {
                *wi /= nw;
            }
            w
        });
        let (max, min) = extremal_eigs(&scaled, scaled_deflate.as_deref(), method)?;
        Ok(max / min)
    } else {
        let (max, min) = extremal_eigs(a, deflate, method)?;
        Ok(max / min)
    }
}

/// Normalized all-ones vector (the stiffness kernel in coefficient space).
pub fn constant_kernel_vector(n: usize) -> Vec<f64> {
    vec![1.0 / (n as f64).sqrt(); n]
}
