//! Dense linear least squares through Householder QR with column pivoting.

/// Column-major dense matrix.
#[derive(Clone, Debug)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[c * self.rows + r] = v;
    }

    fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (c, xc) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.col(c)) {
                *o += a * xc;
            }
        }
        out
    }

    /// `A^T v`
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.cols).map(|c| self.col(c).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LstsqError {
    /// Diagonal of R dropped below `tol * |R[0][0]|` at this elimination step.
    RankDeficient { step: usize, ratio: f64 },
    NonFinite,
    Shape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    /// `min |R_kk| / max |R_kk|`, a cheap conditioning indicator.
    pub diag_ratio: f64,
}

/// Minimizes `||A x - b||` for a full-column-rank `A` with `rows >= cols`.
pub fn solve(mut a: DenseMatrix, mut b: Vec<f64>, rank_tol: f64) -> Result<LstsqSolution, LstsqError> {
    let (m, n) = (a.rows, a.cols);
    if m < n || b.len() != m || n == 0 {
        return Err(LstsqError::Shape);
    }
    if a.data.iter().chain(&b).any(|v| !v.is_finite()) {
        return Err(LstsqError::NonFinite);
    }

    let mut perm: Vec<usize> = (0..n).collect();
    let mut diag = vec![0.0f64; n];
    let mut v = vec![0.0; m];

    for k in 0..n {
        // Pivot on the largest remaining column norm.
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..n {
            let norm: f64 = a.col(j)[k..].iter().map(|x| x * x).sum();
            if norm > best_norm {
                best_norm = norm;
                best = j;
            }
        }
        if best != k {
            let (lo, hi) = a.data.split_at_mut(best * m);
            lo[k * m..(k + 1) * m].swap_with_slice(&mut hi[..m]);
            perm.swap(k, best);
        }

        let norm = best_norm.sqrt();
        let scale = if k == 0 { norm } else { diag[0].abs() };
        if norm <= rank_tol * scale || norm == 0.0 {
            return Err(LstsqError::RankDeficient { step: k, ratio: if scale > 0.0 { norm / scale } else { 0.0 } });
        }

        let x0 = a.get(k, k);
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let vk = &mut v[k..];
        vk.copy_from_slice(&a.col(k)[k..]);
        vk[0] -= alpha;
        let beta: f64 = vk.iter().map(|x| x * x).sum();
        diag[k] = alpha;

        if beta > 0.0 {
            for j in k + 1..n {
                let col = &mut a.data[j * m + k..(j + 1) * m];
                let s: f64 = vk.iter().zip(col.iter()).map(|(p, q)| p * q).sum();
                let f = 2.0 * s / beta;
                for (c, p) in col.iter_mut().zip(vk.iter()) {
                    *c -= f * p;
                }
            }
            let s: f64 = vk.iter().zip(&b[k..]).map(|(p, q)| p * q).sum();
            let f = 2.0 * s / beta;
            for (c, p) in b[k..].iter_mut().zip(vk.iter()) {
                *c -= f * p;
            }
        }
        a.set(k, k, alpha);
    }

    // Back substitution on R z = (Q^T b)[..n], then undo the pivoting.
    let mut z = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a.get(k, j) * z[j];
        }
        z[k] = s / diag[k];
    }
    let mut x = vec![0.0; n];
    for (k, &p) in perm.iter().enumerate() {
        x[p] = z[k];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LstsqError::NonFinite);
    }

    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.abs()), hi.max(d.abs())));
    Ok(LstsqSolution { x, diag_ratio: lo / hi })
}
