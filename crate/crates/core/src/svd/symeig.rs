// Householder tridiagonalization followed by the implicit QL method, after the EISPACK
// routines tred2/tql2 (Bowdler, Martin, Reinsch and Wilkinson) as transcribed in JAMA.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAX_QL_ITERATIONS: usize = 64;

/// `v` is column-major so the inner loops of both phases run over contiguous memory.
struct Work {
    n: usize,
    v: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
}

impl Work {
    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.v[j * self.n + i]
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.v[j * self.n + i]
    }

    fn tred2(&mut self) {
        let n = self.n;
        for j in 0..n {
            self.d[j] = self.get(n - 1, j);
        }

        for i in (1..n).rev() {
            let mut scale = 0.0;
            let mut h = 0.0;
            for k in 0..i {
                scale += self.d[k].abs();
            }
            if scale == 0.0 {
                self.e[i] = self.d[i - 1];
                for j in 0..i {
                    self.d[j] = self.get(i - 1, j);
                    *self.at(i, j) = 0.0;
                    *self.at(j, i) = 0.0;
                }
            } else {
                for k in 0..i {
                    self.d[k] /= scale;
                    h += self.d[k] * self.d[k];
                }
                let mut f = self.d[i - 1];
                let mut g = h.sqrt();
                if f > 0.0 {
                    g = -g;
                }
                self.e[i] = scale * g;
                h -= f * g;
                self.d[i - 1] = f - g;
                for j in 0..i {
                    self.e[j] = 0.0;
                }

                for j in 0..i {
                    f = self.d[j];
                    *self.at(j, i) = f;
                    g = self.e[j] + self.get(j, j) * f;
                    for k in (j + 1)..i {
                        g += self.get(k, j) * self.d[k];
                        self.e[k] += self.get(k, j) * f;
                    }
                    self.e[j] = g;
                }
                f = 0.0;
                for j in 0..i {
                    self.e[j] /= h;
                    f += self.e[j] * self.d[j];
                }
                let hh = f / (h + h);
                for j in 0..i {
                    self.e[j] -= hh * self.d[j];
                }
                for j in 0..i {
                    f = self.d[j];
                    g = self.e[j];
                    for k in j..i {
                        *self.at(k, j) -= f * self.e[k] + g * self.d[k];
                    }
                    self.d[j] = self.get(i - 1, j);
                    *self.at(i, j) = 0.0;
                }
            }
            self.d[i] = h;
        }

        // accumulate transformations
        for i in 0..n - 1 {
            *self.at(n - 1, i) = self.get(i, i);
            *self.at(i, i) = 1.0;
            let h = self.d[i + 1];
            if h != 0.0 {
                for k in 0..=i {
                    self.d[k] = self.get(k, i + 1) / h;
                }
                for j in 0..=i {
                    let mut g = 0.0;
                    for k in 0..=i {
                        g += self.get(k, i + 1) * self.get(k, j);
                    }
                    for k in 0..=i {
                        *self.at(k, j) -= g * self.d[k];
                    }
                }
            }
            for k in 0..=i {
                *self.at(k, i + 1) = 0.0;
            }
        }
        for j in 0..n {
            self.d[j] = self.get(n - 1, j);
            *self.at(n - 1, j) = 0.0;
        }
        *self.at(n - 1, n - 1) = 1.0;
        self.e[0] = 0.0;
    }

    fn tql2(&mut self) -> Result<()> {
        let n = self.n;
        for i in 1..n {
            self.e[i - 1] = self.e[i];
        }
        self.e[n - 1] = 0.0;

        let mut f = 0.0;
        let mut tst1: f64 = 0.0;
        let eps = f64::EPSILON;
        for l in 0..n {
            tst1 = tst1.max(self.d[l].abs() + self.e[l].abs());
            let mut m = l;
            while m < n {
                if self.e[m].abs() <= eps * tst1 {
                    break;
                }
                m += 1;
            }

            if m > l {
                let mut iterations = 0;
                loop {
                    iterations += 1;
                    if iterations > MAX_QL_ITERATIONS {
                        return Err(Error::Decomposition(format!(
                            "QL iteration did not converge for eigenvalue {l} of {n}"
                        )));
                    }
                    let mut g = self.d[l];
                    let mut p = (self.d[l + 1] - g) / (2.0 * self.e[l]);
                    let mut r = p.hypot(1.0);
                    if p < 0.0 {
                        r = -r;
                    }
                    self.d[l] = self.e[l] / (p + r);
                    self.d[l + 1] = self.e[l] * (p + r);
                    let dl1 = self.d[l + 1];
                    let mut h = g - self.d[l];
                    for i in (l + 2)..n {
                        self.d[i] -= h;
                    }
                    f += h;

                    p = self.d[m];
                    let mut c = 1.0;
                    let mut c2 = c;
                    let mut c3 = c;
                    let el1 = self.e[l + 1];
                    let mut s = 0.0;
                    let mut s2 = 0.0;
                    for i in (l..m).rev() {
                        c3 = c2;
                        c2 = c;
                        s2 = s;
                        g = c * self.e[i];
                        h = c * p;
                        r = p.hypot(self.e[i]);
                        self.e[i + 1] = s * r;
                        s = self.e[i] / r;
                        c = p / r;
                        p = c * self.d[i] - s * g;
                        self.d[i + 1] = h + s * (c * g + s * self.d[i]);

                        let (left, right) = self.v.split_at_mut((i + 1) * n);
                        let col_i = &mut left[i * n..];
                        for (a, b) in col_i.iter_mut().zip(&mut right[..n]) {
                            let t = *b;
                            *b = s * *a + c * t;
                            *a = c * *a - s * t;
                        }
                    }
                    p = -s * s2 * c3 * el1 * self.e[l] / dl1;
                    self.e[l] = s * p;
                    self.d[l] = c * p;

                    if self.e[l].abs() <= eps * tst1 {
                        break;
                    }
                }
            }
            self.d[l] += f;
            self.e[l] = 0.0;
        }
        Ok(())
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending order with the
/// matching eigenvectors as columns. Only the lower triangle is read.
pub fn symmetric_eigen(matrix: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::Format(format!(
            "eigen-decomposition needs a square matrix, got {}x{}",
            n,
            matrix.ncols()
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            v[i * n + j] = matrix[(i, j)];
            v[j * n + i] = matrix[(i, j)];
        }
    }
    let mut work = Work {
        n,
        v,
        d: vec![0.0; n],
        e: vec![0.0; n],
    };
    if n > 1 {
        work.tred2();
        work.tql2()?;
    } else {
        work.d[0] = work.v[0];
        work.v[0] = 1.0;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| work.d[b].total_cmp(&work.d[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| work.d[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| work.v[order[c] * n + r]);
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_matrix() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let (vals, vecs) = symmetric_eigen(&m).unwrap();
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decomposes_random_symmetric_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 3, 7, 20, 41] {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let s = &a + a.transpose();
            let (vals, vecs) = symmetric_eigen(&s).unwrap();
            assert!(vals.windows(2).all(|w| w[0] >= w[1]));
            let recon = &vecs
                * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vals))
                * vecs.transpose();
            assert!((recon - &s).amax() < 1e-12);
            let gram = vecs.transpose() * &vecs;
            assert!((gram - DMatrix::identity(n, n)).amax() < 1e-13);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let m = DMatrix::from_element(2, 2, f64::NAN);
        assert!(matches!(symmetric_eigen(&m), Err(Error::Numeric(_))));
    }
}
