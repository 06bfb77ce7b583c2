//! Restarted, right-preconditioned GMRES on flat vectors.

#[derive(Clone, Copy, Debug)]
pub struct GmresSettings {
    pub rtol: f64,
    pub atol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresSettings {
    fn default() -> Self {
        GmresSettings {
            rtol: 1e-12,
            atol: 0.0,
            restart: 40,
            max_iter: 400,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` starting from the contents of `x`; `precond` applies `M^-1`.
pub fn gmres(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    settings: &GmresSettings,
) -> GmresOutcome {
    let n = b.len();
    let m = settings.restart.max(1);
    let target = (settings.rtol * norm(b)).max(settings.atol);
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut hess = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut total = 0;

    loop {
        apply(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm(&r);
        if beta <= target || beta == 0.0 {
            return GmresOutcome { iterations: total, residual: beta, converged: true };
        }
        if total >= settings.max_iter {
            return GmresOutcome { iterations: total, residual: beta, converged: false };
        }
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            precond(&basis[k], &mut z);
            apply(&z, &mut w);
            for (j, v) in basis.iter().enumerate() {
                let hjk = dot(&w, v);
                hess[j][k] = hjk;
                for i in 0..n {
                    w[i] -= hjk * v[i];
                }
            }
            // second pass keeps the basis orthogonal under heavy cancellation
            for (j, v) in basis.iter().enumerate() {
                let c = dot(&w, v);
                hess[j][k] += c;
                for i in 0..n {
                    w[i] -= c * v[i];
                }
            }
            let wn = norm(&w);
            hess[k + 1][k] = wn;
            for j in 0..k {
                let t = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = t;
            }
            let denom = hess[k][k].hypot(hess[k + 1][k]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = hess[k][k] / denom;
                sn[k] = hess[k + 1][k] / denom;
            }
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            let res = g[k + 1].abs();
            total += 1;
            k_used = k + 1;
            if res <= target || wn == 0.0 || total >= settings.max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        // back substitution and update x += M^-1 V y
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hess[i][j] * y[j];
            }
            y[i] = if hess[i][i] != 0.0 { s / hess[i][i] } else { 0.0 };
        }
        w.iter_mut().for_each(|v| *v = 0.0);
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                w[i] += yj * basis[j][i];
            }
        }
        precond(&w, &mut z);
        for i in 0..n {
            x[i] += z[i];
        }
    }
}
