//! Small dense Levenberg–Marquardt used by triangulation and PnP refinement.

use nalgebra::{DMatrix, DVector};

pub(crate) trait LeastSquares {
    type Params: Clone;

    /// Residual vector and its Jacobian at `p`.
    fn linearize(&self, p: &Self::Params) -> (DVector<f64>, DMatrix<f64>);

    #[cfg(test)]
    fn residuals(&self, p: &Self::Params) -> DVector<f64> {
        self.linearize(p).0
    }

    fn retract(&self, p: &Self::Params, delta: &DVector<f64>) -> Self::Params;

    /// Scale used by the step-size stopping test.
    fn magnitude(&self, p: &Self::Params) -> f64;
}

pub(crate) struct LmReport {
    pub cost: f64,
}

pub(crate) fn minimize<P: LeastSquares>(problem: &P, start: P::Params, max_iters: usize) -> (P::Params, LmReport) {
    let mut params = start;
    let (mut r, mut j) = problem.linearize(&params);
    let mut cost = r.norm_squared();
    let mut lambda: Option<f64> = None;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() < 1e-300 {
            break;
        }
        let diag_max = jtj.diagonal().amax().max(1e-300);
        let mu = *lambda.get_or_insert(1e-6 * diag_max);

        let mut a = jtj.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += mu * jtj[(i, i)].max(1e-12 * diag_max);
        }
        let delta = match a.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => {
                lambda = Some(mu * 10.0);
                continue;
            }
        };

        let candidate = problem.retract(&params, &delta);
        let (cr, cj) = problem.linearize(&candidate);
        let ccost = cr.norm_squared();
        if ccost.is_finite() && ccost <= cost {
            let small_step = delta.norm() <= 1e-14 * (1.0 + problem.magnitude(&params));
            let stalled = cost - ccost <= 1e-30 + 1e-16 * cost;
            params = candidate;
            r = cr;
            j = cj;
            cost = ccost;
            lambda = Some((mu / 10.0).max(1e-20));
            if small_step || (stalled && cost < 1e-24) {
                break;
            }
        } else {
            let next = mu * 10.0;
            if next > 1e16 {
                break;
            }
            lambda = Some(next);
        }
    }

    (params, LmReport { cost })
}
