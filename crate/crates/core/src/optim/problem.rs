use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

/// How binary labels are drawn in the logistic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelRule {
    /// `y = +1` iff `z ≤ 1 + exp(-hᵀx*)` for uniform `z`. The threshold is
    /// at least 1, so every label comes out `+1`.
    #[default]
    Literal,
    /// `y = +1` iff `z ≤ 1 / (1 + exp(-hᵀx*))`, the usual logistic model.
    Sigmoid,
}

impl LabelRule {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelRule::Literal => "literal",
            LabelRule::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for LabelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(LabelRule::Literal),
            "sigmoid" => Ok(LabelRule::Sigmoid),
            other => Err(Error::param(
                "label_rule",
                format!("expected `literal` or `sigmoid`, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone)]
enum Model {
    /// `f_i(x) = ‖A_i x - b_i‖²`.
    LeastSquares {
        a: Vec<DMatrix<f64>>,
        b: Vec<DVector<f64>>,
        sigma_s: f64,
    },
    /// `f_i(x) = (1/L) Σ ln(1 + exp(-y hᵀx)) + R Σ_j x_j²/(1 + x_j²)`.
    LogisticNcvx {
        /// `L × d` feature matrix per node.
        h: Vec<DMatrix<f64>>,
        y: Vec<DVector<f64>>,
        reg: f64,
        sigma_h: f64,
        local_optima: Vec<DVector<f64>>,
    },
}

/// A finite-sum problem `f = (1/n) Σ f_i` with additive Gaussian gradient
/// noise. Immutable once generated.
#[derive(Debug, Clone)]
pub struct OptProblem {
    n: usize,
    d: usize,
    sigma_n: f64,
    model: Model,
    optimum: Option<DVector<f64>>,
}

fn gaussian_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn gaussian_mat<R: Rng + ?Sized>(r: usize, c: usize, rng: &mut R) -> DMatrix<f64> {
    // Row-major draw order so the data do not depend on storage layout.
    DMatrix::from_row_iterator(r, c, (0..r * c).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn check_sizes(n: usize, d: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    if d == 0 {
        return Err(Error::param("d", "must be at least 1"));
    }
    Ok(())
}

fn check_scale(name: &'static str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::param(name, format!("must be finite and non-negative, got {v}")));
    }
    Ok(())
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-z})` without overflow.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Least squares with `A_i ~ N(0,1)^{K×d}`, `x* ~ N(0, I)` and
/// `b_i = A_i x* + s_i`, `s_i ~ N(0, σ_s² I)`.
pub fn make_least_squares<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    k: usize,
    sigma_s: f64,
    sigma_n: f64,
    rng: &mut R,
) -> Result<OptProblem> {
    check_sizes(n, d)?;
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    check_scale("sigma_s", sigma_s)?;
    check_scale("sigma_n", sigma_n)?;
    let x_star = gaussian_vec(d, rng);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let ai = gaussian_mat(k, d, rng);
        let si = gaussian_vec(k, rng) * sigma_s;
        b.push(&ai * &x_star + si);
        a.push(ai);
    }
    // Normal equations of (1/n) Σ ‖A_i x - b_i‖².
    let mut ata = DMatrix::zeros(d, d);
    let mut atb = DVector::zeros(d);
    for (ai, bi) in a.iter().zip(&b) {
        ata += ai.transpose() * ai;
        atb += ai.transpose() * bi;
    }
    let optimum = ata.cholesky().map(|c| c.solve(&atb));
    Ok(OptProblem {
        n,
        d,
        sigma_n,
        model: Model::LeastSquares { a, b, sigma_s },
        optimum,
    })
}

/// Logistic regression with a nonconvex regularizer. Node `i` draws its data
/// around `x*_i = x* + v_i`, `v_i ~ N(0, σ_h² I)`, with `x* ~ N(0, I)` and
/// features `h ~ N(0, I)`.
#[allow(clippy::too_many_arguments)]
pub fn make_logistic_ncvx<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    l: usize,
    reg: f64,
    sigma_h: f64,
    sigma_n: f64,
    rule: LabelRule,
    rng: &mut R,
) -> Result<OptProblem> {
    check_sizes(n, d)?;
    if l == 0 {
        return Err(Error::param("l", "must be at least 1"));
    }
    check_scale("r", reg)?;
    check_scale("sigma_h", sigma_h)?;
    check_scale("sigma_n", sigma_n)?;
    let x_star = gaussian_vec(d, rng);
    let mut h = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut local_optima = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = &x_star + gaussian_vec(d, rng) * sigma_h;
        let hi = gaussian_mat(l, d, rng);
        let margins = &hi * &xi;
        let yi = DVector::from_iterator(
            l,
            margins.iter().map(|&m| {
                let z: f64 = rng.random();
                let threshold = match rule {
                    LabelRule::Literal => 1.0 + (-m).exp(),
                    LabelRule::Sigmoid => sigmoid(m),
                };
                if z <= threshold {
                    1.0
                } else {
                    -1.0
                }
            }),
        );
        h.push(hi);
        y.push(yi);
        local_optima.push(xi);
    }
    Ok(OptProblem {
        n,
        d,
        sigma_n,
        model: Model::LogisticNcvx {
            h,
            y,
            reg,
            sigma_h,
            local_optima,
        },
        optimum: None,
    })
}

impl OptProblem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Standard deviation of the additive gradient noise.
    pub fn sigma_n(&self) -> f64 {
        self.sigma_n
    }

    /// Problem name used in output files.
    pub fn kind(&self) -> &'static str {
        match self.model {
            Model::LeastSquares { .. } => "least-squares",
            Model::LogisticNcvx { .. } => "logistic-ncvx",
        }
    }

    /// `σ_s` for least squares, `σ_h` for logistic.
    pub fn heterogeneity(&self) -> f64 {
        match &self.model {
            Model::LeastSquares { sigma_s, .. } => *sigma_s,
            Model::LogisticNcvx { sigma_h, .. } => *sigma_h,
        }
    }

    /// Global minimiser, when known in closed form.
    pub fn optimum(&self) -> Option<&DVector<f64>> {
        self.optimum.as_ref()
    }

    /// Per-node data-generating solutions `x*_i` (logistic only).
    pub fn local_optima(&self) -> Option<&[DVector<f64>]> {
        match &self.model {
            Model::LogisticNcvx { local_optima, .. } => Some(local_optima),
            Model::LeastSquares { .. } => None,
        }
    }

    /// Labels of node `i` (logistic only).
    pub fn labels(&self, i: usize) -> Option<&DVector<f64>> {
        match &self.model {
            Model::LogisticNcvx { y, .. } => Some(&y[i]),
            Model::LeastSquares { .. } => None,
        }
    }

    fn check_point(&self, x: &DVector<f64>) {
        assert_eq!(x.len(), self.d, "point has wrong dimension");
    }

    pub fn local_loss(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.check_point(x);
        match &self.model {
            Model::LeastSquares { a, b, .. } => (&a[i] * x - &b[i]).norm_squared(),
            Model::LogisticNcvx { h, y, reg, .. } => {
                let m = &h[i] * x;
                let data = m
                    .iter()
                    .zip(y[i].iter())
                    .map(|(&mi, &yi)| softplus(-yi * mi))
                    .sum::<f64>()
                    / m.len() as f64;
                data + reg * x.iter().map(|&v| v * v / (1.0 + v * v)).sum::<f64>()
            }
        }
    }

    /// Exact `∇f_i(x)`.
    pub fn local_grad(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        self.check_point(x);
        match &self.model {
            Model::LeastSquares { a, b, .. } => a[i].tr_mul(&(&a[i] * x - &b[i])) * 2.0,
            Model::LogisticNcvx { h, y, reg, .. } => {
                let m = &h[i] * x;
                let l = m.len() as f64;
                let coef = DVector::from_iterator(
                    m.len(),
                    m.iter()
                        .zip(y[i].iter())
                        .map(|(&mi, &yi)| -yi * sigmoid(-yi * mi) / l),
                );
                let mut g = h[i].tr_mul(&coef);
                for (gj, &xj) in g.iter_mut().zip(x.iter()) {
                    let q = 1.0 + xj * xj;
                    *gj += 2.0 * reg * xj / (q * q);
                }
                g
            }
        }
    }

    /// `∇f_i(x) + N(0, σ_n² I)`.
    pub fn stochastic_grad<R: Rng + ?Sized>(
        &self,
        i: usize,
        x: &DVector<f64>,
        rng: &mut R,
    ) -> DVector<f64> {
        let mut g = self.local_grad(i, x);
        if self.sigma_n > 0.0 {
            let noise = Normal::new(0.0, self.sigma_n).expect("sigma_n validated");
            g.iter_mut().for_each(|v| *v += noise.sample(rng));
        }
        g
    }

    /// `f(x) = (1/n) Σ f_i(x)`.
    pub fn loss(&self, x: &DVector<f64>) -> f64 {
        (0..self.n).map(|i| self.local_loss(i, x)).sum::<f64>() / self.n as f64
    }

    /// `∇f(x)`.
    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.d);
        for i in 0..self.n {
            g += self.local_grad(i, x);
        }
        g / self.n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn central_diff(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            (0..x.len()).map(|j| {
                let mut p = x.clone();
                let mut m = x.clone();
                p[j] += h;
                m[j] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            }),
        )
    }

    fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-12)
    }

    #[test]
    fn noiseless_least_squares_interpolates() {
        let p = make_least_squares(6, 4, 8, 0.0, 0.0, &mut seed::rng(1)).unwrap();
        let x = p.optimum().unwrap().clone();
        assert!(p.loss(&x) < 1e-20);
        assert!(p.grad(&x).norm() < 1e-10);
    }

    #[test]
    fn least_squares_gradient_matches_differences() {
        let p = make_least_squares(3, 5, 7, 0.1, 1.0, &mut seed::rng(2)).unwrap();
        let mut rng = seed::rng(3);
        for _ in 0..20 {
            let x = gaussian_vec(5, &mut rng);
            let g = p.local_grad(1, &x);
            let fd = central_diff(|z| p.local_loss(1, z), &x, 1e-5);
            assert!(rel_err(&fd, &g) < 1e-5, "{}", rel_err(&fd, &g));
        }
    }

    #[test]
    fn optimum_zeroes_global_gradient() {
        let p = make_least_squares(10, 4, 6, 0.5, 0.0, &mut seed::rng(4)).unwrap();
        assert!(p.grad(p.optimum().unwrap()).norm() < 1e-9);
    }

    #[test]
    fn logistic_gradient_matches_differences() {
        for reg in [0.0, 0.001, 0.7] {
            for rule in [LabelRule::Literal, LabelRule::Sigmoid] {
                let p = make_logistic_ncvx(2, 4, 30, reg, 0.2, 0.0, rule, &mut seed::rng(5))
                    .unwrap();
                let mut rng = seed::rng(6);
                for _ in 0..20 {
                    let x = gaussian_vec(4, &mut rng) * 2.0;
                    let g = p.local_grad(0, &x);
                    let fd = central_diff(|z| p.local_loss(0, z), &x, 1e-5);
                    assert!(rel_err(&fd, &g) < 1e-5, "reg {reg}: {}", rel_err(&fd, &g));
                }
            }
        }
    }

    #[test]
    fn regularizer_gradient_closed_form() {
        // With every feature zero the data term is constant (ln 2).
        let mut p = make_logistic_ncvx(1, 3, 5, 0.3, 0.0, 0.0, LabelRule::Literal, &mut seed::rng(7))
            .unwrap();
        if let Model::LogisticNcvx { h, .. } = &mut p.model {
            h[0].fill(0.0);
        }
        let x = DVector::from_vec(vec![0.5, -2.0, 3.0]);
        let g = p.local_grad(0, &x);
        for j in 0..3 {
            let v: f64 = x[j];
            assert!((g[j] - 2.0 * 0.3 * v / (1.0 + v * v).powi(2)).abs() < 1e-15);
        }
        assert!((p.local_loss(0, &DVector::zeros(3)) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn literal_rule_labels_everything_positive() {
        let p = make_logistic_ncvx(4, 3, 50, 0.0, 0.2, 0.0, LabelRule::Literal, &mut seed::rng(8))
            .unwrap();
        for i in 0..4 {
            assert!(p.labels(i).unwrap().iter().all(|&y| y == 1.0));
        }
        let q = make_logistic_ncvx(4, 3, 50, 0.0, 0.2, 0.0, LabelRule::Sigmoid, &mut seed::rng(8))
            .unwrap();
        assert!((0..4).any(|i| q.labels(i).unwrap().iter().any(|&y| y == -1.0)));
    }

    #[test]
    fn zero_heterogeneity_shares_local_solution() {
        let p = make_logistic_ncvx(5, 3, 10, 0.0, 0.0, 0.0, LabelRule::Literal, &mut seed::rng(9))
            .unwrap();
        let opt = p.local_optima().unwrap();
        assert!(opt.iter().all(|x| x == &opt[0]));
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn gradient_noise_has_zero_mean() {
        let p = make_least_squares(2, 3, 4, 0.1, 1.0, &mut seed::rng(10)).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.1, 0.2]);
        let exact = p.local_grad(0, &x);
        let mut rng = seed::rng(11);
        let draws = 10_000;
        let mut sum = DVector::zeros(3);
        let mut sq = DVector::zeros(3);
        for _ in 0..draws {
            let e = p.stochastic_grad(0, &x, &mut rng) - &exact;
            sq += e.component_mul(&e);
            sum += e;
        }
        for j in 0..3 {
            let mean = sum[j] / draws as f64;
            let var = sq[j] / draws as f64 - mean * mean;
            let stderr = (var / draws as f64).sqrt();
            assert!(mean.abs() <= 4.0 * stderr, "coord {j}: {mean} vs {stderr}");
            assert!((var - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn bad_parameters_are_named() {
        let err = make_least_squares(0, 3, 4, 0.1, 1.0, &mut seed::rng(0)).unwrap_err();
        assert!(matches!(err, Error::Parameter { name: "n", .. }));
        let err = make_logistic_ncvx(2, 3, 4, 0.1, -1.0, 1.0, LabelRule::Literal, &mut seed::rng(0))
            .unwrap_err();
        assert!(matches!(err, Error::Parameter { name: "sigma_h", .. }));
    }
}
