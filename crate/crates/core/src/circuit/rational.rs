use nalgebra::DMatrix;
use num_complex::Complex64;

use super::tf::{PoleTerm, TransferFunction};
use crate::error::{Error, Result};

pub const DEFAULT_CLUSTER_TOL: f64 = 1e-6;

/// Real polynomial, coefficients in ascending powers.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Polynomial(coeffs)
    }

    /// `lead · Π (s − r)`.
    pub fn from_roots(roots: &[f64], lead: f64) -> Self {
        let mut c = vec![lead];
        for &r in roots {
            let mut next = vec![0.0; c.len() + 1];
            for (k, &a) in c.iter().enumerate() {
                next[k + 1] += a;
                next[k] -= r * a;
            }
            c = next;
        }
        Polynomial(c)
    }

    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn leading(&self) -> f64 {
        *self.0.last().unwrap_or(&0.0)
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.0.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &a| acc * s + a)
    }

    /// Coefficients of the same polynomial in powers of `(s − p)`.
    pub fn taylor_shift(&self, p: f64) -> Vec<f64> {
        let mut c = self.0.clone();
        let n = c.len();
        for k in 0..n {
            for j in (k..n - 1).rev() {
                c[j] += p * c[j + 1];
            }
        }
        c
    }

    /// Roots as eigenvalues of the companion matrix.
    pub fn roots(&self) -> Vec<Complex64> {
        let n = self.degree();
        match n {
            0 => Vec::new(),
            1 => vec![Complex64::new(-self.0[0] / self.0[1], 0.0)],
            _ => {
                let lead = self.leading();
                let mut comp = DMatrix::zeros(n, n);
                for i in 1..n {
                    comp[(i, i - 1)] = 1.0;
                }
                for i in 0..n {
                    comp[(i, n - 1)] = -self.0[i] / lead;
                }
                comp.complex_eigenvalues().iter().copied().collect()
            }
        }
    }
}

/// `num(s) / den(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalFunction {
    pub num: Polynomial,
    pub den: Polynomial,
}

impl RationalFunction {
    pub fn new(num: Polynomial, den: Polynomial) -> Self {
        RationalFunction { num, den }
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.num.eval(s) / self.den.eval(s)
    }
}

/// Partial fractions of a strictly proper rational function with real
/// negative poles. Roots closer than `tol_cluster` (relative) are merged into
/// one term of higher multiplicity; `tol_cluster <= 0` disables merging.
///
/// For a cluster at `p` of multiplicity `k`, `A_j` is the coefficient of
/// `(s−p)^{k−j}` in the Taylor expansion of `(s−p)^k H(s) = num(s)/q(s)`,
/// where `q` collects the remaining roots.
pub fn expand_repeated(rf: &RationalFunction, tol_cluster: f64) -> Result<TransferFunction> {
    if rf.num.degree() >= rf.den.degree() && rf.num.0.iter().any(|&a| a != 0.0) {
        return Err(Error::InvalidArgument("rational function is not strictly proper".into()));
    }
    if rf.den.leading() == 0.0 {
        return Err(Error::InvalidArgument("denominator has zero leading coefficient".into()));
    }

    let mut roots = rf.den.roots();
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));

    let mut clusters: Vec<Vec<Complex64>> = Vec::new();
    for r in roots {
        let joins = clusters.last().is_some_and(|cl| {
            let first = cl[0];
            tol_cluster > 0.0 && (r - first).norm() <= tol_cluster * r.norm().max(first.norm())
        });
        if joins {
            clusters.last_mut().expect("non-empty").push(r);
        } else {
            clusters.push(vec![r]);
        }
    }

    let mut centers = Vec::with_capacity(clusters.len());
    for cl in &clusters {
        let mean = cl.iter().sum::<Complex64>() / cl.len() as f64;
        if mean.im.abs() > 1e-9 * mean.re.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::ComplexPoleDetected { re: mean.re, im: mean.im });
        }
        if !(mean.re < 0.0) {
            return Err(Error::PositivePoleDetected(mean.re));
        }
        centers.push((mean.re, cl.len()));
    }

    let mut terms = Vec::with_capacity(centers.len());
    for (i, &(p, k)) in centers.iter().enumerate() {
        let others: Vec<f64> = centers
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, &(q, kq))| std::iter::repeat_n(q, kq))
            .collect();
        let q = Polynomial::from_roots(&others, rf.den.leading());
        let n_shift = rf.num.taylor_shift(p);
        let q_shift = q.taylor_shift(p);
        let series = series_divide(&n_shift, &q_shift, k);
        let residues = (1..=k).map(|j| series[k - j]).collect();
        terms.push(PoleTerm { pole: p, multiplicity: k, residues });
    }
    terms.sort_by(|x, y| y.pole.total_cmp(&x.pole));

    let d0 = rf.den.0[0];
    let dc_gain = if d0 != 0.0 { rf.num.0[0] / d0 } else { f64::INFINITY };
    Ok(TransferFunction { dc_gain, terms })
}

/// First `n` coefficients of the power series `num / den`.
fn series_divide(num: &[f64], den: &[f64], n: usize) -> Vec<f64> {
    let coef = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = coef(num, i);
        for l in 1..=i {
            acc -= coef(den, l) * out[i - l];
        }
        out.push(acc / den[0]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn polynomial_basics() {
        let p = Polynomial::from_roots(&[-1.0, -1.0, -2.0], 1.0);
        assert_eq!(p.0, vec![2.0, 5.0, 4.0, 1.0]);
        assert_eq!(p.eval(s(1.0, 0.0)), s(12.0, 0.0));
        // p(s) around s = -1: (s+1)^2 (s+2) = (s+1)^2 ((s+1) + 1)
        assert_eq!(p.taylor_shift(-1.0), vec![0.0, 0.0, 1.0, 1.0]);
        let mut r: Vec<f64> = Polynomial::from_roots(&[-3.0, -0.5], 2.0).roots().iter().map(|z| z.re).collect();
        r.sort_by(f64::total_cmp);
        assert!((r[0] + 3.0).abs() < 1e-12 && (r[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn pure_double_pole() {
        let rf = RationalFunction::new(Polynomial::new(vec![1.0]), Polynomial::from_roots(&[-1.0, -1.0], 1.0));
        let tf = expand_repeated(&rf, DEFAULT_CLUSTER_TOL).unwrap();
        assert_eq!(tf.terms.len(), 1);
        let t = &tf.terms[0];
        assert!((t.pole + 1.0).abs() < 1e-12);
        assert_eq!(t.multiplicity, 2);
        assert!(t.residues[0].abs() < 1e-9);
        assert!((t.residues[1] - 1.0).abs() < 1e-9);
        assert_eq!(tf.dc_gain, 1.0);
    }

    #[test]
    fn double_plus_simple_pole() {
        let rf = RationalFunction::new(
            Polynomial::new(vec![3.0, 2.0]),
            Polynomial::from_roots(&[-1.0, -1.0, -2.0], 1.0),
        );
        let tf = expand_repeated(&rf, DEFAULT_CLUSTER_TOL).unwrap();
        assert_eq!(tf.terms.len(), 2);
        let (a, b) = (&tf.terms[0], &tf.terms[1]);
        assert_eq!(a.multiplicity, 2);
        assert!((a.pole + 1.0).abs() < 1e-9);
        assert!((a.residues[0] - 1.0).abs() < 1e-9);
        assert!((a.residues[1] - 1.0).abs() < 1e-9);
        assert_eq!(b.multiplicity, 1);
        assert!((b.pole + 2.0).abs() < 1e-9);
        assert!((b.residues[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn near_coincident_poles_merge() {
        let rf = RationalFunction::new(
            Polynomial::new(vec![1.0]),
            Polynomial::from_roots(&[-1.0, -1.0000001], 1.0),
        );
        let merged = expand_repeated(&rf, 1e-3).unwrap();
        assert_eq!(merged.terms.len(), 1);
        assert_eq!(merged.terms[0].multiplicity, 2);
        for k in 0..30 {
            let z = s(-3.0 + 0.2 * k as f64, 0.1 + 0.3 * k as f64);
            let exact = rf.eval(z);
            let approx = crate::circuit::eval_tf(&merged, z).unwrap();
            assert!((exact - approx).norm() < 1e-6 * exact.norm());
        }
        let split = expand_repeated(&rf, 0.0).unwrap();
        assert_eq!(split.terms.len(), 2);
        assert!(split.terms.iter().all(|t| t.multiplicity == 1));
    }

    #[test]
    fn improper_and_unstable_inputs() {
        let improper = RationalFunction::new(Polynomial::new(vec![1.0, 1.0]), Polynomial::new(vec![1.0, 1.0]));
        assert!(expand_repeated(&improper, 1e-6).is_err());
        let unstable = RationalFunction::new(Polynomial::new(vec![1.0]), Polynomial::from_roots(&[1.0], 1.0));
        assert!(matches!(expand_repeated(&unstable, 1e-6), Err(Error::PositivePoleDetected(_))));
        let oscillatory = RationalFunction::new(Polynomial::new(vec![1.0]), Polynomial::new(vec![1.0, 0.0, 1.0]));
        assert!(matches!(expand_repeated(&oscillatory, 1e-6), Err(Error::ComplexPoleDetected { .. })));
    }
}
