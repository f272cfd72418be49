use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::mna::{assemble_system, NodalSystem};
use crate::error::{Error, Result};
use crate::network::RcNetwork;

/// `Σ_j residues[j-1] / (s - pole)^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleTerm {
    /// rad/s, strictly negative.
    pub pole: f64,
    pub multiplicity: usize,
    pub residues: Vec<f64>,
}

impl PoleTerm {
    pub fn simple(pole: f64, residue: f64) -> Self {
        PoleTerm { pole, multiplicity: 1, residues: vec![residue] }
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        let d = s - self.pole;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut pow = Complex64::new(1.0, 0.0);
        for &a in &self.residues {
            pow *= d;
            acc += a / pow;
        }
        acc
    }

    /// Contribution to `H(0)`.
    pub fn dc_contribution(&self) -> f64 {
        let q = -self.pole;
        self.residues.iter().enumerate().map(|(j, a)| a / q.powi(j as i32 + 1)).sum()
    }

    /// Size of this term's share of the step response: `Σ_j |A_j| / |p|^j`.
    pub fn step_weight(&self) -> f64 {
        let q = self.pole.abs();
        self.residues.iter().enumerate().map(|(j, a)| a.abs() / q.powi(j as i32 + 1)).sum()
    }
}

/// Pole-residue form of a strictly proper RC transfer function.
///
/// JSON: `{"dc_gain": r, "terms": [{"pole": r, "multiplicity": k, "residues": [r...]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub dc_gain: f64,
    pub terms: Vec<PoleTerm>,
}

impl TransferFunction {
    pub fn new(terms: Vec<PoleTerm>) -> Self {
        let dc_gain = terms.iter().map(PoleTerm::dc_contribution).sum();
        TransferFunction { dc_gain, terms }
    }

    /// Σ multiplicities.
    pub fn order(&self) -> usize {
        self.terms.iter().map(|t| t.multiplicity).sum()
    }

    pub fn dc_from_terms(&self) -> f64 {
        self.terms.iter().map(PoleTerm::dc_contribution).sum()
    }

    /// Largest `|p|` among the terms.
    pub fn max_pole_magnitude(&self) -> f64 {
        self.terms.iter().map(|t| t.pole.abs()).fold(0.0, f64::max)
    }

    /// Slowest time constant `1/min|p|`.
    pub fn max_time_constant(&self) -> f64 {
        let slow = self.terms.iter().map(|t| t.pole.abs()).fold(f64::INFINITY, f64::min);
        1.0 / slow
    }

    /// Term with the largest step weight; see [`PoleTerm::step_weight`].
    pub fn dominant_term(&self) -> Option<&PoleTerm> {
        self.terms.iter().max_by(|a, b| a.step_weight().total_cmp(&b.step_weight()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidArgument("transfer function has no terms".into()));
        }
        for t in &self.terms {
            if !(t.pole < 0.0) || !t.pole.is_finite() {
                return Err(Error::PositivePoleDetected(t.pole));
            }
            if t.multiplicity == 0 || t.residues.len() != t.multiplicity {
                return Err(Error::InvalidArgument(format!(
                    "term at {} has multiplicity {} but {} residues",
                    t.pole,
                    t.multiplicity,
                    t.residues.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transfer function serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tf: TransferFunction = serde_json::from_str(text)?;
        tf.validate()?;
        Ok(tf)
    }
}

/// `Σᵢ Σⱼ A_ij/(s−p_i)^j`.
pub fn eval_tf(tf: &TransferFunction, s: Complex64) -> Result<Complex64> {
    if let Some(t) = tf.terms.iter().find(|t| s.re == t.pole && s.im == 0.0) {
        return Err(Error::PoleEvaluation(t.pole));
    }
    Ok(tf.terms.iter().map(|t| t.eval(s)).sum())
}

/// Decomposes the driver→output voltage transfer of `net`.
///
/// With `C = diag(c)`, the pencil `G + pC` is reduced to the symmetric matrix
/// `C^{-1/2} G C^{-1/2} = Q Λ Qᵀ`; poles are `-λ_k` and the residue of mode
/// `k` is `(eᵀ C^{-1/2} q_k)(q_kᵀ C^{-1/2} b)`. Terms are ordered slowest first.
pub fn extract_tf(net: &RcNetwork) -> Result<TransferFunction> {
    let sys = assemble_system(net)?;
    extract_from_system(&sys)
}

pub fn extract_from_system(sys: &NodalSystem) -> Result<TransferFunction> {
    let m = sys.order();
    let scale = DVector::from_iterator(m, (0..m).map(|i| 1.0 / sys.c[(i, i)].sqrt()));
    let a = DMatrix::from_fn(m, m, |i, j| {
        // exact symmetrization; G is symmetric up to rounding in the Schur step
        0.5 * (sys.g[(i, j)] + sys.g[(j, i)]) * scale[i] * scale[j]
    });
    let eig = SymmetricEigen::new(a);
    let b_hat = sys.b.component_mul(&scale);
    let e_hat = sys.e_out.component_mul(&scale);

    let mut terms = Vec::with_capacity(m);
    for k in 0..m {
        let lambda = eig.eigenvalues[k];
        if !(lambda > 0.0) {
            return Err(Error::PositivePoleDetected(-lambda));
        }
        let q = eig.eigenvectors.column(k);
        let residue = e_hat.dot(&q) * q.dot(&b_hat);
        terms.push(PoleTerm::simple(-lambda, residue));
    }
    terms.sort_by(|x, y| y.pole.total_cmp(&x.pole));
    Ok(TransferFunction { dc_gain: sys.dc_gain()?, terms })
}

/// Poles from the unsymmetrized pencil `(C⁻¹G)` by a general real Schur
/// decomposition, checked for passivity: each must be real within
/// `1e-9·|re|` and strictly negative.
pub fn check_passivity(net: &RcNetwork) -> Result<Vec<Complex64>> {
    let sys = assemble_system(net)?;
    let m = sys.order();
    let a = DMatrix::from_fn(m, m, |i, j| -sys.g[(i, j)] / sys.c[(i, i)]);
    let mut poles: Vec<Complex64> = a.complex_eigenvalues().iter().copied().collect();
    for p in &poles {
        if p.im.abs() > 1e-9 * p.re.abs() {
            return Err(Error::ComplexPoleDetected { re: p.re, im: p.im });
        }
        if !(p.re < 0.0) {
            return Err(Error::PositivePoleDetected(p.re));
        }
    }
    poles.sort_by(|x, y| y.re.total_cmp(&x.re));
    Ok(poles)
}

/// Residues for known simple `poles`, fitted by least squares to direct
/// solves of the nodal system at real frequencies on the positive axis.
/// Independent of the eigenvector route in [`extract_tf`].
pub fn residues_by_sampling(sys: &NodalSystem, poles: &[f64]) -> Result<Vec<f64>> {
    let m = poles.len();
    let lo = poles.iter().map(|p| p.abs()).fold(f64::INFINITY, f64::min) * 0.1;
    let hi = poles.iter().map(|p| p.abs()).fold(0.0, f64::max) * 10.0;
    let n_samples = 2 * m + 2;
    let samples: Vec<f64> = (0..n_samples)
        .map(|k| lo * (hi / lo).powf(k as f64 / (n_samples - 1) as f64))
        .collect();
    // unknowns x_i = r_i / |p_i| keep the columns O(1)
    let a = DMatrix::from_fn(n_samples, m, |k, i| poles[i].abs() / (samples[k] - poles[i]));
    let h = samples
        .iter()
        .map(|&s| sys.transfer_at(Complex64::new(s, 0.0)).map(|v| v.re))
        .collect::<Result<Vec<_>>>()?;
    let rhs = DVector::from_vec(h);
    let x = a
        .svd(true, true)
        .solve(&rhs, 1e-300)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;
    Ok(x.iter().zip(poles).map(|(xi, p)| xi * p.abs()).collect())
}

/// Keeps the `max_terms` terms with the largest step weight
/// `Σ_j |A_j|/|p|^j` and recomputes `dc_gain` from what remains. Kept terms
/// stay slowest first.
pub fn truncate_dominant(tf: &TransferFunction, max_terms: usize) -> TransferFunction {
    let max_terms = max_terms.max(1);
    let mut ranked: Vec<&PoleTerm> = tf.terms.iter().collect();
    ranked.sort_by(|a, b| b.step_weight().total_cmp(&a.step_weight()));
    let mut kept: Vec<PoleTerm> = ranked.into_iter().take(max_terms).cloned().collect();
    kept.sort_by(|x, y| y.pole.total_cmp(&x.pole));
    TransferFunction::new(kept)
}

/// Worst deviation between `tf` and direct solves of the nodal system over
/// `n_freq` log-spaced points on the imaginary axis, from a hundredth of the
/// slowest pole to a hundred times the fastest. Measured relative to the
/// largest `|H(jω)|` on the sweep, since `|H|` itself falls by orders of
/// magnitude per pole above the band.
pub fn reconstruction_error(sys: &NodalSystem, tf: &TransferFunction, n_freq: usize) -> Result<f64> {
    if tf.terms.is_empty() || n_freq < 2 {
        return Err(Error::InvalidArgument("need at least one term and two frequencies".into()));
    }
    let pmin = tf.terms.iter().map(|t| t.pole.abs()).fold(f64::INFINITY, f64::min);
    let (lo, hi) = ((1e-2 * pmin).ln(), (1e2 * tf.max_pole_magnitude()).ln());
    let mut peak = 0.0f64;
    let mut worst = 0.0f64;
    for k in 0..n_freq {
        let s = Complex64::new(0.0, (lo + (hi - lo) * k as f64 / (n_freq - 1) as f64).exp());
        let direct = sys.transfer_at(s)?;
        peak = peak.max(direct.norm());
        worst = worst.max((direct - eval_tf(tf, s)?).norm());
    }
    Ok(worst / peak)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spef::{generate_spef, ValueRanges};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_pole_rc() {
        let net = RcNetwork::single_rc(1.0, 1.0).unwrap();
        let tf = extract_tf(&net).unwrap();
        assert_eq!(tf.terms.len(), 1);
        assert!((tf.terms[0].pole + 1.0).abs() < 1e-15);
        assert!((tf.terms[0].residues[0] - 1.0).abs() < 1e-15);
        assert!((tf.dc_gain - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_node_ladder_closed_form() {
        // det(G + sC) = s² + 3s + 1, N(s) = 1 for R=C=1
        let net = RcNetwork::ladder(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        let tf = extract_tf(&net).unwrap();
        let sqrt5 = 5f64.sqrt();
        let p_slow = -(3.0 - sqrt5) / 2.0;
        let p_fast = -(3.0 + sqrt5) / 2.0;
        // r_i = N(p_i)/D'(p_i) = 1/(2 p_i + 3)
        let r_slow = 1.0 / (2.0 * p_slow + 3.0);
        let r_fast = 1.0 / (2.0 * p_fast + 3.0);
        assert!((tf.terms[0].pole - p_slow).abs() < 1e-14);
        assert!((tf.terms[1].pole - p_fast).abs() < 1e-14);
        assert!((tf.terms[0].residues[0] - r_slow).abs() < 1e-14);
        assert!((tf.terms[1].residues[0] - r_fast).abs() < 1e-14);
        let dc: f64 = tf.terms.iter().map(|t| -t.residues[0] / t.pole).sum();
        assert!((dc - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eval_single_term() {
        let tf = TransferFunction::new(vec![PoleTerm::simple(-1.0, 1.0)]);
        let h0 = eval_tf(&tf, c(0.0, 0.0)).unwrap();
        assert!((h0 - c(1.0, 0.0)).norm() < 1e-15);
        let hj = eval_tf(&tf, c(0.0, 1.0)).unwrap();
        assert!((hj - c(0.5, -0.5)).norm() < 1e-15);
        assert!(matches!(eval_tf(&tf, c(-1.0, 0.0)), Err(Error::PoleEvaluation(_))));
    }

    #[test]
    fn reference_net_decomposition_matches_direct_solve() {
        let spef = generate_spef(5, 0, &ValueRanges::reference_net()).unwrap();
        let net = crate::network::to_network(&spef, "I1:Y", "I2:A").unwrap();
        let tf = extract_tf(&net).unwrap();
        assert_eq!(tf.terms.len(), 5);
        for w in tf.terms.windows(2) {
            assert!(w[1].pole < w[0].pole);
        }
        assert!(tf.terms.iter().all(|t| t.pole < 0.0));
        let sys = assemble_system(&net).unwrap();
        let (lo, hi) = (tf.terms[0].pole.abs() * 1e-2, tf.max_pole_magnitude() * 1e2);
        for k in 0..50 {
            let w = lo * (hi / lo).powf(k as f64 / 49.0);
            let direct = sys.transfer_at(c(0.0, w)).unwrap();
            let pf = eval_tf(&tf, c(0.0, w)).unwrap();
            assert!((direct - pf).norm() < 1e-8 * direct.norm().max(1e-300) || (direct - pf).norm() < 1e-12);
        }
        for k in 0..20 {
            let s = c(-1e9 * (k as f64 + 0.5), 3e10 * k as f64);
            let direct = sys.transfer_at(s).unwrap();
            assert!((direct - eval_tf(&tf, s).unwrap()).norm() < 1e-8 * direct.norm());
        }
    }

    #[test]
    fn sampled_residues_agree_with_eigen_route() {
        let net = RcNetwork::ladder(&[3.0, 1.0, 2.0, 0.5], &[1.0, 2.0, 0.7, 1.5]).unwrap();
        let tf = extract_tf(&net).unwrap();
        let sys = assemble_system(&net).unwrap();
        let poles: Vec<f64> = tf.terms.iter().map(|t| t.pole).collect();
        let fitted = residues_by_sampling(&sys, &poles).unwrap();
        let scale = tf.terms.iter().map(|t| t.residues[0].abs()).fold(0.0, f64::max);
        for (t, r) in tf.terms.iter().zip(&fitted) {
            assert!((t.residues[0] - r).abs() < 1e-7 * scale, "{} vs {}", t.residues[0], r);
        }
    }

    #[test]
    fn passivity_check_agrees_with_symmetric_route() {
        let net = RcNetwork::ladder(&[3.0, 1.0, 2.0], &[1.0, 2.0, 0.7]).unwrap();
        let tf = extract_tf(&net).unwrap();
        let poles = check_passivity(&net).unwrap();
        for (t, p) in tf.terms.iter().zip(&poles) {
            assert!((t.pole - p.re).abs() < 1e-12 * t.pole.abs());
        }
    }

    #[test]
    fn truncation() {
        let tf = TransferFunction::new(vec![PoleTerm::simple(-1.0, 10.0), PoleTerm::simple(-2.0, 0.1)]);
        assert_eq!(truncate_dominant(&tf, 5), tf);
        let one = truncate_dominant(&tf, 1);
        assert_eq!(one.terms, vec![PoleTerm::simple(-1.0, 10.0)]);
        assert!((one.dc_gain - 10.0).abs() < 1e-15);
    }

    #[test]
    fn json_layout() {
        let tf = TransferFunction {
            dc_gain: 1.0,
            terms: vec![PoleTerm { pole: -2.0, multiplicity: 2, residues: vec![0.5, 1.0] }],
        };
        let v: serde_json::Value = serde_json::from_str(&tf.to_json()).unwrap();
        assert_eq!(v["dc_gain"], 1.0);
        assert_eq!(v["terms"][0]["pole"], -2.0);
        assert_eq!(v["terms"][0]["multiplicity"], 2);
        assert_eq!(v["terms"][0]["residues"][1], 1.0);
        assert_eq!(TransferFunction::from_json(&tf.to_json()).unwrap(), tf);
        assert!(TransferFunction::from_json(r#"{"dc_gain":1,"terms":[{"pole":1,"multiplicity":1,"residues":[1]}]}"#).is_err());
    }
}
