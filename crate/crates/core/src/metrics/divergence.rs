use crate::error::{ensure, Result};

/// Probability floor applied before taking logs of model outputs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Jensen–Shannon divergence (natural log), in `[0, ln 2]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    ensure!(p.len() == q.len(), "distributions have lengths {} and {}", p.len(), q.len());
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).ln();
        }
    }
    Ok(total.clamp(0.0, std::f64::consts::LN_2))
}

fn clamp_renormalize(p: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = p.iter().map(|v| v.clamp(PROB_FLOOR, 1.0)).collect();
    let total: f64 = clamped.iter().sum();
    clamped.iter().map(|v| v / total).collect()
}

/// Symmetric KL divergence `KL(p||q) + KL(q||p)` after flooring both inputs at
/// [`PROB_FLOOR`] and renormalising.
pub fn sym_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    ensure!(p.len() == q.len(), "distributions have lengths {} and {}", p.len(), q.len());
    let p = clamp_renormalize(p);
    let q = clamp_renormalize(q);
    Ok(p.iter().zip(&q).map(|(a, b)| (a - b) * (a.ln() - b.ln())).sum::<f64>().max(0.0))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-6).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    #[test]
    fn js_fixed_points() {
        assert_eq!(js_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(js_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn js_matches_term_by_term_summation() {
        // m = (0.375, 0.625)
        let expected = 0.5 * (0.5 * (0.5f64 / 0.375).ln() + 0.5 * (0.5f64 / 0.625).ln())
            + 0.5 * (0.25 * (0.25f64 / 0.375).ln() + 0.75 * (0.75f64 / 0.625).ln());
        let got = js_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.033_822_075_568_605_205).abs() < 1e-12);
    }

    #[test]
    fn sym_kl_matches_direct_sum() {
        let expected = 0.9 * (0.9f64 / 0.1).ln() + 0.1 * (0.1f64 / 0.9).ln();
        let got = sym_kl(&[0.9, 0.1], &[0.1, 0.9]).unwrap();
        assert!((got - 2.0 * expected).abs() < 1e-12);
        assert_eq!(sym_kl(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        // A saturated output stays finite.
        assert!(sym_kl(&[1.0, 0.0], &[0.0, 1.0]).unwrap().is_finite());
    }

    proptest! {
        #[test]
        fn divergence_axioms(p in simplex(4), q in simplex(4)) {
            let js = js_divergence(&p, &q).unwrap();
            prop_assert!((js - js_divergence(&q, &p).unwrap()).abs() < 1e-15);
            prop_assert!((0.0..=std::f64::consts::LN_2).contains(&js));
            prop_assert!(js_divergence(&p, &p).unwrap().abs() < 1e-15);
            let kl = sym_kl(&p, &q).unwrap();
            prop_assert!((kl - sym_kl(&q, &p).unwrap()).abs() < 1e-12);
            prop_assert!(kl >= 0.0);
            prop_assert_eq!(sym_kl(&p, &p).unwrap(), 0.0);
        }
    }
}
