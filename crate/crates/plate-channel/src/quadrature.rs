//! Quadrature rules on the reference triangle and segment.
//!
//! Triangle rules are symmetric Gauss rules of exactness degree 1–6 in
//! barycentric form; weights are normalized so that
//! ∫_K f ≈ (2|K|) · Σ w_q f(λ_q), i.e. the weights sum to the reference
//! area 1/2. Segment rules are Gauss–Legendre on [0,1].
//!
//! The degree-6 triangle rule matters beyond accuracy: the whole energy
//! verification relies on every module integrating with the *same* points
//! and weights, so the assembly rule is built once and shared.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub degree: usize,
    /// Barycentric coordinates of the triangle points.
    pub tri_points: Vec<[f64; 3]>,
    /// Triangle weights; sum = 1/2.
    pub tri_weights: Vec<f64>,
    /// Segment points in [0,1].
    pub seg_points: Vec<f64>,
    /// Segment weights; sum = 1.
    pub seg_weights: Vec<f64>,
}

/// Gauss–Legendre points/weights on [0,1]; n ∈ 1..=5 (exact to degree 2n−1).
pub fn gauss_segment(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Nodes/weights on [-1,1].
    let (x, w): (&[f64], &[f64]) = match n {
        1 => (&[0.0], &[2.0]),
        2 => (&[-0.577_350_269_189_625_7, 0.577_350_269_189_625_7], &[1.0, 1.0]),
        3 => (
            &[-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4],
            &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0],
        ),
        4 => (
            &[
                -0.861_136_311_594_052_6,
                -0.339_981_043_584_856_3,
                0.339_981_043_584_856_3,
                0.861_136_311_594_052_6,
            ],
            &[
                0.347_854_845_137_453_86,
                0.652_145_154_862_546_1,
                0.652_145_154_862_546_1,
                0.347_854_845_137_453_86,
            ],
        ),
        5 => (
            &[
                -0.906_179_845_938_664,
                -0.538_469_310_105_683_1,
                0.0,
                0.538_469_310_105_683_1,
                0.906_179_845_938_664,
            ],
            &[
                0.236_926_885_056_189_08,
                0.478_628_670_499_366_47,
                0.568_888_888_888_888_9,
                0.478_628_670_499_366_47,
                0.236_926_885_056_189_08,
            ],
        ),
        _ => panic!("gauss_segment: n = {n} not tabulated (1..=5)"),
    };
    let pts = x.iter().map(|&t| 0.5 * (t + 1.0)).collect();
    let wts = w.iter().map(|&wi| 0.5 * wi).collect();
    (pts, wts)
}

fn orbit3(a: f64) -> Vec<[f64; 3]> {
    let b = 1.0 - 2.0 * a;
    vec![[b, a, a], [a, b, a], [a, a, b]]
}

fn orbit6(a: f64, b: f64) -> Vec<[f64; 3]> {
    let c = 1.0 - a - b;
    vec![[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]]
}

/// Symmetric triangle rule of the requested exactness degree (1..=6), paired
/// with the Gauss segment rule of at least matching degree.
pub fn quadrature_rule(degree: usize) -> Result<QuadratureRule> {
    let (pts, wts): (Vec<[f64; 3]>, Vec<f64>) = match degree {
        1 => (vec![[1.0 / 3.0; 3]], vec![1.0]),
        2 => (orbit3(1.0 / 6.0), vec![1.0 / 3.0; 3]),
        3 => {
            // Six-point degree-3 rule with equal (positive) weights.
            let p = orbit6(0.659_027_622_374_092, 0.231_933_368_553_031);
            (p, vec![1.0 / 6.0; 6])
        }
        4 => {
            let mut p = orbit3(0.091_576_213_509_771);
            p.extend(orbit3(0.445_948_490_915_965));
            let mut w = vec![0.109_951_743_655_322; 3];
            w.extend(vec![0.223_381_589_678_011; 3]);
            (p, w)
        }
        5 => {
            let mut p = vec![[1.0 / 3.0; 3]];
            p.extend(orbit3(0.470_142_064_105_115));
            p.extend(orbit3(0.101_286_507_323_456));
            let mut w = vec![0.225];
            w.extend(vec![0.132_394_152_788_506; 3]);
            w.extend(vec![0.125_939_180_544_827; 3]);
            (p, w)
        }
        6 => {
            let mut p = orbit3(0.249_286_745_170_910);
            p.extend(orbit3(0.063_089_014_491_502));
            p.extend(orbit6(0.053_145_049_844_816, 0.310_352_451_033_785));
            let mut w = vec![0.116_786_275_726_379; 3];
            w.extend(vec![0.050_844_906_370_207; 3]);
            w.extend(vec![0.082_851_075_618_374; 6]);
            (p, w)
        }
        _ => {
            return Err(Error::Structural(format!(
                "quadrature degree {degree} unsupported (1..=6)"
            )))
        }
    };
    // Normalize: tabulated weights sum to 1; store them summing to the
    // reference area 1/2 so that ∫_K f = (2|K|)·Σ w f.
    let tri_weights = wts.iter().map(|w| 0.5 * w).collect();
    let n_seg = ((degree + 1).div_ceil(2)).clamp(2, 5);
    let (seg_points, seg_weights) = gauss_segment(n_seg);
    Ok(QuadratureRule {
        degree,
        tri_points: pts,
        tri_weights,
        seg_points,
        seg_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ∫ λ0^a λ1^b λ2^c over the reference triangle (2|K| = 1) in closed form.
    fn exact(a: u32, b: u32, c: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>().max(1.0);
        fact(a) * fact(b) * fact(c) / fact(a + b + c + 2)
    }

    fn integrate(rule: &QuadratureRule, f: impl Fn(&[f64; 3]) -> f64) -> f64 {
        rule.tri_points
            .iter()
            .zip(&rule.tri_weights)
            .map(|(p, w)| w * f(p))
            .sum()
    }

    #[test]
    fn weights_sum_to_reference_area() {
        for d in 1..=6 {
            let r = quadrature_rule(d).unwrap();
            let s: f64 = r.tri_weights.iter().sum();
            assert!((s - 0.5).abs() < 1e-14, "degree {d}: {s}");
            let sw: f64 = r.seg_weights.iter().sum();
            assert!((sw - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn exactness_up_to_declared_degree() {
        for d in 1..=6usize {
            let r = quadrature_rule(d).unwrap();
            for a in 0..=d as u32 {
                for b in 0..=(d as u32 - a) {
                    let c = d as u32 - a - b;
                    let got = integrate(&r, |l| {
                        l[0].powi(a as i32) * l[1].powi(b as i32) * l[2].powi(c as i32)
                    });
                    let want = exact(a, b, c);
                    assert!(
                        (got - want).abs() < 1e-15 + 1e-13 * want.abs(),
                        "degree {d}, monomial ({a},{b},{c}): got {got}, want {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn degree2_quadratics_tight() {
        let r = quadrature_rule(2).unwrap();
        // x = λ1, y = λ2 on the unit reference triangle.
        for (f, want) in [
            (Box::new(|l: &[f64; 3]| l[1] * l[1]) as Box<dyn Fn(&[f64; 3]) -> f64>, 1.0 / 12.0),
            (Box::new(|l: &[f64; 3]| l[1] * l[2]), 1.0 / 24.0),
            (Box::new(|l: &[f64; 3]| l[2] * l[2]), 1.0 / 12.0),
        ] {
            assert!((integrate(&r, f) - want).abs() <= 1e-15);
        }
    }

    #[test]
    fn degree6_integrates_squared_bubble() {
        // b = 27 λ0λ1λ2; ∫ b² = 81/560 on the reference triangle (2|K| = 1).
        let r = quadrature_rule(6).unwrap();
        let got = integrate(&r, |l| {
            let b = 27.0 * l[0] * l[1] * l[2];
            b * b
        });
        assert!((got - 81.0 / 560.0).abs() < 1e-14, "got {got}");
    }

    #[test]
    fn unsupported_degree_rejected() {
        assert!(quadrature_rule(0).is_err());
        assert!(quadrature_rule(7).is_err());
    }

    #[test]
    fn segment_rules_integrate_polynomials() {
        for n in 1..=5usize {
            let (p, w) = gauss_segment(n);
            for k in 0..=(2 * n - 1) as u32 {
                let got: f64 = p.iter().zip(&w).map(|(&x, &wi)| wi * x.powi(k as i32)).sum();
                let want = 1.0 / (k as f64 + 1.0);
                assert!((got - want).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }
}
