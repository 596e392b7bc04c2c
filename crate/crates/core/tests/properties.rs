use nalgebra::DMatrix;
use proptest::prelude::*;

use goalnet::channel::{max_rate, transmit_power, RadioConfig};
use goalnet::gib::{self, GaussianSource};
use goalnet::sim::{update_queue, ConvergenceDetector};
use goalnet::slotopt::{self, lambert_w0};
use goalnet::surrogate::{self, SurrogateParams};

/// Joint covariance `M Mᵀ / n + δ I` split into its blocks.
fn source_from(d_x: usize, d_y: usize, entries: &[f64]) -> GaussianSource {
    let n = d_x + d_y;
    let m = DMatrix::from_iterator(n, n + 1, entries.iter().copied().take(n * (n + 1)));
    let joint = &m * m.transpose() / (n as f64) + DMatrix::identity(n, n) * 0.05;
    GaussianSource::new(
        joint.view((0, 0), (d_x, d_x)).into_owned(),
        joint.view((d_x, d_x), (d_y, d_y)).into_owned(),
        joint.view((0, d_x), (d_x, d_y)).into_owned(),
    )
    .unwrap()
}

fn arb_source() -> impl Strategy<Value = GaussianSource> {
    (1usize..5, 1usize..4).prop_flat_map(|(d_x, d_y)| {
        let n = d_x + d_y;
        prop::collection::vec(-1.0f64..1.0, n * (n + 1)).prop_map(move |e| source_from(d_x, d_y, &e))
    })
}

fn log2_det(m: &DMatrix<f64>) -> f64 {
    m.clone().cholesky().unwrap().l().diagonal().iter().map(|x| 2.0 * x.log2()).sum()
}

/// Direct matrix evaluation of `(I(x;z), I(z;y), NMSE)` for `z = A x + ξ`.
fn direct_measures(src: &GaussianSource, a: &DMatrix<f64>) -> (f64, f64, f64) {
    if a.nrows() == 0 {
        return (0.0, 0.0, 1.0);
    }
    let k = a.nrows();
    let eye = DMatrix::identity(k, k);
    let sigma_z = a * src.cov_x() * a.transpose() + &eye;
    let cond_x = src.cov_x() - src.cov_xy() * src.cov_y().clone().try_inverse().unwrap() * src.cov_xy().transpose();
    let sigma_z_given_y = a * cond_x * a.transpose() + &eye;
    let i_xz = 0.5 * log2_det(&sigma_z);
    let i_zy = 0.5 * (log2_det(&sigma_z) - log2_det(&sigma_z_given_y));
    let sigma_yz = src.cov_xy().transpose() * a.transpose();
    let explained = (&sigma_yz * sigma_z.try_inverse().unwrap() * sigma_yz.transpose()).trace();
    (i_xz, i_zy, 1.0 - explained / src.cov_y().trace())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn spectrum_is_whitened_eigenbasis(src in arb_source()) {
        let spec = gib::compute_spectrum(&src).unwrap();
        let cond = gib::conditional_covariance(&src).unwrap();
        for (lambda, v) in spec.eigenvalues.iter().zip(&spec.left_eigenvectors) {
            prop_assert!((0.0..=1.0).contains(lambda));
            let lhs = v.transpose() * &cond;
            let rhs = v.transpose() * src.cov_x() * *lambda;
            prop_assert!((lhs - rhs).norm() <= 1e-8 * (1.0 + v.norm().powi(2)));
            let r = (v.transpose() * src.cov_x() * v)[0];
            prop_assert!((r - 1.0).abs() <= 1e-8);
        }
        prop_assert!(spec.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn closed_form_measures_match_direct_evaluation(src in arb_source(), scale in 1.0f64..50.0) {
        let spec = gib::compute_spectrum(&src).unwrap();
        let usable = spec.usable_components();
        prop_assume!(usable > 0);
        let beta = spec.critical_betas[0] * scale;
        let proj = gib::projection(&spec, &src, beta);
        let a = proj.matrix_a.rows(0, proj.n_beta).into_owned();
        let (i_xz, i_zy, nmse) = direct_measures(&src, &a);
        let p = gib::rate_point(&src, &spec, beta).unwrap();
        prop_assert!((p.i_xz_bits - i_xz).abs() <= 1e-7 * (1.0 + i_xz), "{} vs {}", p.i_xz_bits, i_xz);
        prop_assert!((p.i_zy_bits - i_zy).abs() <= 1e-7 * (1.0 + i_zy), "{} vs {}", p.i_zy_bits, i_zy);
        prop_assert!((p.nmse - nmse).abs() <= 1e-8);
    }

    #[test]
    fn information_never_exceeds_the_source(src in arb_source(), beta in 1.0f64..1e4) {
        let spec = gib::compute_spectrum(&src).unwrap();
        let p = gib::rate_point(&src, &spec, beta).unwrap();
        let i_xy = src.mutual_information_bits().unwrap();
        prop_assert!(p.i_zy_bits <= p.i_xz_bits + 1e-10);
        prop_assert!(p.i_zy_bits <= i_xy + 1e-8);
        prop_assert!((0.0..=1.0).contains(&p.nmse));
        prop_assert!(p.entropy_bits >= p.n_active as f64);
    }

    #[test]
    fn frontier_is_monotone(src in arb_source()) {
        let betas: Vec<f64> = (0..60).map(|i| 10f64.powf(i as f64 / 12.0)).collect();
        let front = gib::frontier(&src, &betas).unwrap();
        for w in front.windows(2) {
            prop_assert!(w[1].i_xz_bits >= w[0].i_xz_bits - 1e-12);
            prop_assert!(w[1].i_zy_bits >= w[0].i_zy_bits - 1e-12);
            prop_assert!(w[1].nmse <= w[0].nmse + 1e-12);
            prop_assert!(w[1].n_active >= w[0].n_active);
        }
    }

    #[test]
    fn decoder_solves_normal_equations(src in arb_source(), scale in 1.0f64..50.0) {
        let spec = gib::compute_spectrum(&src).unwrap();
        prop_assume!(spec.usable_components() > 0);
        let proj = gib::projection(&spec, &src, spec.critical_betas[0] * scale + 1e-6);
        let (m, _) = gib::decoder_and_nmse(&src, &proj).unwrap();
        let a = &proj.matrix_a;
        let n = proj.n_beta;
        let sigma_z = (a * src.cov_x() * a.transpose() + proj.noise_cov()).view((0, 0), (n, n)).into_owned();
        let sigma_yz = (src.cov_xy().transpose() * a.transpose()).columns(0, n).into_owned();
        let m = m.columns(0, n).into_owned();
        let resid = &m * sigma_z - &sigma_yz;
        prop_assert!(resid.norm() <= 1e-9 * (1.0 + sigma_yz.norm()));
    }

    #[test]
    fn bits_and_bpp_agree(m_x in 1e-4f64..1.0, m_s in 1e-4f64..1.0) {
        let bits = surrogate::bits_count(m_x, m_s);
        let bpp = surrogate::bpp(m_x, m_s);
        prop_assert!((bits / surrogate::IMAGE_PIXELS as f64 - bpp).abs() <= 1e-15);
    }

    #[test]
    fn ops_are_linear_in_the_masks(m_x in 1e-4f64..1.0, m_s in 1e-4f64..1.0, t in 0.0f64..1.0) {
        let lhs = surrogate::ops_count(t * m_x, t * m_s);
        let rhs = t * surrogate::ops_count(m_x, m_s);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        let split = surrogate::ops_count(m_x, 0.0) + surrogate::ops_count(0.0, m_s);
        prop_assert!((surrogate::ops_count(m_x, m_s) - split).abs() <= 1e-12 * split);
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences(m_x in 0.01f64..1.0, m_s in 0.01f64..1.0) {
        let p = SurrogateParams::REFERENCE;
        let g = |x: f64, s: f64| surrogate::g_approx(x, s, &p, 1e-4).unwrap();
        let (gx, gs) = surrogate::g_gradient(m_x, m_s, &p);
        let (hx, hs) = (1e-6 * m_x, 1e-6 * m_s);
        let fx = (g(m_x + hx, m_s) - g(m_x - hx, m_s)) / (2.0 * hx);
        let fs = (g(m_x, m_s + hs) - g(m_x, m_s - hs)) / (2.0 * hs);
        prop_assert!((fx - gx).abs() <= 1e-5 * gx.abs().max(1e-3));
        prop_assert!((fs - gs).abs() <= 1e-5 * gs.abs().max(1e-3));
    }

    #[test]
    fn queues_never_go_negative(q in 0.0f64..1e3, value in -1e3f64..1e3, target in 0.0f64..1e3, lr in 0.0f64..10.0) {
        let next = update_queue(q, value, target, lr);
        prop_assert!(next >= 0.0);
        prop_assert!(next >= q + lr * (value - target) - 1e-9 * (1.0 + q));
    }

    #[test]
    fn lambert_residual(x in 1e-12f64..1e12) {
        let w = lambert_w0(x).unwrap();
        prop_assert!(w >= 0.0);
        prop_assert!((w * w.exp() - x).abs() <= 1e-12 * x.max(1.0));
    }

    #[test]
    fn rate_decision_respects_the_channel(e_t in 1e-6f64..1e3, n_bits in 1.0f64..1e5, gain in 1e-14f64..1e-8, v in 1e-2f64..1e6) {
        let radio = RadioConfig {
            bandwidth_hz: 1e4,
            noise_psd_w_per_hz: 3.981e-21,
            max_tx_power_w: 0.1,
            carrier_freq_hz: 1e9,
        };
        let r_max = max_rate(gain, &radio);
        let r = slotopt::optimal_rate(e_t, n_bits, gain, &radio, v, r_max);
        prop_assert!(r > 0.0 && r <= r_max);
        prop_assert!(transmit_power(r, gain, &radio) <= radio.max_tx_power_w * (1.0 + 1e-9));
    }

    #[test]
    fn server_split_uses_the_whole_frequency(e in prop::collection::vec(0.0f64..1e3, 1..12), v in 1e-3f64..1e6, f_c_max in 1e6f64..1e10) {
        let rho = vec![4.0; e.len()];
        let d = slotopt::solve_es(&e, 1e6, &rho, v, 1e-27, f_c_max);
        prop_assert!(d.f_c <= f_c_max);
        prop_assert!(d.f_es.iter().all(|&f| f >= 0.0));
        let total: f64 = d.f_es.iter().sum();
        prop_assert!((total - d.f_c).abs() <= 1e-9 * d.f_c.max(1e-300));
    }

    #[test]
    fn detector_matches_recomputed_window_means(
        rows in prop::collection::vec(prop::collection::vec(0.9f64..1.1, 2), 0..400),
        w in 5usize..60,
    ) {
        let tol = 0.05;
        let naive = (2 * w..=rows.len()).find(|&t| {
            (0..2).all(|q| {
                let mean = |r: std::ops::Range<usize>| rows[r].iter().map(|x| x[q]).sum::<f64>() / w as f64;
                let (m1, m2) = (mean(t - 2 * w..t - w), mean(t - w..t));
                (m2 - m1).abs() <= tol * m1.abs().max(m2.abs()) * (1.0 + 1e-12)
            })
        });
        let mut det = ConvergenceDetector::new(2, w, tol);
        prop_assert_eq!(rows.iter().find_map(|r| det.push(r)), naive);
    }
}
