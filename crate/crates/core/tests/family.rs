use quantspoof::family::*;
use proptest::prelude::*;

fn pulse() -> ObservationFamily {
    ObservationFamily::GaussianPulseDelay(PulseDelay {
        energy: 1.0,
        reflection: 1.0,
        width: 0.1,
        sample_times: vec![0.0, 0.001, 0.002],
        variance: 5.0,
    })
}

fn cases() -> Vec<(ObservationFamily, AttackForm, Vec<f64>, Vec<f64>)> {
    vec![
        (pulse(), AttackForm::DelayOffset, vec![0.02], vec![0.04]),
        (pulse(), AttackForm::AdditiveMeanOffset, vec![0.02], vec![1.0]),
        (pulse(), AttackForm::ParameterShift { scale: 2.0 }, vec![0.013], vec![0.01]),
        (ObservationFamily::GaussianMeanVariance, AttackForm::MeanAndVarianceOffset, vec![1.0, 3.0], vec![-1.5, 1.0]),
        (
            ObservationFamily::LinearGaussian { row: vec![0.6, -0.8], variance: 0.5 },
            AttackForm::OverParameterizedAdditive { basis: vec![vec![1.0, 0.5], vec![-0.3, 2.0]] },
            vec![0.4, -0.2],
            vec![0.1, 0.7],
        ),
    ]
}

#[test]
fn pulse_mean_matches_closed_form() {
    let f = pulse();
    let (m, v) = f.mean_var(&[0.02], 1);
    let u: f64 = 0.001 - 0.02;
    let expect = (2.0f64 / 0.01).powf(0.25) * (-std::f64::consts::PI * u * u / 0.01).exp();
    assert!((m - expect).abs() < 1e-15);
    assert_eq!(v, 5.0);
}

#[test]
fn analytic_derivatives_match_central_differences() {
    for (family, attack, theta, xi) in cases() {
        let dt = theta.len();
        let z: Vec<f64> = theta.iter().chain(&xi).copied().collect();
        let eval = |z: &[f64]| attack.moments(&family, &z[..dt], &z[dt..], 1);
        let m0 = eval(&z);
        let (mv, vv) = attack.mean_var(&family, &theta, &xi, 1);
        assert!((m0.mean - mv).abs() < 1e-15 && (m0.var - vv).abs() < 1e-15);
        for i in 0..z.len() {
            let h = f64::EPSILON.cbrt() * (1.0 + z[i].abs());
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let (p, m) = (eval(&zp), eval(&zm));
            let scale = 1.0 + m0.d_mean.amax();
            assert!(((p.mean - m.mean) / (2.0 * h) - m0.d_mean[i]).abs() < 1e-6 * scale);
            assert!(((p.var - m.var) / (2.0 * h) - m0.d_var[i]).abs() < 1e-6);
            let hs = 1.0 + m0.h_mean.amax();
            for l in 0..z.len() {
                let fd = (p.d_mean[l] - m.d_mean[l]) / (2.0 * h);
                assert!((fd - m0.h_mean[(i, l)]).abs() < 1e-5 * hs, "{} {} {i} {l}", family.kind(), attack.kind());
            }
        }
    }
}

proptest! {
    #[test]
    fn parameter_shift_structure(theta in -0.05f64..0.05, xi in -0.05f64..0.05, delta in -0.05f64..0.05, scale in 0.5f64..3.0) {
        let f = pulse();
        let a = AttackForm::ParameterShift { scale };
        for k in 0..3 {
            let (m1, _) = a.mean_var(&f, &[theta], &[xi], k);
            let (m2, _) = a.mean_var(&f, &[theta + delta], &[xi - scale * delta], k);
            prop_assert!((m1 - m2).abs() < 1e-12);
        }
    }
}
