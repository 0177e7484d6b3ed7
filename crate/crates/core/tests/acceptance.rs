//! Acceptance report: one PASS/FAIL line per criterion on stdout (written
//! past the test harness capture), then a single assertion over criteria 1-9.
//! Lines tagged `E` are supplementary estimator examples that are reported
//! but not asserted; see the README for the ones that do not hold.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use quantspoof::classify::{classify_all, classify_group, ClassifierConfig, Verdict};
use quantspoof::estimator::{em_relaxed, em_relaxed_runs, SolverOptions, SufficientStats};
use quantspoof::family::{AttackForm, ObservationFamily, PulseDelay};
use quantspoof::fisher::{build_fim_bundle, crb};
use quantspoof::harness::{generate_data, run_experiment, ExperimentRow, TrialOutcome};
use quantspoof::model::{NetworkModel, ParameterPoint, Sensor};
use quantspoof::pmf::{pmf_bundle, sample_level, sensor_bundle};
use quantspoof::quantizer::Quantizer;
use quantspoof::scenario::{make_scenario, Overrides, Preset, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MASTER_SEED: u64 = 2024;
const DRFM_GRID: [usize; 4] = [250, 500, 1000, 2000];
const DRFM_TRIALS: usize = 100;
const DELAY_GRID: [usize; 2] = [100, 500];
const DELAY_TRIALS: usize = 30;

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn line(&mut self, id: &str, name: &str, pass: bool, detail: String) {
        let status = if pass { "PASS" } else { "FAIL" };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "[{status}] {id:>3} {name}: {detail}");
        let _ = out.flush();
        if !pass && !id.starts_with('E') {
            self.failed.push(id.to_string());
        }
    }
}

fn preset(p: Preset) -> Scenario {
    make_scenario(p, &Overrides::default()).unwrap()
}

/// Desk-scale solver settings used by the Monte Carlo criteria.
fn desk_options() -> SolverOptions {
    SolverOptions { em_max_iter: 100, ..SolverOptions::default() }
}

fn fro(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_quantizer(rng: &mut ChaCha8Rng, center: f64, spread: f64, max_levels: usize) -> Quantizer {
    loop {
        let n = rng.random_range(1..max_levels);
        let mut t: Vec<f64> = (0..n).map(|_| center + spread * uniform(rng, -2.0, 2.0)).collect();
        t.sort_by(f64::total_cmp);
        if t.windows(2).all(|w| w[1] - w[0] > 1e-3 * spread) {
            return Quantizer::new(t).unwrap();
        }
    }
}

fn random_pulse(rng: &mut ChaCha8Rng, samples: usize) -> PulseDelay {
    let spacing = uniform(rng, 0.001, 0.01);
    PulseDelay {
        energy: uniform(rng, 0.5, 2.0),
        reflection: uniform(rng, 0.5, 1.5),
        width: uniform(rng, 0.05, 0.2),
        sample_times: (0..samples).map(|m| m as f64 * spacing).collect(),
        variance: uniform(rng, 0.5, 5.0),
    }
}

fn unit_row(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = uniform(rng, 0.0, std::f64::consts::PI);
    vec![a.cos(), a.sin()]
}

// ---------------------------------------------------------------- criterion 1

fn criterion_1(r: &mut Report) {
    let start = Instant::now();
    let sc = preset(Preset::DrfmDelay);
    let report = crb(&build_fim_bundle(&sc.model, &sc.truth).unwrap()).unwrap();
    let esa = report.crb_esa.clone().unwrap();
    let rel = fro(&(&esa - &report.crb_unattacked)) / fro(&report.crb_unattacked);
    let c = classify_all(&sc.model, &sc.truth, &ClassifierConfig::default()).unwrap();
    let all_oesa = c.groups.iter().all(|v| v.verdict == Verdict::Oesa);
    let secs = start.elapsed().as_secs_f64();
    r.line(
        "1",
        "OESA equality (drfm-delay)",
        rel < 1e-8 && all_oesa && secs < 1.0,
        format!("relative Frobenius gap {rel:.2e} (< 1e-8), all groups OESA: {all_oesa}, {secs:.3} s (< 1 s)"),
    );
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2(r: &mut Report) {
    let mut worst = 0.0f64;
    let mut all_checked = true;
    for seed in 0..50u64 {
        let k = 1 + (seed % 3) as usize;
        let levels = 2 + ((seed / 3) % 2) as usize;
        let attacked = if seed % 2 == 0 { "1" } else { "1,2" };
        let members = attacked.split(',').count();
        let d_p = members * k * (levels - 1) + 1;
        let ov = Overrides::from_pairs([
            ("seed", seed.to_string().as_str()),
            ("K", k.to_string().as_str()),
            ("R", levels.to_string().as_str()),
            ("attacked", attacked),
            ("D_p", d_p.to_string().as_str()),
        ])
        .unwrap();
        let sc = make_scenario(Preset::OverparamIsa, &ov).unwrap();
        let bundle = build_fim_bundle(&sc.model, &sc.truth).unwrap();
        let sv = bundle.j_tau[0].clone().svd(false, false).singular_values;
        let ratio = sv.min() / sv.max();
        worst = worst.max(ratio);
        let v = classify_group(&sc.model, &sc.truth, 1, &ClassifierConfig::default()).unwrap();
        all_checked &= v.dimension_check && v.is_isa;
    }
    r.line(
        "2",
        "ISA rank bound (overparam-isa, 50 seeds)",
        worst < 1e-10 && all_checked,
        format!("max sigma_min/sigma_max of J_tau {worst:.2e} (< 1e-10), dimension_check true for all: {all_checked}"),
    );
}

// ---------------------------------------------------------------- criterion 3

/// Central-difference Jacobian of the pmf over `[theta; xi]`.
fn fd_jacobian(sensor: &Sensor, theta: &[f64], xi: Option<&[f64]>, k: usize, scales: &[f64]) -> DMatrix<f64> {
    let dt = theta.len();
    let n = dt + xi.map_or(0, <[f64]>::len);
    let levels = sensor.levels();
    let mut jac = DMatrix::zeros(n, levels);
    for i in 0..n {
        let h = 1e-6 * scales[i];
        let eval = |delta: f64| {
            let mut t = theta.to_vec();
            let mut x = xi.map(<[f64]>::to_vec);
            if i < dt {
                t[i] += delta;
            } else {
                x.as_mut().unwrap()[i - dt] += delta;
            }
            sensor_bundle(sensor, 0, &t, x.as_deref(), k).unwrap().pmf
        };
        let (up, down) = (eval(h), eval(-h));
        for l in 0..levels {
            jac[(i, l)] = (up[l] - down[l]) / (2.0 * h);
        }
    }
    jac
}

struct Draw {
    sensor: Sensor,
    theta: Vec<f64>,
    xi: Option<Vec<f64>>,
    k: usize,
    scales: Vec<f64>,
}

fn fd_draw(rng: &mut ChaCha8Rng, i: usize) -> Draw {
    let attacked = i % 2 == 0;
    let (family, attack, theta, xi, scales, k) = match i % 5 {
        0 => {
            let var = uniform(rng, 0.3, 4.0);
            (ObservationFamily::GaussianMean { variance: var }, AttackForm::AdditiveMeanOffset, vec![uniform(rng, -2.0, 2.0)], vec![uniform(rng, -1.0, 1.0)], vec![1.0, 1.0], 0)
        }
        1 => {
            let v = uniform(rng, 0.5, 4.0);
            let xi = vec![uniform(rng, -1.0, 1.0), uniform(rng, -0.3 * v, v)];
            (ObservationFamily::GaussianMeanVariance, AttackForm::MeanAndVarianceOffset, vec![uniform(rng, -2.0, 2.0), v], xi, vec![1.0; 4], 0)
        }
        2 => {
            let fam = ObservationFamily::LinearGaussian { row: unit_row(rng), variance: uniform(rng, 0.3, 3.0) };
            let scale = uniform(rng, -2.0, 2.0);
            let theta = vec![uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)];
            let xi = vec![uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)];
            (fam, AttackForm::ParameterShift { scale }, theta, xi, vec![1.0; 4], 0)
        }
        3 => {
            let m = rng.random_range(1..7);
            let k = rng.random_range(0..m);
            let fam = ObservationFamily::GaussianPulseDelay(random_pulse(rng, m));
            (fam, AttackForm::DelayOffset, vec![uniform(rng, 0.0, 0.05)], vec![uniform(rng, 0.0, 0.06)], vec![0.01, 0.01], k)
        }
        _ => {
            let m = rng.random_range(1..7);
            let k = rng.random_range(0..m);
            let fam = ObservationFamily::GaussianPulseDelay(random_pulse(rng, m));
            (fam, AttackForm::AdditiveMeanOffset, vec![uniform(rng, 0.0, 0.05)], vec![uniform(rng, -2.0, 2.0)], vec![0.01, 1.0], k)
        }
    };
    let probe = Sensor { quantizer: Quantizer::new(vec![0.0]).unwrap(), family, attack, observations: 1 };
    let xi = attacked.then_some(xi);
    let (mean, var) = probe.mean_var(&theta, xi.as_deref(), k);
    let quantizer = random_quantizer(rng, mean, var.sqrt(), 9);
    Draw { sensor: Sensor { quantizer, ..probe }, theta, xi, k, scales }
}

fn criterion_3(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let d = fd_draw(&mut rng, i);
        let b = sensor_bundle(&d.sensor, 0, &d.theta, d.xi.as_deref(), d.k).unwrap();
        let analytic = if d.xi.is_some() {
            let mut m = DMatrix::zeros(b.d_theta.nrows() + b.d_attack.nrows(), b.levels());
            m.view_mut((0, 0), b.d_theta.shape()).copy_from(&b.d_theta);
            m.view_mut((b.d_theta.nrows(), 0), b.d_attack.shape()).copy_from(&b.d_attack);
            m
        } else {
            b.d_theta.clone()
        };
        let fd = fd_jacobian(&d.sensor, &d.theta, d.xi.as_deref(), d.k, &d.scales);
        let rel = (&analytic - &fd).amax() / fd.amax();
        worst = worst.max(rel);
    }
    r.line(
        "3a",
        "FIM correctness: analytic vs central-difference pmf derivatives (200 draws)",
        worst < 1e-6,
        format!("worst relative error {worst:.2e} (< 1e-6)"),
    );

    // Score covariance for rss-injection at K = 1.
    let sc = preset(Preset::RssInjection).with_rounds(1).unwrap();
    let bundle = build_fim_bundle(&sc.model, &sc.truth).unwrap();
    let j = &bundle.joint;
    let dim = j.nrows();
    let dt = sc.model.theta_dim();
    let per_sensor: Vec<_> = (0..sc.model.n_sensors())
        .map(|s| {
            let p = sc.model.group_of(s);
            (p, pmf_bundle(&sc.model, &sc.truth, s, 0, p != 0).unwrap())
        })
        .collect();
    let samples = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED + 3);
    let mut acc = DMatrix::<f64>::zeros(dim, dim);
    let mut score = nalgebra::DVector::<f64>::zeros(dim);
    for _ in 0..samples {
        score.fill(0.0);
        for (s, (p, b)) in per_sensor.iter().enumerate() {
            let l = sample_level(&sc.model, &sc.truth, s, 0, &mut rng).unwrap() - 1;
            let inv = 1.0 / b.pmf[l];
            for a in 0..dt {
                score[a] += b.d_theta[(a, l)] * inv;
            }
            if *p != 0 {
                let off = bundle.tau_offset(*p);
                for a in 0..b.d_attack.nrows() {
                    score[off + a] += b.d_attack[(a, l)] * inv;
                }
            }
        }
        acc.ger(1.0, &score, &score, 1.0);
    }
    acc /= samples as f64;
    let mut worst_mc = 0.0f64;
    let mut checked = 0;
    for a in 0..dim {
        for c in 0..dim {
            if j[(a, c)].abs() > 0.01 {
                worst_mc = worst_mc.max((acc[(a, c)] - j[(a, c)]).abs() / j[(a, c)].abs());
                checked += 1;
            }
        }
    }
    r.line(
        "3b",
        "FIM correctness: Monte Carlo score covariance (rss-injection, K=1, 1e5 samples)",
        worst_mc < 0.05,
        format!("worst relative deviation {worst_mc:.4} over {checked} entries with |J| > 0.01 (< 0.05)"),
    );
}

// ---------------------------------------------------------------- criterion 4

fn random_problem(rng: &mut ChaCha8Rng, i: usize) -> Scenario {
    let n = 6;
    let k = 50;
    let n_attacked = rng.random_range(0..3);
    let mut order: Vec<usize> = (0..n).collect();
    for a in 0..n {
        let b = rng.random_range(a..n);
        order.swap(a, b);
    }
    let attacked: Vec<usize> = order[..n_attacked].to_vec();
    let sign = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let (family_of, attack, theta, tau_of): (Box<dyn Fn(&mut ChaCha8Rng) -> ObservationFamily>, AttackForm, Vec<f64>, Box<dyn Fn(&mut ChaCha8Rng) -> Vec<f64>>) =
        match i % 4 {
            0 => {
                let var = uniform(rng, 0.5, 3.0);
                (
                    Box::new(move |_| ObservationFamily::GaussianMean { variance: var }),
                    AttackForm::AdditiveMeanOffset,
                    vec![uniform(rng, -1.0, 1.0)],
                    Box::new(move |rng| vec![sign(rng) * uniform(rng, 0.5, 1.5)]),
                )
            }
            1 => (
                Box::new(|_| ObservationFamily::GaussianMeanVariance),
                AttackForm::MeanAndVarianceOffset,
                vec![uniform(rng, -1.0, 1.0), uniform(rng, 1.0, 3.0)],
                Box::new(move |rng| vec![sign(rng) * uniform(rng, 0.5, 1.5), uniform(rng, 0.0, 1.0)]),
            ),
            2 => (
                Box::new(|rng| ObservationFamily::LinearGaussian { row: unit_row(rng), variance: 1.0 }),
                AttackForm::ParameterShift { scale: 1.0 },
                vec![uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)],
                Box::new(|rng| vec![uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)]),
            ),
            _ => (
                Box::new(|_| {
                    ObservationFamily::GaussianPulseDelay(PulseDelay {
                        energy: 1.0,
                        reflection: 1.0,
                        width: 0.1,
                        sample_times: vec![0.0, 0.001, 0.002],
                        variance: 5.0,
                    })
                }),
                AttackForm::DelayOffset,
                vec![0.02],
                Box::new(|rng| vec![uniform(rng, 0.03, 0.07)]),
            ),
        };
    let families: Vec<ObservationFamily> = (0..n).map(|_| family_of(rng)).collect();
    let probe = Sensor { quantizer: Quantizer::new(vec![0.0]).unwrap(), family: families[0].clone(), attack: attack.clone(), observations: k };
    let (mean, var) = probe.mean_var(&theta, None, 0);
    let quantizer = random_quantizer(rng, mean, var.sqrt(), 8);
    let sensors = families
        .into_iter()
        .map(|family| Sensor { quantizer: quantizer.clone(), family, attack: attack.clone(), observations: k })
        .collect();
    let groups: Vec<Vec<usize>> = attacked.iter().map(|&j| vec![j]).collect();
    let tau = attacked.iter().map(|_| tau_of(rng)).collect();
    let model = NetworkModel::new(sensors, groups).unwrap();
    let theta_init = if i % 4 == 1 { vec![0.0, 1.0] } else { vec![0.0; theta.len()] };
    Scenario { preset: None, model, truth: ParameterPoint { theta, tau }, d_q: 0.0, seed: i as u64, theta_init }
}

fn criterion_4(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED + 4);
    let mut worst_drop = 0.0f64;
    let mut runs = 0;
    let mut errors = 0;
    for i in 0..100 {
        let sc = random_problem(&mut rng, i);
        let data = generate_data(&sc, &mut rng).unwrap();
        let stats = SufficientStats::new(&sc.model, &data).unwrap();
        let opts = SolverOptions { restarts: 2, em_max_iter: 200, seed: i as u64, ..SolverOptions::default() };
        match em_relaxed_runs(&sc.model, &stats, None, &opts) {
            Ok(states) => {
                for s in states.into_iter().flatten() {
                    runs += 1;
                    for w in s.trace.windows(2) {
                        worst_drop = worst_drop.max(w[0] - w[1]);
                    }
                }
            }
            Err(_) => errors += 1,
        }
    }
    r.line(
        "4",
        "EM ascent (100 random problems, N=6, K=50)",
        worst_drop <= 1e-9 && errors == 0,
        format!("largest objective decrease {worst_drop:.2e} (slack 1e-9) over {runs} EM runs, {errors} errors"),
    );
}

// ---------------------------------------------------------------- criterion 5

/// `J_{A_p} - B_p J_tau^{-1} B_p^T` through a Cholesky solve; `None` if `J_tau` is not
/// comfortably positive definite (the model is not estimable).
fn information_loss(j_a: &DMatrix<f64>, b: &DMatrix<f64>, j_tau: &DMatrix<f64>) -> Option<f64> {
    let eig = j_tau.clone().symmetric_eigen().eigenvalues;
    if eig.min() <= 1e-9 * eig.max() {
        return None;
    }
    let chol = j_tau.clone().cholesky()?;
    let x = chol.solve(&b.transpose());
    Some(fro(&(j_a - b * x)) / fro(j_a))
}

enum Kind {
    ShiftForm,
    Injection,
    Mixed,
}

fn classifier_model(rng: &mut ChaCha8Rng, kind: &Kind) -> (NetworkModel, ParameterPoint) {
    let n = rng.random_range(4..7);
    let obs = rng.random_range(5..30);
    let choice = match kind {
        Kind::ShiftForm => rng.random_range(0..3),
        Kind::Injection => 3 + rng.random_range(0..2),
        Kind::Mixed => rng.random_range(0..7),
    };
    // (family per sensor, attack, theta, tau dimension)
    let m = rng.random_range(2..8);
    let pulse = random_pulse(rng, m);
    let var = uniform(rng, 0.5, 3.0);
    let (attack, theta, tau_dim): (AttackForm, Vec<f64>, usize) = match choice {
        0 => (AttackForm::ParameterShift { scale: uniform(rng, 0.5, 2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 } }, vec![uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)], 2),
        1 => (AttackForm::DelayOffset, vec![uniform(rng, 0.0, 0.05)], 1),
        2 => (AttackForm::AdditiveMeanOffset, vec![uniform(rng, -1.0, 1.0)], 1),
        3 => (AttackForm::AdditiveMeanOffset, vec![uniform(rng, 0.0, 0.05)], 1),
        4 => (AttackForm::AdditiveMeanOffset, vec![uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)], 1),
        5 => (AttackForm::MeanAndVarianceOffset, vec![uniform(rng, -1.0, 1.0), uniform(rng, 1.0, 3.0)], 2),
        _ => (AttackForm::MeanAndVarianceOffset, vec![uniform(rng, -1.0, 1.0)], 2),
    };
    let family = |rng: &mut ChaCha8Rng| match choice {
        0 | 4 => ObservationFamily::LinearGaussian { row: unit_row(rng), variance: var },
        1 | 3 => ObservationFamily::GaussianPulseDelay(pulse.clone()),
        5 => ObservationFamily::GaussianMeanVariance,
        _ => ObservationFamily::GaussianMean { variance: var },
    };
    let families: Vec<ObservationFamily> = (0..n).map(|_| family(rng)).collect();
    let probe = Sensor { quantizer: Quantizer::new(vec![0.0]).unwrap(), family: families[0].clone(), attack: attack.clone(), observations: obs };
    let (mean, sd) = {
        let (mu, v) = probe.mean_var(&theta, None, 0);
        (mu, v.sqrt())
    };
    let quantizer = random_quantizer(rng, mean, sd, 8);
    let sensors: Vec<Sensor> = families
        .into_iter()
        .map(|family| Sensor { quantizer: quantizer.clone(), family, attack: attack.clone(), observations: obs })
        .collect();
    // One or two disjoint groups, leaving at least one sensor unattacked.
    let two = rng.random_bool(0.5);
    let size = rng.random_range(1..3);
    let mut groups = vec![(0..size).collect::<Vec<_>>()];
    if two {
        groups.push(vec![size]);
    }
    let tau = groups
        .iter()
        .map(|_| {
            (0..tau_dim)
                .map(|d| match (choice, d) {
                    (1, _) => uniform(rng, 0.0, 0.05),
                    (5 | 6, 1) => uniform(rng, 0.0, 1.0),
                    _ => uniform(rng, -0.5, 0.5),
                })
                .collect()
        })
        .collect();
    (NetworkModel::new(sensors, groups).unwrap(), ParameterPoint { theta, tau })
}

fn criterion_5(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED + 5);
    let cfg = ClassifierConfig::default();
    let plan = [(Kind::ShiftForm, 20), (Kind::Injection, 20), (Kind::Mixed, 60)];
    let mut agree = 0;
    let mut total = 0;
    let mut oesa = 0;
    let mut skipped = 0;
    for (kind, count) in plan {
        let mut done = 0;
        while done < count {
            let (model, point) = classifier_model(&mut rng, &kind);
            let bundle = build_fim_bundle(&model, &point).unwrap();
            let losses: Option<Vec<f64>> = (1..=model.n_groups())
                .map(|p| information_loss(&bundle.j_group[p], &bundle.b[p - 1], &bundle.j_tau[p - 1]))
                .collect();
            let Some(losses) = losses else {
                skipped += 1;
                continue;
            };
            let verdicts: Vec<_> = (1..=model.n_groups()).map(|p| classify_group(&model, &point, p, &cfg).unwrap()).collect();
            if verdicts.iter().any(|v| v.is_isa) {
                skipped += 1;
                continue;
            }
            for (v, loss) in verdicts.iter().zip(&losses) {
                total += 1;
                oesa += v.is_oesa as usize;
                agree += (v.is_oesa == (*loss < 1e-8)) as usize;
            }
            done += 1;
        }
    }
    r.line(
        "5",
        "classifier cross-check (100 estimable models: 20 shift-form, 20 injection, 60 mixed)",
        agree == total,
        format!("{agree}/{total} group verdicts agree with the information-loss test ({oesa} OESA), {skipped} inestimable draws skipped"),
    );
}

// ---------------------------------------------------------------- criteria 6-8

fn row_summary(row: &ExperimentRow) -> String {
    format!("K={} misclass {:.4} mse {:.3e} crb {:.3e}", row.k, row.misclass_frac, row.mse[0], row.crb_unattacked_trace)
}

fn criterion_6(r: &mut Report, outcomes: &mut Vec<TrialOutcome>) -> Option<ExperimentRow> {
    let sc = preset(Preset::DrfmDelay);
    let start = Instant::now();
    let res = run_experiment(&sc, &DRFM_GRID, DRFM_TRIALS, MASTER_SEED, &desk_options()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let m: Vec<f64> = res.rows.iter().map(|row| row.misclass_frac).collect();
    let rises: Vec<f64> = m.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
    let trend = rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.01);
    let last = res.rows.last().unwrap();
    let ratio = last.mse[0] / last.crb_unattacked_trace;
    let pass = trend && last.misclass_frac < 0.05 && (1.0 / 1.5..=1.5).contains(&ratio) && secs <= 900.0;
    let rows: Vec<String> = res.rows.iter().map(row_summary).collect();
    r.line(
        "6",
        "drfm-delay trend (K 250..2000, 100 trials)",
        pass,
        format!(
            "{}; misclass non-increasing (one rise <= 0.01 allowed): {trend}; MSE/CRB at K=2000 {ratio:.3} (within 1.5x); failures {}; {secs:.0} s (<= 900 s)",
            rows.join("; "),
            res.rows.iter().map(|r| r.failures).sum::<usize>()
        ),
    );
    for row in &res.rows {
        outcomes.extend(row.outcomes.iter().flatten().cloned());
    }
    res.rows.into_iter().last()
}

fn criterion_7(r: &mut Report, outcomes: &mut Vec<TrialOutcome>) {
    let sc = preset(Preset::DelayInjection);
    let c = classify_all(&sc.model, &sc.truth, &ClassifierConfig::default()).unwrap();
    let neither = c.groups.iter().all(|v| !v.is_isa && !v.is_oesa);
    let report = crb(&build_fim_bundle(&sc.model, &sc.truth).unwrap()).unwrap();
    let crb_ratio = report.crb_alldata_known_attacks.as_ref().unwrap().trace() / report.crb_unattacked.trace();
    let start = Instant::now();
    let res = run_experiment(&sc, &DELAY_GRID, DELAY_TRIALS, MASTER_SEED, &desk_options()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let last = res.rows.last().unwrap();
    let below = last.mse[0] < last.crb_unattacked_trace;
    r.line(
        "7",
        "delay-injection: attacked data helps",
        neither && crb_ratio < 0.95 && below,
        format!(
            "no group ISA or OESA: {neither}; crb_alldata/crb_unattacked {crb_ratio:.4} (< 0.95); {}; MSE below crb_unattacked at K={}: {below} ({} trials, {secs:.0} s)",
            res.rows.iter().map(row_summary).collect::<Vec<_>>().join("; "),
            last.k,
            DELAY_TRIALS
        ),
    );
    for row in &res.rows {
        outcomes.extend(row.outcomes.iter().flatten().cloned());
    }
}

fn criterion_8(r: &mut Report, outcomes: &[TrialOutcome]) {
    let mut bad = 0;
    for o in outcomes {
        let n = o.eta_hat.len();
        let count = o.eta_hat.iter().filter(|&&a| a).count();
        if 2 * count >= n || !o.constraint_satisfied || o.candidates > n / 2 {
            bad += 1;
        }
    }
    r.line(
        "8",
        "CVTR constraint across all experiments",
        bad == 0 && !outcomes.is_empty(),
        format!("{bad} of {} estimates violate sum(eta) < N/2, distortion feasibility or the floor(N/2) candidate cap", outcomes.len()),
    );
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/rss.toml");
    let mut files = Vec::new();
    let mut codes = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_quantspoof"))
            .args(["simulate", "--config", cfg, "--trials", "4", "--seed", "7", "--k-grid", "50,100", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        codes.push(status.status.code());
        files.push(std::fs::read(&out).unwrap_or_default());
    }
    let same = !files[0].is_empty() && files[0] == files[1];
    r.line(
        "9",
        "simulate determinism",
        same && codes.iter().all(|c| *c == Some(0)),
        format!("two `simulate` runs: {} bytes each, identical: {same}, exit codes {codes:?}", files[0].len()),
    );
}

// ---------------------------------------------------------------- supplementary

fn example_rss_pi(r: &mut Report) {
    let sc = preset(Preset::RssInjection).with_rounds(2000).unwrap();
    let truth = sc.attacked();
    let mut hits = 0;
    let trials = 100;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
        rng.set_stream(t);
        let data = generate_data(&sc, &mut rng).unwrap();
        let stats = SufficientStats::new(&sc.model, &data).unwrap();
        let opts = SolverOptions { seed: t, ..sc.solver_options(&SolverOptions::default()) };
        let pi = em_relaxed(&sc.model, &stats, None, &opts).unwrap().pi;
        hits += pi.iter().zip(&truth).all(|(&p, &a)| if a { p > 0.5 } else { p < 0.5 }) as usize;
    }
    r.line(
        "E1",
        "rss-injection K=2000: relaxed pi separates attacked (> 0.5) from unattacked (< 0.5) in >= 90% of trials",
        hits * 10 >= trials as usize * 9,
        format!("{hits}/{trials} trials (not asserted, see README)"),
    );
}

fn example_drfm_200(r: &mut Report, first: Option<ExperimentRow>, outcomes: &mut Vec<TrialOutcome>) {
    let Some(first) = first else { return };
    let sc = preset(Preset::DrfmDelay);
    let more = run_experiment(&sc, &[2000], DRFM_TRIALS, MASTER_SEED + 1_000_003, &desk_options()).unwrap();
    let second = &more.rows[0];
    let mse = (first.mse[0] + second.mse[0]) / 2.0;
    let ratio = mse / first.crb_unattacked_trace;
    r.line(
        "E2",
        "drfm-delay K=2000 over 200 trials: MSE <= 1.5 x crb_unattacked",
        ratio <= 1.5,
        format!("MSE {mse:.3e}, ratio {ratio:.3}"),
    );
    outcomes.extend(second.outcomes.iter().flatten().cloned());
}

#[test]
fn acceptance() {
    let mut r = Report { failed: Vec::new() };
    let mut outcomes = Vec::new();
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_4(&mut r);
    criterion_5(&mut r);
    let drfm_last = criterion_6(&mut r, &mut outcomes);
    criterion_7(&mut r, &mut outcomes);
    example_drfm_200(&mut r, drfm_last, &mut outcomes);
    criterion_8(&mut r, &outcomes);
    criterion_9(&mut r);
    example_rss_pi(&mut r);
    assert!(r.failed.is_empty(), "failed criteria: {:?}", r.failed);
}
