//! Acceptance suite: one test per criterion, each printing a pass line.
//! Tolerances and thresholds are pinned here; Monte Carlo checks run at
//! fixed seeds so the suite is deterministic.

use nalgebra::{DMatrix, DVector};
use stclt::birthdeath::{
    self, validate_bd, BdPoint, BdSpec, Covariate, PointLabel, PointPattern,
};
use stclt::car::inference::{estimate_params, sigma_analytic};
use stclt::car::{validate_spec, CarSpec, ValidCarSpec};
use stclt::harness::stats::{decay_fit, ks_statistic, normal_quantile};
use stclt::harness::{
    clt_verdicts, replicate_stream, run_bd_level, run_car_level, run_car_replicates,
    schedule_truncation, BdLevel, CarLevel, LevelOptions,
};
use stclt::lattice::{Lattice, Window};
use stclt::numerics::{frobenius_norm, quad_form_moments, RngStream, SymMatrix};

fn pass(n: usize, what: &str) {
    println!("[PASS] criterion {n}: {what}");
}

/// The 3x3 dense-coupling autoregression used by criteria 2, 3, 4, 7, 10:
/// complete-graph B_0, identity B_1.
fn grid9_spec(beta: f64, gamma: f64, b0_coupling: f64) -> ValidCarSpec {
    let points = (0..3i64)
        .flat_map(|x| (0..3i64).map(move |y| vec![x, y].into()))
        .collect();
    let lattice = Lattice::new(2, points).unwrap();
    let n = 9;
    let mut b0 = DMatrix::from_element(n, n, b0_coupling);
    for i in 0..n {
        b0[(i, i)] = 0.0;
    }
    validate_spec(CarSpec {
        lattice,
        temporal_order: 1,
        a: DVector::from_element(n, 1.0),
        b: vec![b0, DMatrix::identity(n, n)],
        beta,
        gamma,
    })
    .unwrap()
}

/// 1-d lattice with geometrically decaying long-range coupling, for the
/// truncated-variance ladder (criterion 8).
fn line_spec(n: usize, kappa: f64, scale: f64) -> ValidCarSpec {
    let lattice = Lattice::new(1, (0..n as i64).map(|i| vec![i].into()).collect()).unwrap();
    let mut b0 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                b0[(i, j)] = scale * kappa.powi((i as i32 - j as i32).abs());
            }
        }
    }
    validate_spec(CarSpec {
        lattice,
        temporal_order: 1,
        a: DVector::from_element(n, 1.0),
        b: vec![b0, DMatrix::identity(n, n) * 0.6],
        beta: 0.8,
        gamma: 0.5,
    })
    .unwrap()
}

/// Birth-death ladder level for criterion 5: window [0, size]^2, sparse
/// deterministic initial grid, heavy offspring clusters.
fn bd_ladder_level(size: usize) -> (stclt::birthdeath::ValidBdSpec, PointPattern) {
    let raw = BdSpec {
        window: Window::new(vec![0.0, 0.0], vec![size as f64, size as f64]).unwrap(),
        buffer_factor: 1.0,
        omega: 0.75,
        alpha_b: 1.8,
        rho: 0.003,
        surv: (-1.0, 0.4),
        covariate: Covariate::Linear {
            intercept: -0.5,
            gx: 1.0 / size as f64,
            gy: 0.0,
        },
        horizon: 3,
        quadrature: 64,
    };
    let spec = validate_bd(raw).unwrap();
    let g = (size / 8).max(1);
    let mut pts = Vec::new();
    for i in 0..g {
        for j in 0..g {
            pts.push(BdPoint {
                id: (i * g + j) as u64,
                parent: None,
                x: size as f64 * (i as f64 + 0.5) / g as f64,
                y: size as f64 * (j as f64 + 0.5) / g as f64,
                birth_time: 0,
                label: PointLabel::Initial,
            });
        }
    }
    (spec, PointPattern::new(pts))
}

fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().cloned().collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Criterion 1: quadratic-form identities for 10 random symmetric matrices,
/// 1e5 standard normal draws each, 4 SE bands around (trace, 2 trace M^2).
#[test]
fn criterion_01_quadratic_form_identities() {
    let root = RngStream::new(1001);
    let draws_per = 100_000usize;
    for trial in 0..10u64 {
        let n = 2 + (trial as usize % 5); // orders 2..=6
        let raw = root.child(trial).child(0).normals(n * n);
        let g = DMatrix::from_vec(n, n, raw);
        let m = SymMatrix::with_tolerance((&g + g.transpose()) * 0.5, 1.0).unwrap();
        let (mean_th, var_th) = quad_form_moments(&m);

        let z = root.child(trial).child(1).normals(draws_per * n);
        let mut q = Vec::with_capacity(draws_per);
        for r in 0..draws_per {
            let zr = DVector::from_column_slice(&z[r * n..(r + 1) * n]);
            q.push((zr.transpose() * m.as_matrix() * &zr)[(0, 0)]);
        }
        let (emp_mean, emp_var) = mean_var(&q);
        let se_mean = (emp_var / draws_per as f64).sqrt();
        assert!(
            (emp_mean - mean_th).abs() < 4.0 * se_mean,
            "trial {trial}: mean {emp_mean} vs {mean_th} (se {se_mean})"
        );
        let m4 = q
            .iter()
            .map(|x| (x - emp_mean).powi(4))
            .sum::<f64>()
            / draws_per as f64;
        let se_var = ((m4 - emp_var * emp_var) / draws_per as f64).sqrt();
        assert!(
            (emp_var - var_th).abs() < 4.0 * se_var,
            "trial {trial}: var {emp_var} vs {var_th} (se {se_var})"
        );
    }
    pass(1, "Z'MZ moments match (trace M, 2 trace M^2) within 4 SE for 10 random M");
}

/// Criterion 2: conditional centering of the score total, |D|=9, r=1, K=20,
/// 5000 replicates.
#[test]
fn criterion_02_car_score_centering() {
    let spec = grid9_spec(0.75, 0.5, 0.12);
    let level = CarLevel {
        spec,
        x0: DVector::from_element(9, 1.0),
        horizon: 20,
    };
    let t = run_car_replicates(&level, 5000, &RngStream::new(2).child(0)).unwrap();
    for comp in 0..2 {
        let (mean, var) = mean_var(&column(&t, comp));
        let se = (var / 5000.0).sqrt();
        assert!(
            mean.abs() < 4.0 * se,
            "component {comp}: mean {mean} vs 4 SE {}",
            4.0 * se
        );
    }
    pass(2, "mean of T over 5000 replicates within 4 SE of zero, both components");
}

/// Criterion 3: analytic covariance formula at K=10 against 5000-replicate
/// empirical variances; the printed lower bound holds as computed.
#[test]
fn criterion_03_sigma_formula() {
    let spec = grid9_spec(0.75, 0.5, 0.12);
    let x0 = DVector::from_element(9, 1.0);
    let horizon = 10usize;
    let analytic = sigma_analytic(&spec, &x0, horizon).unwrap();
    // lambda2 = 2 K trace(B_0^2) with trace = 72 * 0.12^2
    let expect_l2 = 2.0 * 10.0 * 72.0 * 0.12 * 0.12;
    assert!((analytic.lambda2 - expect_l2).abs() < 1e-9);

    let level = CarLevel {
        spec: grid9_spec(0.75, 0.5, 0.12),
        x0,
        horizon,
    };
    let t = run_car_replicates(&level, 5000, &RngStream::new(3).child(0)).unwrap();
    let (_, var1) = mean_var(&column(&t, 0));
    let (_, var2) = mean_var(&column(&t, 1));
    let ratio2 = var2 / analytic.lambda2;
    assert!(
        (0.9..=1.1).contains(&ratio2),
        "Var(T2)/lambda2 = {ratio2}"
    );
    let rel1 = (var1 - analytic.lambda1).abs() / analytic.lambda1;
    assert!(rel1 < 0.10, "lambda1 {} vs empirical {var1}", analytic.lambda1);
    assert!(
        analytic.bound_satisfied && analytic.lambda1 >= analytic.lambda1_lower_bound,
        "lambda1 {} below bound {}",
        analytic.lambda1,
        analytic.lambda1_lower_bound
    );
    pass(3, "empirical Var(T) matches diag(lambda1, lambda2); lower bound holds");
}

/// Criterion 4: regime (ii) KS ladder, |D|=9 fixed, K in {25, 100, 400},
/// R = 2000 — componentwise KS non-increasing (one inversion <= 0.005
/// tolerated) and below 0.04 at K = 400.
#[test]
fn criterion_04_regime_time_ks_ladder() {
    let master = RngStream::new(1);
    let mut reports = Vec::new();
    for (idx, k) in [25usize, 100, 400].into_iter().enumerate() {
        let level = CarLevel {
            spec: grid9_spec(0.75, 0.5, 0.12),
            x0: DVector::from_element(9, 1.0),
            horizon: k,
        };
        let opts = LevelOptions {
            replicates: 2000,
            trunc_a: 1.0 / 16.0,
            trunc_b: 0.25,
            epsilon: 0.0,
            compute_pairs: false,
            decay_lags: 10,
        };
        reports.push(run_car_level(&level, &opts, &master.child(idx as u64), idx).unwrap());
    }
    let verdicts = clt_verdicts(&reports, 0.04);
    for v in &verdicts.per_component {
        assert!(
            v.monotone_ok,
            "component {} KS sequence {:?} not non-increasing within tolerance",
            v.component, v.ks_sequence
        );
        assert!(
            v.final_ok,
            "component {} final KS {} >= 0.04",
            v.component, v.final_ks
        );
    }
    pass(4, "KS non-increasing down the K-ladder and < 0.04 at K = 400, both components");
}

/// Criterion 5: regime (i) birth-death ladder, K = 3 fixed, windows
/// {16^2, 32^2, 64^2}, R = 1000 — KS of the standardized first score
/// component decreasing and < 0.06 at the largest window.
#[test]
fn criterion_05_regime_space_bd_ks_ladder() {
    let master = RngStream::new(0);
    let mut ks = Vec::new();
    for (idx, size) in [16usize, 32, 64].into_iter().enumerate() {
        let (spec, x0) = bd_ladder_level(size);
        let level = BdLevel { spec, x0 };
        let opts = LevelOptions {
            replicates: 1000,
            trunc_a: 1.0 / 16.0,
            trunc_b: 0.25,
            epsilon: 0.0,
            compute_pairs: false,
            decay_lags: 0,
        };
        let report = run_bd_level(&level, &opts, &master.child(idx as u64), idx).unwrap();
        ks.push(report.components[0].ks_d);
    }
    assert!(
        ks[0] > ks[1] && ks[1] > ks[2],
        "first-component KS not decreasing: {ks:?}"
    );
    assert!(ks[2] < 0.06, "KS at the largest window: {}", ks[2]);
    pass(5, "birth-death first-component KS decreasing over the window ladder, < 0.06 at 64^2");
}

/// Criterion 6: conditional-moment mean equals the noise-free iterated
/// recursion to 1e-8 for lags up to 10, on random stable specs.
#[test]
fn criterion_06_conditional_moment_oracle() {
    let root = RngStream::new(6);
    for trial in 0..6u64 {
        let n = 3usize;
        let r = 1 + (trial as usize % 2);
        let stream = root.child(trial);
        // random couplings scaled for stability
        let mut b = vec![{
            let mut b0 = DMatrix::from_vec(n, n, stream.child(0).normals(n * n));
            b0 = (&b0 + b0.transpose()) * 0.08;
            for i in 0..n {
                b0[(i, i)] = 0.0;
            }
            b0
        }];
        for j in 1..=r {
            let raw = DMatrix::from_vec(n, n, stream.child(j as u64).normals(n * n));
            b.push(raw * 0.18);
        }
        let spec = validate_spec(CarSpec {
            lattice: Lattice::new(1, (0..n as i64).map(|i| vec![i].into()).collect()).unwrap(),
            temporal_order: r,
            a: DVector::from_element(n, 1.0),
            b,
            beta: 0.7,
            gamma: 0.4,
        })
        .unwrap();
        assert!(spec.is_stable(), "trial {trial} drew an unstable spec");

        let xl = DVector::from_vec(stream.child(99).normals(n));
        // noise-free recursion from (xl, 0, ..., 0)
        let mut hist: Vec<DVector<f64>> = vec![xl.clone()];
        for k in 1..=10usize {
            let mut xi = DVector::<f64>::zeros(n);
            for j in 1..=r {
                if k >= j {
                    xi += &spec.spec().b[j] * &hist[k - j];
                }
            }
            hist.push(xi * spec.beta());
        }
        for k in 1..=10usize {
            let (mean, _) = spec.conditional_moments(&xl, 0, k).unwrap();
            let err = (mean - &hist[k]).amax();
            assert!(err <= 1e-8, "trial {trial} lag {k}: {err}");
        }
    }
    pass(6, "conditional means equal the noise-free recursion to 1e-8 for lags 1..10");
}

/// Criterion 7: decay surrogate — log-log slope of the lagged-covariance
/// norms at companion radius 0.8 is below -1 with the CI excluding -1.
#[test]
fn criterion_07_decay_surrogate() {
    let spec = grid9_spec(0.8, 0.5, 0.12); // F = 0.8 I
    assert!((spec.companion_radius() - 0.8).abs() < 1e-9);
    let series: Vec<(f64, f64)> = (1..=30)
        .map(|m| {
            (
                m as f64,
                frobenius_norm(&spec.lagged_cov(1, 41, m).unwrap()),
            )
        })
        .collect();
    let fit = decay_fit(&series).unwrap();
    assert!(fit.slope < -1.0, "slope {}", fit.slope);
    assert!(fit.ci_upper < -1.0, "CI upper {}", fit.ci_upper);
    pass(7, "lagged-covariance decay slope < -1 with 95% CI excluding -1");
}

/// Criterion 8: truncated variance — exact equality once m_n reaches the
/// diameter, and |1 - V^2/sigma-hat^2| decreasing over |D| in {16, 64, 256}
/// with the scheduled m_n.
#[test]
fn criterion_08_truncated_variance() {
    // exactness: 2-node lattice has diameter 1 < m_n = 2
    let tiny = line_spec(2, 0.7, 0.1);
    let level = CarLevel {
        spec: tiny,
        x0: DVector::from_element(2, 1.0),
        horizon: 6,
    };
    let opts = LevelOptions {
        replicates: 60,
        trunc_a: 0.24,
        trunc_b: 0.25,
        epsilon: 0.0,
        compute_pairs: true,
        decay_lags: 0,
    };
    let report = run_car_level(&level, &opts, &RngStream::new(8).child(9), 0).unwrap();
    let tv = report.truncated_variance.unwrap();
    assert_eq!(tv.v2, tv.sigma2, "V^2 must equal sigma-hat^2 bit for bit");

    // ladder in d = 1 where the schedule grows: m_n = 2, 3, 4
    let master = RngStream::new(8);
    let mut devs = Vec::new();
    for (idx, n) in [16usize, 64, 256].into_iter().enumerate() {
        let (m_n, _) = schedule_truncation(n, 40, 1, 0.24, 0.25).unwrap();
        assert_eq!(m_n, [2, 3, 4][idx], "scheduled m_n");
        let level = CarLevel {
            spec: line_spec(n, 0.7, 0.1),
            x0: DVector::from_element(n, 1.0),
            horizon: 40,
        };
        let opts = LevelOptions {
            replicates: 4000,
            trunc_a: 0.24,
            trunc_b: 0.25,
            epsilon: 0.0,
            compute_pairs: true,
            decay_lags: 0,
        };
        let report = run_car_level(&level, &opts, &master.child(idx as u64), idx).unwrap();
        let tv = report.truncated_variance.unwrap();
        let dev = tv
            .ratio()
            .iter()
            .map(|r| (1.0 - r).abs())
            .fold(0.0f64, f64::max);
        devs.push(dev);
    }
    assert!(
        devs[0] > devs[1] && devs[1] > devs[2],
        "|1 - V^2/sigma^2| not decreasing: {devs:?}"
    );
    pass(8, "V^2 exact at full window; truncation deviation decreasing over the lattice ladder");
}

/// Criterion 9: birth-death structural checks — offspring counts Poisson,
/// survivor counts binomial (4 SE over 1e4 replicates), and the
/// independence-range check with a passing positive control.
#[test]
fn criterion_09_bd_structure() {
    // offspring: single interior parent, alpha_b pi omega^2 mean
    let raw = BdSpec {
        window: Window::new(vec![0.0, 0.0], vec![12.0, 12.0]).unwrap(),
        buffer_factor: 1.0,
        omega: 0.75,
        alpha_b: 0.9,
        rho: 0.0,
        surv: (-20.0, 0.0),
        covariate: Covariate::Constant(0.0),
        horizon: 1,
        quadrature: 16,
    };
    let spec = validate_bd(raw.clone()).unwrap();
    let parent = PointPattern::new(vec![BdPoint {
        id: 0,
        parent: None,
        x: 6.0,
        y: 6.0,
        birth_time: 0,
        label: PointLabel::Initial,
    }]);
    let reps = 10_000usize;
    let root = RngStream::new(9);
    let mut counts = Vec::with_capacity(reps);
    for rep in 0..reps {
        let next = birthdeath::simulate_step(&spec, &parent, 1, &root.child(rep as u64)).unwrap();
        counts.push(next.len() as f64);
    }
    let lambda = 0.9 * std::f64::consts::PI * 0.75 * 0.75;
    let (mean, var) = mean_var(&counts);
    let se_mean = (lambda / reps as f64).sqrt();
    let se_var = ((lambda + 2.0 * lambda * lambda) / reps as f64).sqrt();
    assert!((mean - lambda).abs() < 4.0 * se_mean, "offspring mean {mean} vs {lambda}");
    assert!((var - lambda).abs() < 4.0 * se_var, "offspring var {var} vs {lambda}");

    // survivors: theta = 0 gives Binomial(n, 1/2)
    let mut sraw = raw.clone();
    sraw.alpha_b = 0.0;
    sraw.surv = (0.0, 0.0);
    let sspec = validate_bd(sraw).unwrap();
    let eight: Vec<BdPoint> = (0..8)
        .map(|i| BdPoint {
            id: i,
            parent: None,
            x: 2.0 + i as f64,
            y: 6.0,
            birth_time: 0,
            label: PointLabel::Initial,
        })
        .collect();
    let x0 = PointPattern::new(eight);
    let sroot = RngStream::new(10);
    let mut survivors = Vec::with_capacity(reps);
    for rep in 0..reps {
        let next = birthdeath::simulate_step(&sspec, &x0, 1, &sroot.child(rep as u64)).unwrap();
        survivors.push(next.len() as f64);
    }
    let (smean, svar) = mean_var(&survivors);
    let se = (8.0 * 0.25 / reps as f64).sqrt();
    assert!((smean - 4.0).abs() < 4.0 * se, "survivor mean {smean}");
    // binomial variance check with its own 4 SE band
    let se_v = ((2.0 * 8.0 * 0.25 * 0.25 + 8.0 * 0.25 * (1.0 - 6.0 * 0.25)) / reps as f64)
        .abs()
        .sqrt();
    assert!((svar - 2.0).abs() < 4.0 * se_v.max(0.03), "survivor var {svar}");

    // independence range: far pair beyond 2 K omega, near positive control
    let craw = BdSpec {
        window: Window::new(vec![0.0, 0.0], vec![24.0, 8.0]).unwrap(),
        buffer_factor: 1.0,
        omega: 1.5,
        alpha_b: 1.0,
        rho: 0.05,
        surv: (-2.0, 0.0),
        covariate: Covariate::Constant(0.0),
        horizon: 2,
        quadrature: 8,
    };
    let cspec = validate_bd(craw).unwrap();
    let cx0 = PointPattern::new(
        [
            (0.0, 4.0),
            (24.0, 4.0),
            (12.0, 4.0),
            (12.4, 3.6),
            (6.0, 2.0),
            (18.0, 6.0),
        ]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| BdPoint {
            id: i as u64,
            parent: None,
            x,
            y,
            birth_time: 0,
            label: PointLabel::Initial,
        })
        .collect(),
    );
    let croot = RngStream::new(11);
    let paths: Vec<_> = (0..800)
        .map(|rep| birthdeath::simulate_path(&cspec, &cx0, &croot.child(rep)).unwrap())
        .collect();
    let report = birthdeath::independence_range_check(&cspec, &paths).unwrap();
    assert!(
        report.far.separation > 2.0 * 2.0 * 1.5,
        "separation {}",
        report.far.separation
    );
    assert!(report.far_independent, "far corr {} band {}", report.far.corr, report.far.band);
    assert!(report.near_dependent, "near corr {} band {}", report.near.corr, report.near.band);
    pass(9, "offspring Poisson, survivors binomial, independence range with positive control");
}

/// Criterion 10: estimation loop at (beta, gamma) = (0.4, 0.5) — bias within
/// 4 SE of zero at K = 400 and RMSE(K=400)/RMSE(K=100) in [0.4, 0.65].
#[test]
fn criterion_10_estimation_loop() {
    let reps = 200usize;
    let truth = (0.4, 0.5);
    let mut rmse = std::collections::HashMap::new();
    let mut estimates_400: Vec<(f64, f64)> = Vec::new();
    for &horizon in &[100usize, 400] {
        let spec = grid9_spec(truth.0, truth.1, 0.12);
        let x0 = DVector::from_element(9, 1.0);
        let master = RngStream::new(12).child(horizon as u64);
        let mut sq_err = (0.0f64, 0.0f64);
        for rep in 0..reps {
            let path = spec
                .simulate_path(&x0, horizon, &replicate_stream(&master, rep))
                .unwrap();
            let est = estimate_params(&spec, &path, truth).unwrap();
            assert!(est.converged, "K={horizon} rep {rep} did not converge");
            if horizon == 400 {
                // near-quadratic convergence from the truth
                assert!(
                    est.iterations <= 3,
                    "K=400 rep {rep}: {} iterations",
                    est.iterations
                );
                estimates_400.push((est.beta_hat, est.gamma_hat));
            }
            sq_err.0 += (est.beta_hat - truth.0).powi(2);
            sq_err.1 += (est.gamma_hat - truth.1).powi(2);
        }
        rmse.insert(
            horizon,
            (
                (sq_err.0 / reps as f64).sqrt(),
                (sq_err.1 / reps as f64).sqrt(),
            ),
        );
    }
    // bias at K = 400
    let betas: Vec<f64> = estimates_400.iter().map(|e| e.0).collect();
    let gammas: Vec<f64> = estimates_400.iter().map(|e| e.1).collect();
    for (name, vals, truth_v) in [("beta", &betas, truth.0), ("gamma", &gammas, truth.1)] {
        let (mean, var) = mean_var(vals);
        let se = (var / reps as f64).sqrt();
        assert!(
            (mean - truth_v).abs() < 4.0 * se,
            "{name} bias {} vs 4 SE {}",
            mean - truth_v,
            4.0 * se
        );
    }
    for comp in 0..2 {
        let r400 = if comp == 0 { rmse[&400].0 } else { rmse[&400].1 };
        let r100 = if comp == 0 { rmse[&100].0 } else { rmse[&100].1 };
        let ratio = r400 / r100;
        assert!(
            (0.4..=0.65).contains(&ratio),
            "RMSE ratio for parameter {comp}: {ratio} ({r400} / {r100})"
        );
    }
    pass(10, "estimates unbiased within 4 SE and RMSE shrinks at the root-K rate");
}

/// Criterion 11: KS unit correctness on the hand case and the quantile
/// lattice.
#[test]
fn criterion_11_ks_unit_correctness() {
    let res = ks_statistic(&[-1.0, 0.0, 1.0]).unwrap();
    assert!(
        (res.d - 0.17466).abs() <= 1e-4,
        "hand case D = {}",
        res.d
    );
    let n = 1000usize;
    let lattice: Vec<f64> = (1..=n)
        .map(|i| normal_quantile((i as f64 - 0.5) / n as f64))
        .collect();
    let res = ks_statistic(&lattice).unwrap();
    assert!(
        res.d <= 1.0 / (2.0 * n as f64) + 1e-9,
        "lattice case D = {}",
        res.d
    );
    pass(11, "KS statistic exact on the hand case and the quantile lattice");
}

/// Criterion 12: determinism — identical (config, seed) produce byte-identical
/// outputs for every command at any worker count.
#[test]
fn criterion_12_byte_identical_reruns() {
    use std::process::Command;
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.json");
    std::fs::write(
        &config_path,
        format!(
            r#"{{
  "model": {{
    "type": "car", "r": 1, "beta": 0.5, "gamma": 0.4,
    "lattice": {{"kind": "grid", "m": 3, "dim": 2}},
    "coefficients": {{"kind": "dense_uniform", "a": 1.0, "b0_coupling": 0.1, "b1_self": 0.8}},
    "x0": {{"kind": "standard_normal"}},
    "horizon": 15
  }},
  "regime": {{"regime": "time", "levels": [{{"k": 5, "size": 3}}, {{"k": 10, "size": 3}}], "replicates": 80}},
  "replicates": 100,
  "seed": 33,
  "output_dir": "{}"
}}"#,
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_stclt");
    let run = |cmd: &str, workers: &str, extra: &[&str]| {
        let mut c = Command::new(bin);
        c.arg(cmd)
            .arg("--config")
            .arg(&config_path)
            .args(["--workers", workers])
            .args(extra);
        let out = c.output().unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cmd} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let snapshot = |label: &str| -> std::collections::BTreeMap<String, Vec<u8>> {
        let mut map = std::collections::BTreeMap::new();
        for entry in std::fs::read_dir(dir.path().join("out")).unwrap() {
            let p = entry.unwrap().path();
            if p.is_file() {
                map.insert(
                    format!("{label}:{}", p.file_name().unwrap().to_string_lossy()),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
        map
    };

    run("simulate", "1", &[]);
    run("clt", "1", &[]);
    run("diagnose", "1", &[]);
    run(
        "estimate",
        "1",
        &["--data", &dir.path().join("out/path.csv").to_string_lossy()],
    );
    let first = snapshot("a");

    run("simulate", "3", &[]);
    run("clt", "3", &[]);
    run("diagnose", "3", &[]);
    run(
        "estimate",
        "3",
        &["--data", &dir.path().join("out/path.csv").to_string_lossy()],
    );
    let second = snapshot("a");

    assert_eq!(first.len(), second.len());
    for (name, bytes) in &first {
        assert_eq!(
            bytes,
            second.get(name).unwrap(),
            "{name} differs across worker counts"
        );
    }
    pass(12, "byte-identical CSV/JSON outputs across reruns and worker counts");
}
