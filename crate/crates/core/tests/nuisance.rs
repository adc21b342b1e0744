mod common;

use std::sync::Arc;

use common::*;
use dmar::model::{propensity_floor, Arm, Dataset, NuisanceOracle};
use dmar::nuisance::*;
use dmar::rng::stream_rng;
use dmar::simulate::*;
use dmar::solvers::SolverConfig;
use ndarray::Array2;
use rand::Rng;

fn cv() -> LambdaPolicy {
    LambdaPolicy::default()
}

fn solver() -> SolverConfig {
    SolverConfig::default()
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn sim(dgp: DgpKind, n: usize, d: usize, seed: u64) -> (Dataset, Arc<TruthOracle>) {
    let spec = DgpSpec::new(dgp, n, d, 3, 3, 0.1);
    let oracle = Arc::new(build_oracle_with(&spec, 200_000, 2e-3).unwrap());
    let ds = replication_dataset(&spec, &oracle, seed, 0).unwrap();
    (ds, oracle)
}

/// Dataset with `R` independent of everything at rate `r_rate` and a logistic
/// treatment model.
fn mcar_dataset(n: usize, d: usize, r_rate: f64, seed: u64) -> (Dataset, Vec<f64>) {
    let mut rng = stream_rng(seed, 3);
    let x = gen_covariates(n, d, &mut rng);
    let b: Vec<f64> = (0..d).map(|j| if j == 1 { 0.8 } else if j == 2 { -0.5 } else { 0.0 }).collect();
    let mut t = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut pi = Vec::with_capacity(n);
    for i in 0..n {
        let p = logistic(row_dot(&x, i, &b));
        pi.push(p);
        let ti = u8::from(rng.random::<f64>() < p);
        let ri = u8::from(rng.random::<f64>() < r_rate);
        t.push(ti);
        r.push(ri);
        y.push(Some(x[[i, 1]] + f64::from(ti)));
    }
    (Dataset::new(x, t, r, None, y).unwrap(), pi)
}

#[test]
fn or_lasso_recovers_noiseless_outcome() {
    let mut r = rng(1);
    let n = 300;
    let x = design(n, 5, &mut r);
    let alpha = [1.0, 2.0, 0.0, -1.5, 0.5];
    let t: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
    let lab: Vec<u8> = (0..n).map(|i| u8::from(i % 3 != 0)).collect();
    let y: Vec<Option<f64>> = (0..n).map(|i| Some(row_dot(&x, i, &alpha))).collect();
    let ds = Dataset::new(x.clone(), t, lab, None, y).unwrap();
    let train: Vec<usize> = (0..n).collect();
    let exact = LambdaPolicy::Fixed { or: 0.0, ps: 0.0 };
    let tight = SolverConfig { tol: 1e-12, ..solver() };
    let f = fit_or_lasso(&ds, Arm::Treated, &train, &exact, &tight, 4).unwrap();
    let gamma = ds.product_indicator(Arm::Treated).gamma;
    for i in (0..n).filter(|&i| gamma[i] == 1) {
        assert!((f.eval(ds.row_slice(i)) - row_dot(&x, i, &alpha)).abs() <= 1e-6);
    }
}

#[test]
fn or_lasso_constant_outcome() {
    let mut r = rng(2);
    let n = 200;
    let x = design(n, 4, &mut r);
    let t = vec![1u8; n];
    let lab: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
    let ds = Dataset::new(x, t, lab, None, vec![Some(4.25); n]).unwrap();
    let train: Vec<usize> = (0..n).collect();
    let f = fit_or_lasso(&ds, Arm::Treated, &train, &cv(), &solver(), 1).unwrap();
    for i in 0..n {
        // The smallest grid value still shrinks the penalized intercept a little.
        assert!((f.eval(ds.row_slice(i)) - 4.25).abs() < 1e-2 * 4.25);
    }
}

#[test]
fn or_lasso_needs_labeled_rows() {
    let mut r = rng(3);
    let x = design(10, 2, &mut r);
    let ds = Dataset::new(x, vec![0; 10], vec![1; 10], None, vec![Some(1.0); 10]).unwrap();
    let train: Vec<usize> = (0..10).collect();
    assert!(fit_or_lasso(&ds, Arm::Treated, &train, &cv(), &solver(), 1).is_err());
}

#[test]
fn or_lasso_close_to_truth_on_simulated_draw() {
    for seed in 0..3 {
        let (ds, oracle) = sim(DgpKind::A, 5000, 51, seed);
        let train: Vec<usize> = (0..ds.n()).collect();
        let f = fit_or_lasso(&ds, Arm::Treated, &train, &cv(), &solver(), seed).unwrap();
        let a = f.coefficients.unwrap();
        let err = a.iter().zip(oracle.alpha(Arm::Treated)).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
        assert!(err <= 0.5, "seed {seed}: coefficient error {err}");
    }
}

#[test]
fn offset_logistic_zero_slope_truth() {
    let (ds, _) = mcar_dataset(20_000, 6, 0.3, 4);
    // Arm-1 indicator depends on x through T, so use an intercept-only check
    // on a design where labeling and treatment are both independent of x.
    let n = ds.n();
    let x = ds.covariates().clone();
    let mut rng = stream_rng(5, 0);
    let t: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
    let lab: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.2)).collect();
    let ds = Dataset::new(x, t, lab, None, vec![Some(0.0); n]).unwrap();
    let train: Vec<usize> = (0..n).collect();
    let f = fit_ps_offset_logistic(&ds, Arm::Treated, &train, &cv(), &solver(), 2).unwrap();
    let gh = ds.product_indicator(Arm::Treated).mean();
    let at_zero = logistic(gh.ln());
    for i in 0..n {
        assert!((f.eval(ds.row_slice(i)) - at_zero).abs() <= 0.05);
    }
}

#[test]
fn offset_logistic_link_at_zero_slope() {
    let mut r = rng(6);
    let n = 100;
    let x = design(n, 3, &mut r);
    let lab: Vec<u8> = (0..n).map(|i| u8::from(i % 5 == 0)).collect();
    let ds = Dataset::new(x, vec![1; n], lab, None, vec![Some(1.0); n]).unwrap();
    let train: Vec<usize> = (0..n).collect();
    let policy = LambdaPolicy::Fixed { or: 0.0, ps: 10.0 };
    let f = fit_ps_offset_logistic(&ds, Arm::Treated, &train, &policy, &solver(), 0).unwrap();
    assert!(f.coefficients.as_ref().unwrap().iter().all(|&b| b == 0.0));
    let want = logistic((0.2f64).ln());
    for i in 0..n {
        assert!((f.eval(ds.row_slice(i)) - want).abs() < 1e-15);
    }
}

#[test]
fn offset_logistic_relative_error_on_fresh_draws() {
    let (ds, oracle) = sim(DgpKind::A, 10_000, 51, 7);
    let train: Vec<usize> = (0..ds.n()).collect();
    let f = fit_ps_offset_logistic(&ds, Arm::Treated, &train, &cv(), &solver(), 7).unwrap();
    let mut rng = stream_rng(99, 1);
    let xt = gen_covariates(10_000, 51, &mut rng);
    let d_n = (0..xt.nrows())
        .map(|i| {
            let x = xt.row(i).to_vec();
            let q = 1.0 - oracle.product_propensity(Arm::Treated, &x) / f.eval(&x);
            q * q
        })
        .sum::<f64>()
        / xt.nrows() as f64;
    assert!(d_n <= 0.05, "mean squared relative error {d_n}");
}

#[test]
fn product_constants_multiply_and_arms_complement() {
    let n = 4000;
    let mut rng = stream_rng(8, 0);
    let x = gen_covariates(n, 4, &mut rng);
    let t: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
    let lab: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.25)).collect();
    let ds = Dataset::new(x, t.clone(), lab.clone(), None, vec![Some(0.0); n]).unwrap();
    let train: Vec<usize> = (0..n).collect();
    let big = LambdaPolicy::Fixed { or: 0.0, ps: 1.0 };
    let f1 = fit_ps_product(&ds, Arm::Treated, &train, &big, &solver(), 3).unwrap();
    let f0 = fit_ps_product(&ds, Arm::Control, &train, &big, &solver(), 3).unwrap();
    let r_bar = lab.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    // With every slope at zero the treatment model is logistic(b0), b0 shrunk
    // toward 0 by the intercept penalty; the product still factors.
    let p1 = f1.eval(ds.row_slice(0)) / logistic(r_bar.ln());
    let p0 = f0.eval(ds.row_slice(0)) / logistic(r_bar.ln());
    assert!((p1 + p0 - 1.0).abs() < 1e-12);
    for i in 0..n {
        let x = ds.row_slice(i);
        let a = f1.eval(x) / logistic(r_bar.ln());
        let b = f0.eval(x) / logistic(r_bar.ln());
        assert!((a + b - 1.0).abs() < 1e-12);
        assert!((a - p1).abs() < 1e-12);
    }

    // Under cross-validated penalties the fit approaches mean(R) * mean(T | R = 1).
    let g = fit_ps_product(&ds, Arm::Treated, &train, &cv(), &solver(), 3).unwrap();
    let labeled: Vec<usize> = (0..n).filter(|&i| lab[i] == 1).collect();
    let t_bar = labeled.iter().map(|&i| f64::from(t[i])).sum::<f64>() / labeled.len() as f64;
    let mean_fit = (0..n).map(|i| g.eval(ds.row_slice(i))).sum::<f64>() / n as f64;
    assert!((mean_fit - r_bar * t_bar).abs() < 0.01, "{mean_fit} vs {}", r_bar * t_bar);
}

/// The treatment component is misspecified under DGP (b), so the reference is
/// the fit on a much larger sample rather than the truth.
#[test]
fn product_error_shrinks_with_sample_size() {
    let fit = |n: usize, seed: u64| {
        let (ds, _) = sim(DgpKind::B, n, 11, seed);
        let train: Vec<usize> = (0..ds.n()).collect();
        fit_ps_product(&ds, Arm::Treated, &train, &cv(), &solver(), seed).unwrap()
    };
    let mut rng = stream_rng(1234, 0);
    let xt = gen_covariates(20_000, 11, &mut rng);
    let reference = fit(90_000, 100);
    let err = |f: &FittedFn| {
        (0..xt.nrows())
            .map(|i| {
                let x = xt.row(i).to_vec();
                let q = 1.0 - reference.eval(&x) / f.eval(&x);
                q * q
            })
            .sum::<f64>()
            / xt.nrows() as f64
    };
    let e1 = err(&fit(10_000, 9));
    let e3 = err(&fit(30_000, 9));
    assert!(e3 <= e1, "error at 3N {e3} exceeds error at N {e1}");
}

#[test]
fn mcar_reduces_to_treatment_model_when_fully_labeled() {
    let (ds, _) = mcar_dataset(3000, 4, 1.0, 10);
    let train: Vec<usize> = (0..ds.n()).collect();
    let f = fit_ps_constant_mcar(&ds, Arm::Treated, &train, &cv(), &solver(), 1).unwrap();
    let x = ds.covariates().clone();
    let t: Vec<u8> = (0..ds.n()).map(|i| ds.treatment(i).unwrap()).collect();
    let offset = vec![0.0; ds.n()];
    let policy = LambdaPolicy::Fixed {
        or: 0.0,
        ps: f.lambda.unwrap(),
    };
    let g = fit_ps_constant_mcar(&ds, Arm::Treated, &train, &policy, &solver(), 1).unwrap();
    let direct = dmar::solvers::fit_logistic_l1_offset(x.view(), &t, &offset, f.lambda.unwrap(), &solver()).unwrap();
    for i in 0..ds.n() {
        let want = logistic(row_dot(&x, i, &direct.coefficients));
        assert!((g.eval(ds.row_slice(i)) - want).abs() < 1e-6);
    }
}

#[test]
fn mcar_consistent_under_mcar_truth() {
    let (ds, pi) = mcar_dataset(100_000, 6, 0.2, 11);
    let train: Vec<usize> = (0..ds.n()).collect();
    let f = fit_ps_constant_mcar(&ds, Arm::Treated, &train, &cv(), &solver(), 11).unwrap();
    let rel = (0..ds.n())
        .map(|i| (f.eval(ds.row_slice(i)) / (0.2 * pi[i]) - 1.0).abs())
        .sum::<f64>()
        / ds.n() as f64;
    assert!(rel < 0.05, "mean relative error {rel}");
}

#[test]
fn mcar_biased_under_selective_labeling() {
    let (ds, oracle) = sim(DgpKind::A, 100_000, 11, 12);
    let train: Vec<usize> = (0..ds.n()).collect();
    let f = fit_ps_constant_mcar(&ds, Arm::Treated, &train, &cv(), &solver(), 12).unwrap();
    let rel = (0..ds.n())
        .map(|i| {
            let x = ds.row_slice(i);
            (f.eval(x) / oracle.product_propensity(Arm::Treated, x) - 1.0).abs()
        })
        .sum::<f64>()
        / ds.n() as f64;
    assert!(rel >= 0.1, "mean relative error {rel}");
}

#[test]
fn oracle_nuisance_matches_design_formulas() {
    let (ds, oracle) = sim(DgpKind::A, 500, 11, 13);
    let dyn_oracle: Arc<dyn NuisanceOracle> = oracle.clone();
    let est = oracle_nuisance(dyn_oracle, Arm::Treated, propensity_floor(ds.n()));
    for i in 0..ds.n() {
        let x = ds.row_slice(i);
        let g = logistic(x.iter().zip(oracle.beta(Arm::Treated)).map(|(a, b)| a * b).sum());
        assert!((est.propensity(x) - g.max(propensity_floor(ds.n()))).abs() <= 1e-15);
        let m: f64 = x.iter().zip(oracle.alpha(Arm::Treated)).map(|(a, b)| a * b).sum();
        assert!((est.outcome(x) - m).abs() <= 1e-12 * (1.0 + m.abs()));
    }

    let (ds, oracle) = sim(DgpKind::C, 500, 11, 14);
    let eta = oracle.eta(Arm::Treated).unwrap();
    for i in 0..ds.n() {
        let x = ds.row_slice(i);
        let lin: f64 = x.iter().zip(oracle.alpha(Arm::Treated)).map(|(a, b)| a * b).sum();
        let quad: f64 = x.iter().zip(eta).map(|(a, b)| a * a * b).sum();
        assert!((oracle.outcome_regression(Arm::Treated, x) - (lin + quad)).abs() < 1e-12);
    }
}

#[test]
fn fitted_propensities_stay_in_range() {
    let (ds, _) = sim(DgpKind::A, 3000, 11, 15);
    let train: Vec<usize> = (0..ds.n()).collect();
    let floor = propensity_floor(ds.n());
    for spec in [LearnerSpec::ss_lasso(), LearnerSpec::ss_product(), LearnerSpec::mcar()] {
        for arm in Arm::BOTH {
            let est = fit_nuisance(&ds, arm, &train, &spec, 1).unwrap();
            for i in 0..ds.n() {
                let p = est.propensity(ds.row_slice(i));
                assert!(p >= floor && p <= 1.0);
                assert!(est.outcome(ds.row_slice(i)).is_finite());
            }
        }
    }
}

#[test]
fn degenerate_indicator_rejected() {
    let x = Array2::from_elem((20, 2), 1.0);
    let ds = Dataset::new(x, vec![1; 20], vec![1; 20], None, vec![Some(1.0); 20]).unwrap();
    let train: Vec<usize> = (0..20).collect();
    assert!(fit_ps_offset_logistic(&ds, Arm::Treated, &train, &cv(), &solver(), 0).is_err());
}
