//! Simulation checks against closed-form oracles and scaling laws.

use rand::Rng;
use rand_distr::StandardNormal;

use galerkin::galerkin_sde::{estimate_resolvent, estimate_semigroup, GalerkinSystem, Integrator, Scheme};
use galerkin::harness::{ExperimentConfig, Preset};
use galerkin::hypocoercivity::{centered_norm, estimate_decay, sample_mu_phi_exact};
use galerkin::kolmogorov::{apply_l_phi, audit_identities, bounded_battery, Cylinder, Monomial, Var};
use galerkin::mc::{linear_fit, stream_rng, MeanSe};

fn ou1() -> ExperimentConfig {
    let mut cfg = Preset::OuLinear.config();
    cfg.n = 1;
    cfg
}

/// `e^{Mt}` for a real 2×2 matrix via the Cayley–Hamilton closed form.
fn expm2(m: [[f64; 2]; 2], t: f64) -> [[f64; 2]; 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr / 4.0 - det;
    let (c, s_over) = if disc > 0.0 {
        let s = disc.sqrt();
        ((s * t).cosh(), (s * t).sinh() / s)
    } else if disc < 0.0 {
        let s = (-disc).sqrt();
        ((s * t).cos(), (s * t).sin() / s)
    } else {
        (1.0, t)
    };
    let e = (tr * t / 2.0).exp();
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let id = if i == j { 1.0 } else { 0.0 };
            let shifted = m[i][j] - if i == j { tr / 2.0 } else { 0.0 };
            out[i][j] = e * (c * id + s_over * shifted);
        }
    }
    out
}

fn linear_cylinder(cx: f64, cy: f64) -> Cylinder {
    Cylinder::Polynomial {
        terms: vec![
            Monomial { coeff: cx, vars: vec![(Var::X(1), 1)] },
            Monomial { coeff: cy, vars: vec![(Var::Y(1), 1)] },
        ],
    }
}

#[test]
fn expm2_matches_taylor_series() {
    let m = [[0.0, 0.7], [-1.3, -0.4]];
    let mut term = [[1.0, 0.0], [0.0, 1.0]];
    let mut sum = term;
    for k in 1..40 {
        let mut next = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                next[i][j] = (0..2).map(|l| term[i][l] * m[l][j]).sum::<f64>() * 1.5 / k as f64;
            }
        }
        term = next;
        for i in 0..2 {
            for j in 0..2 {
                sum[i][j] += term[i][j];
            }
        }
    }
    let e = expm2(m, 1.5);
    for i in 0..2 {
        for j in 0..2 {
            assert!((e[i][j] - sum[i][j]).abs() < 1e-13);
        }
    }
}

#[test]
fn ou_mean_matches_matrix_exponential() {
    let cfg = ou1();
    let system = cfg.system().unwrap();
    let m = system.linear_drift_matrix(1);
    let w0 = [0.4, -0.3];
    let integ = Integrator::new(1e-3, Scheme::SemiImplicitLinear).unwrap();
    for (t, f, row) in [(1.0, Cylinder::x(1), 0), (1.0, Cylinder::y(1), 1), (3.0, Cylinder::x(1), 0)] {
        let e = expm2(m, t);
        let want = e[row][0] * w0[0] + e[row][1] * w0[1];
        let est = estimate_semigroup(&system, &f, t, &w0, 4000, 11, integ).unwrap();
        assert!((est.mean - want).abs() <= 3.0 * est.se + 2e-3, "t={t} row={row}: {} +- {} vs {want}", est.mean, est.se);
    }
}

#[test]
fn resolvent_inverts_lambda_minus_generator() {
    let cfg = ou1();
    let system = cfg.system().unwrap();
    let ctx = &system.ctx;
    let f = linear_cylinder(0.8, -0.5);
    // Lf is linear for the OU system; read off its coefficients
    let at = |x: f64, y: f64| apply_l_phi(ctx, &f, &[x], &[y]).unwrap();
    assert!(at(0.0, 0.0).abs() < 1e-14);
    let (lx, ly) = (at(1.0, 0.0), at(0.0, 1.0));
    let lambda = 1.0;
    let g = linear_cylinder(lambda * 0.8 - lx, lambda * -0.5 - ly);
    let integ = Integrator::new(1e-2, Scheme::SemiImplicitLinear).unwrap();
    for w0 in [[0.5, 0.2], [-0.3, 0.7]] {
        let r = estimate_resolvent(&system, &g, lambda, &w0, 2000, 20.0, 5, integ, 60).unwrap();
        let want = f.value(&w0[..1], &w0[1..]);
        assert!((r.value - want).abs() <= 3.0 * r.se + 1e-2, "{w0:?}: {} +- {} vs {want}", r.value, r.se);
    }
}

#[test]
fn overdamped_ou_decay_rate_matches_slow_eigenvalue() {
    let mut cfg = ou1();
    let (a1, a2) = (cfg.coefficients.alpha1, cfg.coefficients.alpha2);
    cfg.coefficients.sigma2 = 0.0;
    cfg.coefficients.sigma1 = 0.5 * (a1 + a2);
    let system = cfg.system().unwrap();
    let m = system.linear_drift_matrix(1);
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr / 4.0 - det;
    assert!(disc > 0.0, "parameters should be overdamped");
    let slow = tr / 2.0 + disc.sqrt();
    let integ = Integrator::new(1e-2, Scheme::SemiImplicitLinear).unwrap();
    let times = [5.0, 10.0, 20.0];
    let curve = estimate_decay(&system, &Cylinder::x(1), &times, 512, 256, 21, integ, None).unwrap();
    let lx: Vec<f64> = times.to_vec();
    let ly: Vec<f64> = curve.rows.iter().map(|r| r.estimate.ln()).collect();
    let (rate, _) = linear_fit(&lx, &ly);
    assert!((rate / slow - 1.0).abs() <= 0.15, "fitted rate {rate} vs slow eigenvalue {slow}");
}

#[test]
fn time_average_of_generator_vanishes() {
    let mut cfg = Preset::ConvexQuadratic.config();
    cfg.n = 2;
    let system = cfg.system().unwrap();
    let f = Cylinder::Polynomial {
        terms: vec![
            Monomial { coeff: 1.0, vars: vec![(Var::Y(1), 2)] },
            Monomial { coeff: 0.5, vars: vec![(Var::X(1), 1), (Var::Y(2), 1)] },
        ],
    };
    let integ = Integrator::new(1e-2, Scheme::SemiImplicitLinear).unwrap();
    let steps = integ.steps_for(200.0);
    let avgs: Vec<f64> = (0..16)
        .map(|r| {
            let mut rng = stream_rng(31, r);
            let w0 = sample_mu_phi_exact(&system, &mut rng);
            let (mut x, mut y) = (w0[..2].to_vec(), w0[2..].to_vec());
            let mut acc = 0.0;
            system
                .run(&mut x, &mut y, integ, steps, &mut rng, |_, x, y| acc += apply_l_phi(&system.ctx, &f, x, y).unwrap())
                .unwrap();
            acc / steps as f64
        })
        .collect();
    let m = MeanSe::from_samples(&avgs);
    assert!(m.mean.abs() <= 3.0 * m.se + 1e-3, "{} +- {}", m.mean, m.se);
}

#[test]
fn doubling_paths_shrinks_se_by_sqrt_two() {
    let system = ou1().system().unwrap();
    let integ = Integrator::new(1e-2, Scheme::SemiImplicitLinear).unwrap();
    let f = Cylinder::monomial(1.0, &[(Var::Y(1), 2)]);
    let a = estimate_semigroup(&system, &f, 1.0, &[0.2, 0.1], 1000, 41, integ).unwrap();
    let b = estimate_semigroup(&system, &f, 1.0, &[0.2, 0.1], 2000, 42, integ).unwrap();
    let ratio = a.se / b.se;
    assert!((ratio / 2f64.sqrt() - 1.0).abs() <= 0.3, "ratio {ratio}");
}

#[test]
fn semigroup_is_a_sup_norm_contraction() {
    let cfg = Preset::ConvexQuadratic.config();
    let system = cfg.system().unwrap();
    let integ = Integrator::new(1e-2, Scheme::SemiImplicitLinear).unwrap();
    let w0 = vec![0.3, -0.2, 0.1, 0.0, 0.5, 0.1, -0.4, 0.2];
    for g in bounded_battery() {
        let sup = g.sup_norm().unwrap();
        for t in [0.5, 2.0] {
            let e = estimate_semigroup(&system, &g, t, &w0, 500, 51, integ).unwrap();
            assert!(e.mean.abs() <= sup + 3.0 * e.se, "{g:?} t={t}: {} vs {sup}", e.mean);
        }
    }
}

/// Terminal states of coupled Euler paths on a fine grid and a grid `ratio` times coarser.
fn coupled_euler(system: &GalerkinSystem, w0: &[f64], t: f64, dt_fine: f64, ratio: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let n = system.n();
    let mut rng = stream_rng(seed, 0);
    let mut fine = w0.to_vec();
    let mut coarse = w0.to_vec();
    let coarse_steps = (t / (dt_fine * ratio as f64)).round() as usize;
    for _ in 0..coarse_steps {
        let mut sum = vec![0.0; n];
        for _ in 0..ratio {
            let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            fine = system.step(&fine, dt_fine, Scheme::EulerMaruyama, &z).unwrap();
            sum.iter_mut().zip(&z).for_each(|(s, v)| *s += v);
        }
        let zc: Vec<f64> = sum.iter().map(|s| s / (ratio as f64).sqrt()).collect();
        coarse = system.step(&coarse, dt_fine * ratio as f64, Scheme::EulerMaruyama, &zc).unwrap();
    }
    (fine, coarse)
}

#[test]
fn euler_strong_error_halves_with_step_on_linear_ou() {
    let mut cfg = Preset::OuLinear.config();
    cfg.n = 2;
    let system = cfg.system().unwrap();
    let w0 = [0.3, -0.2, 0.4, 0.1];
    let t = 1.0;
    let fine = 1e-3 / 4.0;
    let err = |ratio: usize| {
        let errs: Vec<f64> = (0..200)
            .map(|p| {
                let (f, c) = coupled_euler(&system, &w0, t, fine, ratio, 61 + p);
                f.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        MeanSe::from_samples(&errs).mean
    };
    // dt = 0.016 and 0.008 against a reference at dt/64
    let (e1, e2) = (err(64), err(32));
    let ratio = e1 / e2;
    // additive noise: Euler has strong order one
    assert!((1.6..=2.4).contains(&ratio), "errors {e1} {e2}, ratio {ratio}");
}

#[test]
fn audit_se_halves_when_budget_quadruples() {
    let mut cfg = Preset::ConvexQuadratic.config();
    cfg.n = 2;
    let ctx = cfg.context().unwrap();
    let battery = vec![(
        Cylinder::monomial(1.0, &[(Var::Y(1), 2)]),
        Cylinder::monomial(1.0, &[(Var::X(1), 1), (Var::Y(1), 1)]),
    )];
    let small = audit_identities(&ctx, &battery, 20_000, 71).unwrap();
    let large = audit_identities(&ctx, &battery, 80_000, 72).unwrap();
    for (a, b) in small.rows.iter().zip(&large.rows) {
        if a.se == 0.0 {
            continue;
        }
        let ratio = a.se / b.se;
        assert!((ratio / 2.0 - 1.0).abs() <= 0.3, "{}: ratio {ratio}", a.identity);
    }
}

#[test]
fn decay_at_zero_matches_direct_norm() {
    let mut cfg = Preset::ConvexQuadratic.config();
    cfg.n = 2;
    let system = cfg.system().unwrap();
    let f = Cylinder::y(1);
    let integ = Integrator::new(1e-2, Scheme::SemiImplicitLinear).unwrap();
    let curve = estimate_decay(&system, &f, &[0.0], 20_000, 2, 81, integ, None).unwrap();
    let (_, direct) = centered_norm(&system, &f, 200_000, 82).unwrap();
    let r = curve.rows[0];
    assert!((r.estimate - direct).abs() <= 3.0 * r.se + 0.01 * direct, "{} +- {} vs {direct}", r.estimate, r.se);
}

#[test]
fn semigroup_contracts_in_l2() {
    let mut cfg = Preset::ConvexQuadratic.config();
    cfg.n = 2;
    let system = cfg.system().unwrap();
    let integ = Integrator::new(1e-2, Scheme::SemiImplicitLinear).unwrap();
    let times = [0.0, 0.5, 2.0];
    for f in [Cylinder::monomial(1.0, &[(Var::Y(1), 2)]), bounded_battery()[1].clone()] {
        let (mean, _) = centered_norm(&system, &f, 100_000, 91).unwrap();
        let curve = estimate_decay(&system, &f, &times, 256, 64, 92, integ, None).unwrap();
        // ∫(T_t f)² = ‖T_t f - μ(f)‖² + μ(f)²
        let m2 = mean.estimate * mean.estimate;
        let r0 = curve.rows[0];
        for r in &curve.rows[1..] {
            let lhs = r.estimate * r.estimate + m2;
            let rhs = r0.estimate * r0.estimate + m2;
            let se = 2.0 * (r.estimate * r.se).hypot(r0.estimate * r0.se);
            assert!(lhs <= rhs + 3.0 * se, "t={}: {lhs} vs {rhs} (SE {se})", r.t);
        }
    }
}
