use laguerre::cost_geometry::{universal_constants, CostFamily, CostModel, SiteSet};
use laguerre::dual_solver::{damped_newton, NewtonOptions};
use laguerre::experiment::config::{random_masses, random_points};
use laguerre::experiment::trial_rng;
use laguerre::gridded_measure::{g_map, rasterize_cells, GriddedMeasure, Instance};
use laguerre::stability_metrics::{evaluate_bounds, PerturbationPair, PwParameters};
use laguerre::storage_fee::{solve_storage_fee, storage_objective, HyperrectangleFee, StorageOptions};
use rand::Rng;

fn unit_square(res: usize) -> GriddedMeasure {
    GriddedMeasure::uniform(vec![0.0, 0.0], vec![1.0, 1.0], vec![res, res]).unwrap()
}

#[test]
fn mass_map_is_exact_off_the_pixel_grid() {
    // 100 pixels per side, so neither interface lies on pixel edges.
    let mu = unit_square(100);
    let q = CostModel::new(CostFamily::QuadraticDistance, 2).unwrap();

    // Vertical interface at x = 0.5 - 2 (psi_0 - psi_1).
    let s = SiteSet::new(&[vec![0.25, 0.5], vec![0.75, 0.5]]).unwrap();
    let g = g_map(Instance::new(&q, &s, &mu).unwrap(), &[-0.0123, 0.0]).unwrap();
    assert!((g[0] - 0.5246).abs() < 1e-12, "{g:?}");

    // Diagonal interface x + y = 1 - 2 psi_0 cuts off a triangle of side 0.9.
    let s = SiteSet::new(&[vec![0.25, 0.25], vec![0.75, 0.75]]).unwrap();
    let g = g_map(Instance::new(&q, &s, &mu).unwrap(), &[-0.05, 0.0]).unwrap();
    assert!((g[1] - 0.405).abs() < 1e-12, "{g:?}");
    assert!((g[0] + g[1] - 1.0).abs() < 1e-14);
}

#[test]
fn storage_minimizer_beats_feasible_competitors() {
    let mu = unit_square(96);
    let model = CostModel::new(CostFamily::QuadraticDistance, 2).unwrap();
    let mut rng = trial_rng(3, 0);
    let n = 5;
    let sites = SiteSet::new(&random_points(&[0.0, 0.0], &[1.0, 1.0], n, &mut rng)).unwrap();
    let inst = Instance::new(&model, &sites, &mu).unwrap();
    let upper: Vec<f64> = random_masses(n, &mut rng).iter().map(|m| m * 1.2).collect();
    let fee = HyperrectangleFee::new(vec![0.05; n], upper).unwrap();
    let opts = StorageOptions::default();
    let sol = solve_storage_fee(inst, &fee, &opts).unwrap();
    assert!(fee.contains(&sol.lambda, 1e-9));
    assert!(sol.kkt_residual < 1e-6, "kkt {}", sol.kkt_residual);
    let best = storage_objective(inst, &sol.lambda, &opts).unwrap();
    for _ in 0..30 {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
        let other = fee.project(&v).unwrap();
        assert!(fee.contains(&other, 1e-12));
        assert!(best <= storage_objective(inst, &other, &opts).unwrap() + 1e-9);
    }
}

#[test]
fn solved_perturbations_respect_the_asserted_bounds() {
    let mu = unit_square(128);
    for (k, family) in [CostFamily::InnerProduct, CostFamily::QuadraticDistance].into_iter().enumerate() {
        let model = CostModel::new(family, 2).unwrap();
        let mut rng = trial_rng(5, k as u64);
        let n = 6;
        let sites = SiteSet::new(&random_points(&[0.0, 0.0], &[1.0, 1.0], n, &mut rng)).unwrap();
        let inst = Instance::new(&model, &sites, &mu).unwrap();
        let lambda1 = random_masses(n, &mut rng);
        let mut lambda2 = lambda1.clone();
        lambda2[0] += 0.01;
        lambda2[1] -= 0.01;
        let opts = NewtonOptions { tol: 1e-10, ..NewtonOptions::default() };
        let psi1 = damped_newton(inst, &lambda1, None, &opts).unwrap().psi.values;
        let psi2 = damped_newton(inst, &lambda2, Some(&psi1), &opts).unwrap().psi.values;
        let p1 = rasterize_cells(inst, &psi1).unwrap();
        let p2 = rasterize_cells(inst, &psi2).unwrap();
        let consts = universal_constants(&model, &sites, &mu).unwrap();
        let pair = PerturbationPair { psi1: &psi1, psi2: &psi2, lambda1: &lambda1, lambda2: &lambda2, p1: &p1, p2: &p2 };
        let report = evaluate_bounds(&model, &sites, &mu, pair, &consts, PwParameters { q: 2.0, c_pw: mu.diameter() / 2.0 }).unwrap();
        let violations: Vec<_> = report.violations().collect();
        assert!(violations.is_empty(), "{violations:?}");
        assert!((report.lambda_l1 - 0.02).abs() < 1e-12);
        assert!(report.mu_symmetric_difference.total > 0.0);
    }
}
