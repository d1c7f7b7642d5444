use innervsense_core::stats::{anova2, f_cdf, f_sf, AnovaResult, FactorialTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

/// Sums of squares straight from the observation-level definitions.
fn oracle(t: &FactorialTable) -> (f64, f64, f64, f64, f64) {
    let obs: Vec<(usize, usize, f64)> = t
        .cells
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().flat_map(move |(j, c)| c.iter().map(move |&y| (i, j, y))))
        .collect();
    let mean_of = |f: &dyn Fn(&(usize, usize, f64)) -> bool| {
        let sel: Vec<f64> = obs.iter().filter(|o| f(o)).map(|o| o.2).collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    };
    let g = mean_of(&|_| true);
    let (mut ss_a, mut ss_b, mut ss_cells, mut ss_e, mut ss_t) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(i, j, y) in &obs {
        let ai = mean_of(&|o| o.0 == i);
        let bj = mean_of(&|o| o.1 == j);
        let cij = mean_of(&|o| o.0 == i && o.1 == j);
        ss_a += (ai - g).powi(2);
        ss_b += (bj - g).powi(2);
        ss_cells += (cij - g).powi(2);
        ss_e += (y - cij).powi(2);
        ss_t += (y - g).powi(2);
    }
    (ss_a, ss_b, ss_cells - ss_a - ss_b, ss_e, ss_t)
}

fn random_table(rng: &mut ChaCha8Rng) -> FactorialTable {
    let na = rng.random_range(2..5);
    let nb = rng.random_range(2..6);
    let n = rng.random_range(2..6);
    let cells = (0..na)
        .map(|i| {
            (0..nb)
                .map(|j| (0..n).map(|_| 100.0 + 10.0 * i as f64 - 3.0 * j as f64 + rng.random_range(-20.0..20.0)).collect())
                .collect()
        })
        .collect();
    FactorialTable::new("a", "b", (0..na).map(|i| i as f64).collect(), (0..nb).map(|j| j as f64).collect(), cells)
        .unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn anova_matches_definition_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let t = random_table(&mut rng);
        let r = anova2(&t).unwrap();
        let (a, b, ab, e, tot) = oracle(&t);
        assert!(rel(r.a.ss, a) < 1e-9, "{} vs {a}", r.a.ss);
        assert!(rel(r.b.ss, b) < 1e-9);
        assert!(rel(r.ab.ss, ab) < 1e-9 || (r.ab.ss - ab).abs() < 1e-9 * tot);
        assert!(rel(r.ss_error, e) < 1e-9);
        assert!(rel(r.a.ss + r.b.ss + r.ab.ss + r.ss_error, tot) < 1e-9);
        assert!(rel(r.a.f, (a / r.a.df as f64) / (e / r.df_error as f64)) < 1e-9);
    }
}

fn assert_same_f(x: &AnovaResult, y: &AnovaResult) {
    for (p, q) in [(&x.a, &y.a), (&x.b, &y.b), (&x.ab, &y.ab)] {
        assert!(rel(p.f, q.f) < 1e-9);
        assert!((p.p - q.p).abs() < 1e-12);
    }
}

#[test]
fn scaling_and_shifting_leave_f_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let t = random_table(&mut rng);
        let r = anova2(&t).unwrap();
        let scaled = anova2(&t.map_values(|v| 3.5 * v)).unwrap();
        assert!(rel(scaled.a.ss, 3.5 * 3.5 * r.a.ss) < 1e-9);
        assert_same_f(&r, &scaled);
        let shifted = anova2(&t.map_values(|v| v + 1000.0)).unwrap();
        assert_same_f(&r, &shifted);
        assert!((shifted.grand_mean - r.grand_mean - 1000.0).abs() < 1e-9);
    }
}

#[test]
fn replicate_order_is_irrelevant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t = random_table(&mut rng);
    let mut p = t.clone();
    for cell in p.cells.iter_mut().flatten() {
        cell.reverse();
        cell.rotate_left(1);
    }
    let (x, y) = (anova2(&t).unwrap(), anova2(&p).unwrap());
    assert_same_f(&x, &y);
    assert!(rel(x.ss_error, y.ss_error) < 1e-12);
}

#[test]
fn f_cdf_agrees_with_reference_distribution() {
    for &(d1, d2) in &[(1.0, 1.0), (2.0, 60.0), (4.0, 60.0), (8.0, 60.0), (5.0, 17.0), (200.0, 200.0), (3.0, 150.0)] {
        let dist = FisherSnedecor::new(d1, d2).unwrap();
        for k in 0..60 {
            let x = 0.05 * k as f64 + 0.01 * (k * k) as f64;
            let ours = f_cdf(x, d1, d2).unwrap();
            assert!((ours - dist.cdf(x)).abs() < 1e-10, "F({d1},{d2}) at {x}: {ours} vs {}", dist.cdf(x));
        }
    }
}

#[test]
fn reported_interaction_p_value() {
    let p = f_sf(2.87, 8.0, 60.0).unwrap();
    assert!((p - 0.009).abs() <= 0.001, "{p}");
}
