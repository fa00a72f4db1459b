use sscgan::nn::{normal_vec, power_iteration, seeded_rng};
use sscgan::verify::singular_values;

#[test]
fn random_5x7_matches_svd_after_50_steps() {
    for seed in 0..10 {
        let mut rng = seeded_rng(seed);
        let w: Vec<f64> = normal_vec(35, &mut rng);
        let u0: Vec<f64> = normal_vec(5, &mut rng);
        let est = power_iteration(&w, 5, 7, &u0, 50).sigma;
        let exact = singular_values(&w, 5, 7)[0];
        assert!(
            (est - exact).abs() / exact < 1e-3,
            "seed {seed}: {est} vs {exact}"
        );
    }
}

#[test]
fn diagonal_2x2_within_20_steps() {
    let est = power_iteration(&[2.0f64, 0.0, 0.0, 1.0], 2, 2, &[0.6, 0.8], 20).sigma;
    assert!((est - 2.0).abs() < 1e-4, "{est}");
}

#[test]
fn svd_oracle_on_a_rank_one_matrix() {
    // a bᵀ has the single singular value ‖a‖·‖b‖.
    let (a, b) = ([1.0, 2.0, 2.0], [3.0, 4.0]);
    let w: Vec<f64> = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| x * y))
        .collect();
    let sv = singular_values(&w, 3, 2);
    assert!(
        (sv[0] - 15.0).abs() < 1e-12 && sv[1].abs() < 1e-12,
        "{sv:?}"
    );
}
