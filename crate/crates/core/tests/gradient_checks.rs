mod oracles;

use oracles::gradients;

#[test]
fn policy_gradients_on_random_configurations() {
    for seed in 0..20 {
        let worst = gradients::policy_check(seed, seed % 2 == 1);
        assert!(worst < 1e-4, "seed {seed}: relative error {worst}");
    }
}

#[test]
fn value_gradients_on_random_configurations() {
    for seed in 0..20 {
        let worst = gradients::value_check(seed, seed % 2 == 1);
        assert!(worst < 1e-4, "seed {seed}: relative error {worst}");
    }
}
