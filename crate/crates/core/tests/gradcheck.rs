mod common;

use common::gradcheck;

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for seed in 0..20 {
        let r = gradcheck(seed, 40);
        assert!(r.max_rel_err < 1e-4, "seed {seed}: {:?} at {}px, rel err {:e}", r.config, r.size, r.max_rel_err);
    }
}
