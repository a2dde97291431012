mod common;

use common::{gradcheck_all, max_relative_error, Case};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsnas::tensor::Tensor;

#[test]
fn every_op_matches_finite_differences() {
    for (op, worst) in gradcheck_all(20, 7) {
        assert!(worst < 1e-5, "{op}: relative error {worst:e}");
    }
}

#[test]
fn composite_cell_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = common::random_tensor(&[2, 3, 4, 4], &mut rng);
    let w1 = common::random_tensor(&[3, 3, 3, 3], &mut rng);
    let w2 = common::random_tensor(&[2, 3, 1, 1], &mut rng);
    let g = common::random_tensor(&[3], &mut rng).map(|v| v + 1.5);
    let b = common::random_tensor(&[3], &mut rng);
    let case = Case {
        inputs: vec![x, w1, w2, g, b],
        build: Box::new(|t, v| {
            let c = t.conv2d(v[0], v[1]).unwrap();
            let (n, _) = t.batch_norm_train(c, v[3], v[4], 1e-5).unwrap();
            let r = t.relu(n);
            let p = t.maxpool3x3(r).unwrap();
            let s = t.slice_channels(p, 2).unwrap();
            let q = t.conv2d(v[0], v[2]).unwrap();
            let a = t.add(&[s, q]).unwrap();
            t.concat_channels(&[a, r]).unwrap()
        }),
    };
    let err = max_relative_error(&case, &mut rng);
    assert!(err < 1e-5, "relative error {err:e}");
}

#[test]
fn unused_inputs_get_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let case = Case {
        inputs: vec![Tensor::filled(&[1, 1, 2, 2], 0.5), Tensor::filled(&[1, 1, 2, 2], 2.0)],
        build: Box::new(|t, v| t.scale(v[0], 3.0)),
    };
    assert!(max_relative_error(&case, &mut rng) < 1e-9);
}
