use bng_core::data::Batch;
use bng_core::mlp::{finite_diff_grad, layer_layout, max_relative_error, MlpModel};
use bng_core::numerics::DenseMatrix;
use bng_core::rng::SplitMix64;
use bng_core::BlockedVector;

fn batch(rng: &mut SplitMix64, n: usize, dim: usize, classes: usize) -> Batch {
    let x = (0..n * dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let y = (0..n).map(|_| rng.below(classes as u64) as usize).collect();
    Batch::new(DenseMatrix::new(n, dim, x).unwrap(), y).unwrap()
}

#[test]
fn backprop_matches_central_differences_on_small_grid() {
    let mut rng = SplitMix64::new(99);
    let mut checked = 0;
    for depth in 2..=4 {
        for width in [2, 3, 5, 10] {
            let mut dims = vec![width];
            for _ in 0..depth - 1 {
                dims.push(2 + rng.below(9) as usize);
            }
            dims.push(width.max(2));
            let model = MlpModel::new(&dims, rng.next_u64()).unwrap();
            let b = batch(&mut rng, 4, dims[0], *dims.last().unwrap());
            let (_, g) = model.loss_and_grad(&b).unwrap();
            let fd = finite_diff_grad(&model, &b, 1e-4).unwrap();
            let err = max_relative_error(g.as_slice(), fd.as_slice(), 1e-8);
            assert!(err < 1e-5, "dims {dims:?}: {err:e}");
            checked += 1;
        }
    }
    assert_eq!(checked, 12);
}

#[test]
fn gradient_blocks_follow_layers() {
    let dims = [7, 5, 3];
    let layout = layer_layout(&dims).unwrap();
    assert_eq!(layout.num_blocks(), 2);
    assert_eq!(layout.block_len(0), 7 * 5 + 5);
    assert_eq!(layout.block_len(1), 5 * 3 + 3);
    let model = MlpModel::new(&dims, 1).unwrap();
    let mut rng = SplitMix64::new(3);
    let (_, g) = model.loss_and_grad(&batch(&mut rng, 6, 7, 3)).unwrap();
    let rebuilt = BlockedVector::from_blocks(&g.to_blocks()).unwrap();
    assert_eq!(rebuilt, g);
}
