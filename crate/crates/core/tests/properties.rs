//! Property tests for the structural invariants.

use proptest::prelude::*;

use nomore_core::noise::{composition_probability, BatchComposition, MixtureSpec};
use nomore_core::norm::{bn_forward, NormKind, NormalizerSpec};
use nomore_core::stats::pca;
use nomore_core::tensor::{Tape, Tensor};

proptest! {
    /// Same-shape elementwise ops never broadcast: any shape disagreement
    /// is an error.
    #[test]
    fn mismatched_shapes_always_error(
        a in 1usize..5, b in 1usize..5, c in 1usize..5, d in 1usize..5
    ) {
        prop_assume!((a, b) != (c, d));
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![a, b], vec![1.0; a * b], false).unwrap();
        let y = tape.leaf_from(vec![c, d], vec![1.0; c * d], false).unwrap();
        prop_assert!(tape.add(x, y).is_err());
        prop_assert!(tape.sub(x, y).is_err());
        prop_assert!(tape.mul(x, y).is_err());
    }

    /// relu output is non-negative and idempotent.
    #[test]
    fn relu_idempotent(data in proptest::collection::vec(-100.0f64..100.0, 1..64)) {
        let mut tape = Tape::new();
        let n = data.len();
        let x = tape.leaf_from(vec![n], data, false).unwrap();
        let once = tape.relu(x);
        let twice = tape.relu(once);
        prop_assert!(tape.data(once).iter().all(|&v| v >= 0.0));
        prop_assert_eq!(tape.data(once), tape.data(twice));
    }

    /// Permuting samples within a batch permutes BN outputs identically.
    #[test]
    fn bn_permutation_equivariance(
        seed in 0u64..1000,
        rows in 2usize..8,
        cols in 1usize..5,
    ) {
        let mut rng = nomore_core::Rng::new(seed);
        let data = rng.normal_vec(rows * cols);
        let mut perm: Vec<usize> = (0..rows).collect();
        rng.shuffle(&mut perm);

        let mut tape = Tape::new();
        let mut spec = NormalizerSpec::new(&mut tape, NormKind::Batch, cols, 1e-5, 0.1).unwrap();
        let x = tape.leaf_from(vec![rows, cols], data.clone(), false).unwrap();
        let y = bn_forward(&mut tape, x, &mut spec).unwrap();
        let out = tape.data(y).to_vec();

        let permuted: Vec<f64> =
            perm.iter().flat_map(|&r| data[r * cols..(r + 1) * cols].to_vec()).collect();
        let mut spec2 = NormalizerSpec::new(&mut tape, NormKind::Batch, cols, 1e-5, 0.1).unwrap();
        let x2 = tape.leaf_from(vec![rows, cols], permuted, false).unwrap();
        let y2 = bn_forward(&mut tape, x2, &mut spec2).unwrap();
        let out2 = tape.data(y2);
        for (new_row, &old_row) in perm.iter().enumerate() {
            for c in 0..cols {
                let a = out2[new_row * cols + c];
                let b = out[old_row * cols + c];
                prop_assert!((a - b).abs() < 1e-10, "({},{}): {} vs {}", new_row, c, a, b);
            }
        }
    }

    /// Multinomial composition probabilities sum to 1 over all
    /// compositions of B into the mixture's classes.
    #[test]
    fn composition_probabilities_sum_to_one(
        p_raw in proptest::collection::vec(0.05f64..1.0, 2..4),
        batch in 2usize..7,
    ) {
        let total: f64 = p_raw.iter().sum();
        let probs: Vec<f64> = p_raw.iter().map(|p| p / total).collect();
        let n = probs.len();
        let spec = MixtureSpec::new(
            vec![vec![0.0]; n],
            vec![vec![1.0]; n],
            probs,
        ).unwrap();

        // Enumerate all count vectors summing to `batch`.
        fn visit(n: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if n == 1 {
                prefix.push(left);
                out.push(prefix.clone());
                prefix.pop();
                return;
            }
            for take in 0..=left {
                prefix.push(take);
                visit(n - 1, left - take, prefix, out);
                prefix.pop();
            }
        }
        let mut all = Vec::new();
        visit(n, batch, &mut Vec::new(), &mut all);
        let mut sum = 0.0;
        for counts in all {
            let comp = BatchComposition::new(counts, batch).unwrap();
            sum += composition_probability(&spec, &comp).unwrap();
        }
        prop_assert!((sum - 1.0).abs() < 1e-10, "total probability {}", sum);
    }

    /// PCA components stay orthonormal and the spectrum sorted on
    /// arbitrary data.
    #[test]
    fn pca_orthonormal_sorted(seed in 0u64..500, n in 6usize..30, d in 2usize..5) {
        let mut rng = nomore_core::Rng::new(seed);
        let samples: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|j| rng.normal() * (j + 1) as f64).collect())
            .collect();
        let r = pca(&samples, d).unwrap();
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = (0..d).map(|k| r.components[k * d + i] * r.components[k * d + j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-10);
            }
        }
        for w in r.explained_variance.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(r.explained_variance.iter().all(|&v| v >= 0.0));
    }

    /// Tensor dump round-trips bit-exactly for arbitrary shapes and data.
    #[test]
    fn tensor_dump_round_trip(
        dims in proptest::collection::vec(1usize..5, 0..4),
        seed in 0u64..1000,
    ) {
        let numel: usize = dims.iter().product();
        let mut rng = nomore_core::Rng::new(seed);
        let data: Vec<f64> = (0..numel).map(|_| rng.normal() * 1e3).collect();
        let mut buf = Vec::new();
        nomore_core::io::write_tensor(&mut buf, &dims, &data).unwrap();
        let (shape2, data2) = nomore_core::io::read_tensor(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(&dims, &shape2);
        prop_assert_eq!(
            data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            data2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    /// Tensor construction enforces the shape/data agreement invariant.
    #[test]
    fn tensor_shape_data_invariant(
        dims in proptest::collection::vec(1usize..6, 1..4),
        extra in 1usize..4,
    ) {
        let numel: usize = dims.iter().product();
        prop_assert!(Tensor::new(dims.clone(), vec![0.0; numel]).is_ok());
        prop_assert!(Tensor::new(dims, vec![0.0; numel + extra]).is_err());
    }
}
