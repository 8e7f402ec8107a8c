use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uplot::miest::entropy_discrete;
use uplot::reduce::{kmeans_assign, kmeans_fit, spatial_coarsen, ClusterModel, CoarsenConfig};
use uplot::Tensor;

fn brute_nearest(model: &ClusterModel, mask: &[f32]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in model.centroids().iter().enumerate() {
        let d: f64 = c.iter().zip(mask).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

fn noisy_archetypes(seed: u64) -> (Vec<Vec<f32>>, Vec<usize>) {
    let side = 8;
    let archetypes: Vec<Vec<f32>> = vec![
        (0..64).map(|i| if i % side < 4 { 1.0 } else { 0.0 }).collect(),
        (0..64).map(|i| if i / side < 3 { 1.0 } else { 0.0 }).collect(),
        (0..64).map(|i| if (i % side + i / side) % 7 == 0 { 1.0 } else { 0.0 }).collect(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::new();
    let mut truth = Vec::new();
    for n in 0..20 {
        let a = n % 3;
        let mut m = archetypes[a].clone();
        for _ in 0..2 {
            let p = rng.gen_range(0..64);
            m[p] = 1.0 - m[p];
        }
        masks.push(m);
        truth.push(a);
    }
    (masks, truth)
}

#[test]
fn recovers_three_archetypes() {
    for seed in 0..5 {
        let (masks, truth) = noisy_archetypes(seed);
        let rows: Vec<&[f32]> = masks.iter().map(Vec::as_slice).collect();
        let model = kmeans_fit(&rows, 3, seed, 100).unwrap();
        assert!(model.converged);
        let labels: Vec<usize> = masks.iter().map(|m| kmeans_assign(&model, m).unwrap()).collect();
        for (m, &l) in masks.iter().zip(&labels) {
            assert_eq!(l, brute_nearest(&model, m));
        }
        // The clustering matches the archetypes up to relabelling.
        for i in 0..masks.len() {
            for j in 0..masks.len() {
                assert_eq!(truth[i] == truth[j], labels[i] == labels[j], "seed {seed}");
            }
        }
    }
}

#[test]
fn converged_model_is_a_fixed_point() {
    let (masks, _) = noisy_archetypes(9);
    let rows: Vec<&[f32]> = masks.iter().map(Vec::as_slice).collect();
    let model = kmeans_fit(&rows, 4, 3, 100).unwrap();
    assert!(model.converged);
    let labels: Vec<usize> = masks.iter().map(|m| kmeans_assign(&model, m).unwrap()).collect();
    for (c, centroid) in model.centroids().iter().enumerate() {
        let members: Vec<&Vec<f32>> = masks.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(m, _)| m).collect();
        assert!(!members.is_empty());
        for (d, &v) in centroid.iter().enumerate() {
            let mean = members.iter().map(|m| m[d] as f64).sum::<f64>() / members.len() as f64;
            assert!((v as f64 - mean).abs() < 1e-6);
        }
    }
}

#[test]
fn persistence_round_trip() {
    let (masks, _) = noisy_archetypes(2);
    let rows: Vec<&[f32]> = masks.iter().map(Vec::as_slice).collect();
    let model = kmeans_fit(&rows, 3, 1, 50).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    assert_eq!(ClusterModel::load(dir.path()).unwrap(), model);
}

#[test]
fn coarsen_reads_blocks_row_major() {
    let mut m = Tensor::zeros(&[8, 8]);
    // Fill the top-left and bottom-right 4x4 blocks.
    for r in 0..8 {
        for c in 0..8 {
            if (r < 4) == (c < 4) {
                m.data_mut()[r * 8 + c] = 1.0;
            }
        }
    }
    let code = spatial_coarsen(&m, &CoarsenConfig { grid: 2, threshold: 8 }).unwrap();
    assert_eq!(code, 0b1001);
}

fn binary_masks() -> impl Strategy<Value = Vec<Vec<f32>>> {
    prop::collection::vec(prop::collection::vec(prop::bool::ANY.prop_map(|b| b as u8 as f32), 16), 4..24)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_never_increases(masks in binary_masks(), k in 1usize..4, seed in 0u64..100) {
        let rows: Vec<&[f32]> = masks.iter().map(Vec::as_slice).collect();
        let distinct = masks.iter().map(|m| m.iter().map(|&v| v as u8).collect::<Vec<_>>())
            .collect::<std::collections::BTreeSet<_>>().len();
        prop_assume!(k <= distinct);
        let model = kmeans_fit(&rows, k, seed, 100).unwrap();
        for w in model.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", model.objective_history);
        }
        let mut counts = vec![0u64; k];
        for m in &masks {
            let l = kmeans_assign(&model, m).unwrap();
            prop_assert_eq!(l, brute_nearest(&model, m));
            counts[l] += 1;
        }
        let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
        prop_assert!(entropy_discrete(&counts).unwrap() <= (k as f64).log2() + 1e-12);
    }

    #[test]
    fn coarse_code_fits_in_grid_bits(bits in prop::collection::vec(prop::bool::ANY, 64), grid in prop::sample::select(vec![1usize, 2, 4]), t in 0usize..4) {
        let m = Tensor::new(vec![8, 8], bits.iter().map(|&b| b as u8 as f32).collect()).unwrap();
        let block = 8 / grid;
        prop_assume!(t < block * block);
        let code = spatial_coarsen(&m, &CoarsenConfig { grid, threshold: t }).unwrap();
        prop_assert!(code < 1u64 << (grid * grid));
    }
}
