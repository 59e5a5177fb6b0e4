use std::f64::consts::PI;

use desp::autodiff::{sort_desc_columns, Tape, Tensor};
use desp::datasets::{generate, polygon_at, GenSpec, Label, Task, POLYGON_RADIUS};
use desp::eval::{circular_std, estimate_rotation};
use desp::langevin::{chain_rng, transition, SetEnergy, StepParams};
use desp::losses::{chamfer_one_sided, hungarian};
use desp::nn::{EnergyKind, EnergyModel, ModelDims, Pooling};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn model(r: &mut ChaCha8Rng, kind: EnergyKind, pooling: Pooling) -> EnergyModel {
    let (x_dim, y_dim, m, width) = (r.random_range(1..4), r.random_range(1..4), r.random_range(2..7), r.random_range(3..9));
    let mut dims = match kind {
        EnergyKind::DeepSets => ModelDims::deep_sets(x_dim, y_dim, m, width),
        EnergyKind::SetEncoder => ModelDims::set_encoder(x_dim, y_dim, m, width, r.random_range(2..5)),
    };
    if kind == EnergyKind::DeepSets {
        dims.h = vec![r.random_range(2..6)];
    }
    dims.knots = r.random_range(2..8);
    dims.pooling = pooling;
    EnergyModel::init(dims, r.random()).unwrap()
}

fn inputs(r: &mut ChaCha8Rng, m: &EnergyModel, b: usize) -> (Tensor, Tensor) {
    let x = uniform(r, &[b, m.dims.x_dim], -1.0, 1.0);
    let y = uniform(r, &[b, m.dims.max_size, m.dims.y_dim], -1.0, 1.0);
    (x, y)
}

fn permute_rows(y: &Tensor, perm: &[usize]) -> Tensor {
    let (b, m, d) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    let mut out = Vec::with_capacity(y.len());
    for bi in 0..b {
        for &i in perm {
            let row = (bi * m + i) * d;
            out.extend_from_slice(&y.data()[row..row + d]);
        }
    }
    Tensor::new(vec![b, m, d], out).unwrap()
}

fn shuffled(r: &mut ChaCha8Rng, m: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        p.swap(i, r.random_range(0..=i));
    }
    p
}

fn kind_of(k: u8) -> EnergyKind {
    if k.is_multiple_of(2) { EnergyKind::DeepSets } else { EnergyKind::SetEncoder }
}

fn pooling_of(p: u8) -> Pooling {
    [Pooling::Fspool, Pooling::Sum, Pooling::Mean][p as usize % 3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sort_then_inverse_permutation_restores_input(seed in any::<u64>(), b in 1usize..4, m in 1usize..8, d in 1usize..5) {
        let r = &mut chain_rng(seed, 0);
        let mut t = uniform(r, &[b, m, d], -2.0, 2.0);
        // duplicated rows exercise the tie-break
        if m > 1 {
            let row: Vec<f64> = t.data()[..d].to_vec();
            t.data_mut()[d..2 * d].copy_from_slice(&row);
        }
        let (sorted, perm) = sort_desc_columns(&t).unwrap();
        let mut back = vec![f64::NAN; t.len()];
        for (pos, &src_row) in perm.iter().enumerate() {
            let blk = pos / (m * d);
            let col = pos % d;
            back[(blk * m + src_row) * d + col] = sorted.data()[pos];
        }
        prop_assert_eq!(back.as_slice(), t.data());
    }

    #[test]
    fn backward_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let r = &mut chain_rng(seed, 1);
        let a0 = uniform(r, &[3, 4], -2.0, 2.0);
        let w0 = uniform(r, &[4, 2], -2.0, 2.0);
        let grads = |ca: f64, cb: f64| {
            let mut tape = Tape::new();
            let a = tape.leaf(a0.clone());
            let w = tape.leaf(w0.clone());
            let mm = tape.matmul(a, w).unwrap();
            let f = tape.relu(mm);
            let f = tape.sum_all(f);
            let sq = tape.square(a);
            let g = tape.sum_all(sq);
            let fs = tape.scale(f, ca);
            let gs = tape.scale(g, cb);
            let out = tape.add(fs, gs).unwrap();
            let gr = tape.backward(out).unwrap();
            (gr.get(a), gr.get(w))
        };
        let (fa, fw) = grads(1.0, 0.0);
        let (ga, gw) = grads(0.0, 1.0);
        let (ca, cw) = grads(alpha, beta);
        for (c, (f, g)) in ca.data().iter().zip(fa.data().iter().zip(ga.data())) {
            prop_assert!((c - (alpha * f + beta * g)).abs() <= 1e-12 * (1.0 + c.abs()));
        }
        for (c, (f, g)) in cw.data().iter().zip(fw.data().iter().zip(gw.data())) {
            prop_assert!((c - (alpha * f + beta * g)).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn energies_ignore_row_order(seed in any::<u64>(), k in any::<u8>(), p in any::<u8>()) {
        let r = &mut chain_rng(seed, 2);
        let pooling = pooling_of(p);
        let m = model(r, kind_of(k), pooling);
        let (x, y) = inputs(r, &m, 2);
        let perm = shuffled(r, m.dims.max_size);
        let e = m.energies(&x, &y).unwrap();
        let ep = m.energies(&x, &permute_rows(&y, &perm)).unwrap();
        if pooling == Pooling::Fspool {
            prop_assert_eq!(e, ep);
        } else {
            // summation order follows the rows
            for (a, b) in e.iter().zip(&ep) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn fspool_duplicate_pair_gradient_sum_is_stable(seed in any::<u64>(), k in any::<u8>()) {
        let r = &mut chain_rng(seed, 3);
        let m = model(r, kind_of(k), Pooling::Fspool);
        let (x, mut y) = inputs(r, &m, 1);
        let d = m.dims.y_dim;
        let first: Vec<f64> = y.data()[..d].to_vec();
        y.data_mut()[d..2 * d].copy_from_slice(&first);
        let pair_sum = |y: &Tensor, i: usize, j: usize| -> Vec<f64> {
            let (_, g) = m.energy_grad(&x, y).unwrap();
            (0..d).map(|c| g.data()[i * d + c] + g.data()[j * d + c]).collect()
        };
        let base = pair_sum(&y, 0, 1);
        let perm = shuffled(r, m.dims.max_size);
        let yp = permute_rows(&y, &perm);
        let pos = |row: usize| perm.iter().position(|&p| p == row).unwrap();
        let moved = pair_sum(&yp, pos(0), pos(1));
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{base:?} vs {moved:?}");
        }
    }

    #[test]
    fn set_encoder_energy_is_nonnegative(seed in any::<u64>(), p in any::<u8>()) {
        let r = &mut chain_rng(seed, 4);
        let m = model(r, EnergyKind::SetEncoder, pooling_of(p));
        let (x, y) = inputs(r, &m, 3);
        for e in m.energies(&x, &y).unwrap() {
            prop_assert!(e >= 0.0);
        }
    }

    #[test]
    fn energy_is_continuous_in_the_set(seed in any::<u64>(), k in any::<u8>(), p in any::<u8>()) {
        let r = &mut chain_rng(seed, 5);
        let m = model(r, kind_of(k), pooling_of(p));
        let (x, y) = inputs(r, &m, 1);
        let dir = uniform(r, y.shape(), -1.0, 1.0);
        let e0 = m.energies(&x, &y).unwrap()[0];
        let mut last = f64::INFINITY;
        for eta in [1e-2, 1e-4, 1e-6, 1e-8] {
            let moved = Tensor::new(
                y.shape().to_vec(),
                y.data().iter().zip(dir.data()).map(|(a, b)| a + eta * b).collect(),
            ).unwrap();
            let gap = (m.energies(&x, &moved).unwrap()[0] - e0).abs();
            prop_assert!(gap <= last.max(1e-12));
            last = gap;
        }
        prop_assert!(last < 1e-5);
    }

    #[test]
    fn clipped_step_is_bounded(seed in any::<u64>(), clip in 0.01f64..5.0, lambda in 0.001f64..2.0, scale in 0.0f64..100.0) {
        let r = &mut chain_rng(seed, 6);
        let y = uniform(r, &[2, 4, 3], -1.0, 1.0);
        let g = uniform(r, &[2, 4, 3], -scale, scale);
        let p = StepParams { step_size: lambda, noise_std: 0.0, grad_clip: clip };
        let next = transition(&y, &g, p, &mut [chain_rng(seed, 0), chain_rng(seed, 1)], 0..3).unwrap();
        for (a, b) in y.rows().zip(next.rows()) {
            let moved = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            prop_assert!(moved <= lambda * clip * (1.0 + 1e-12));
        }
    }

    #[test]
    fn losses_respect_the_one_sided_bound(seed in any::<u64>(), n in 1usize..7, d in 1usize..4) {
        let r = &mut chain_rng(seed, 7);
        let a = uniform(r, &[n, d], -1.0, 1.0).to_rows();
        let b = uniform(r, &[n, d], -1.0, 1.0).to_rows();
        let (h, _) = hungarian(&a, &b).unwrap();
        prop_assert!(chamfer_one_sided(&a, &b).unwrap() <= h + 1e-12);
    }

    #[test]
    fn generators_are_deterministic(seed in any::<u64>(), t in 0usize..3) {
        let task = [Task::Polygons, Task::Digits, Task::Anomaly][t];
        let spec = GenSpec { task, count: 6, seed, sizes: 3..=8 };
        prop_assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn polygons_have_n_vertices_on_the_circle(seed in any::<u64>()) {
        for e in generate(&GenSpec { task: Task::Polygons, count: 8, seed, sizes: 3..=10 }).unwrap() {
            let Label::Size(n) = e.x else { panic!("polygon without a size") };
            prop_assert_eq!(e.set.len(), n);
            for v in &e.set {
                prop_assert!(((v[0] * v[0] + v[1] * v[1]).sqrt() - POLYGON_RADIUS).abs() < 1e-12);
            }
            let phi = e.meta.rotation.unwrap();
            let est = estimate_rotation(&e.set, n).unwrap();
            let period = 2.0 * PI / n as f64;
            let diff = (est - phi).rem_euclid(period);
            prop_assert!(diff.min(period - diff) < 1e-9, "phi {phi} est {est}");
        }
    }

    #[test]
    fn rotation_estimate_ignores_relabeling_and_symmetry(n in 3usize..11, phi in 0.0f64..6.3, shift in 0usize..10, turns in 0usize..10) {
        let period = 2.0 * PI / n as f64;
        let base = polygon_at(n, phi).set;
        let mut cyc = base.clone();
        cyc.rotate_left(shift % n);
        let turned = polygon_at(n, phi + turns as f64 * period).set;
        let e0 = estimate_rotation(&base, n).unwrap();
        let close = |a: f64, b: f64| {
            let diff = (a - b).rem_euclid(period);
            diff.min(period - diff) < 1e-9
        };
        prop_assert!(close(e0, estimate_rotation(&cyc, n).unwrap()));
        prop_assert!(close(e0, estimate_rotation(&turned, n).unwrap()));
        prop_assert!(circular_std(&[e0, e0, e0], period) < 1e-6);
    }

    #[test]
    fn digits_stay_in_the_unit_square(seed in any::<u64>()) {
        for e in generate(&GenSpec { task: Task::Digits, count: 8, seed, sizes: 3..=3 }).unwrap() {
            for p in &e.set {
                prop_assert!(p.iter().all(|c| (0.0..=1.0).contains(c)));
            }
        }
    }

    #[test]
    fn anomaly_sets_have_a_valid_subset(seed in any::<u64>()) {
        for e in generate(&GenSpec { task: Task::Anomaly, count: 8, seed, sizes: 3..=3 }).unwrap() {
            let valid = e.meta.valid_subsets.clone().unwrap();
            prop_assert!(!valid.is_empty());
            prop_assert!(valid.contains(e.meta.outliers.as_ref().unwrap()));
            let (a, b) = e.meta.attributes.unwrap();
            let inliers: Vec<&Vec<f64>> = e.set.iter().enumerate()
                .filter(|(i, _)| !e.meta.outliers.as_ref().unwrap().contains(i))
                .map(|(_, r)| r)
                .collect();
            prop_assert!(a != b && inliers.len() >= 2);
        }
    }
}

/// Lag-one pairs of pooled sampler noise fall into a 4x4 quartile table
/// whose chi-square statistic stays under the 1% critical value.
#[test]
fn sampler_noise_draws_are_independent() {
    let (b, m, d, steps) = (4, 5, 2, 300);
    let mut rngs: Vec<_> = (0..b as u64).map(|c| chain_rng(11, c)).collect();
    let p = StepParams { step_size: 0.0, noise_std: 1.0, grad_clip: 1.0 };
    let zero = Tensor::zeros(&[b, m, d]);
    let mut draws = Vec::new();
    for _ in 0..steps {
        let next = transition(&zero, &zero, p, &mut rngs, 0..d).unwrap();
        draws.extend_from_slice(next.data());
    }
    assert!(draws.len() >= 10_000);
    // quartiles of the standard normal
    let bin = |z: f64| [(-0.674_489_75), 0.0, 0.674_489_75].iter().filter(|&&q| z > q).count();
    let mut table = [[0.0f64; 4]; 4];
    for w in draws.windows(2) {
        table[bin(w[0])][bin(w[1])] += 1.0;
    }
    let total: f64 = table.iter().flatten().sum();
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..4).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut chi2 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let expected = rows[i] * cols[j] / total;
            chi2 += (table[i][j] - expected).powi(2) / expected;
        }
    }
    assert!(chi2 < 21.666, "chi-square {chi2}");
    let mean = draws.iter().sum::<f64>() / total;
    assert!(mean.abs() < 0.05);
}
