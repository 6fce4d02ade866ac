use candle_core::{DType, Device, Tensor};
use misfit_core::attention::{
    exchange_queries, flatten_grid, project_qkv, scaled_attention, AttentionConfig, AttentionMap, AttentionParams,
};
use misfit_core::nn::ParamStore;
use misfit_oracles as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn randn(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

fn tensor(v: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_slice(v, shape, &Device::Cpu).unwrap()
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_vec1().unwrap()
}

fn params(store: &mut ParamStore, name: &str, d_in: usize, cfg: &AttentionConfig, rng: &mut ChaCha8Rng) -> AttentionParams {
    AttentionParams::new(store, name, d_in, cfg, 0.5, rng).unwrap()
}

fn check_rows(map: &Tensor, tol: f64) -> f64 {
    let (b, n, m) = map.dims3().unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..b {
        let am = AttentionMap::from_tensor(map, i).unwrap();
        assert_eq!((am.rows, am.cols), (n, m));
        for r in 0..n {
            let row = am.row(r);
            assert!(row.iter().all(|&p| p >= 0.0), "negative attention weight");
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    assert!(worst <= tol, "row sum off by {worst}");
    worst
}

#[test]
fn maps_are_row_stochastic_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let heads = [1, 2, 4][i % 3];
        let cfg = AttentionConfig {
            d_model: heads * rng.gen_range(1..=4),
            n_heads: heads,
            qkv_bias: i % 2 == 0,
            positional_encoding: i % 5 == 0,
        };
        let d = rng.gen_range(1..=6);
        let (hr, wr) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let (hi, wi) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        // Some pairs use large activations to push the softmax into saturation.
        let scale = if i % 7 == 0 { 30.0 } else { 1.0 };
        let mut store = ParamStore::new(DType::F64, Device::Cpu);
        let pr = params(&mut store, "rgb", d, &cfg, &mut rng);
        let pi = params(&mut store, "ir", d, &cfg, &mut rng);
        let fr = tensor(&randn(&mut rng, d * hr * wr, scale), &[1, d, hr, wr]);
        let fi = tensor(&randn(&mut rng, d * hi * wi, scale), &[1, d, hi, wi]);
        let ex = exchange_queries(&fr, &fi, &pr, &pi).unwrap();
        assert_eq!(ex.map_rgb_to_ir.dims(), &[1, hr * wr, hi * wi]);
        assert_eq!(ex.map_ir_to_rgb.dims(), &[1, hi * wi, hr * wr]);
        worst = worst.max(check_rows(&ex.map_rgb_to_ir, 1e-6));
        worst = worst.max(check_rows(&ex.map_ir_to_rgb, 1e-6));
    }
    println!("worst row-sum deviation over 1000 pairs: {worst:e}");
}

#[test]
fn identical_keys_give_uniform_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = AttentionConfig {
        d_model: 8,
        n_heads: 4,
        ..Default::default()
    };
    for _ in 0..50 {
        let mut store = ParamStore::new(DType::F64, Device::Cpu);
        let pr = params(&mut store, "rgb", 3, &cfg, &mut rng);
        let pi = params(&mut store, "ir", 3, &cfg, &mut rng);
        let fr = tensor(&randn(&mut rng, 3 * 16, 1.0), &[1, 3, 4, 4]);
        // Every thermal position carries the same feature vector.
        let v = randn(&mut rng, 3, 1.0);
        let fi: Vec<f64> = (0..3 * 9).map(|i| v[i / 9]).collect();
        let fi = tensor(&fi, &[1, 3, 3, 3]);
        let ex = exchange_queries(&fr, &fi, &pr, &pi).unwrap();
        for p in flat(&ex.map_rgb_to_ir) {
            assert!((p - 1.0 / 9.0).abs() < 1e-6, "{p}");
        }
    }
}

#[test]
fn scaled_attention_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for heads in [1, 2, 4] {
        let (n, m, dm) = (rng.gen_range(1..10), rng.gen_range(1..10), 4 * heads);
        let (q, k, v) = (randn(&mut rng, n * dm, 1.0), randn(&mut rng, m * dm, 1.0), randn(&mut rng, m * dm, 1.0));
        let out = scaled_attention(&tensor(&q, &[1, n, dm]), &tensor(&k, &[1, m, dm]), &tensor(&v, &[1, m, dm]), heads)
            .unwrap();
        let (want_out, want_map) = oracle::attention(&q, &k, &v, n, m, dm, heads);
        for (a, b) in flat(&out.attended).iter().zip(&want_out) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in flat(&out.map).iter().zip(&want_map) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn projections_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = AttentionConfig {
        d_model: 6,
        n_heads: 2,
        qkv_bias: true,
        ..Default::default()
    };
    let mut store = ParamStore::new(DType::F64, Device::Cpu);
    let p = params(&mut store, "rgb", 3, &cfg, &mut rng);
    let x = tensor(&randn(&mut rng, 3 * 2 * 5, 1.0), &[1, 3, 2, 5]);
    let qkv = project_qkv(&x, &p).unwrap();
    let tokens = flat(&flatten_grid(&x).unwrap());
    // Stored weights are d_in × d_out; the oracle wants d_out × d_in.
    let w = flat(&store.get("rgb.query.weight").unwrap().as_tensor().t().unwrap());
    let b = flat(store.get("rgb.query.bias").unwrap().as_tensor());
    let want = oracle::linear(&tokens, &w, Some(&b), 10, 3, 6);
    for (a, b) in flat(&qkv.q).iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn hand_evaluated_cases() {
    let eye = [1.0, 0.0, 0.0, 1.0];
    let out = scaled_attention(&tensor(&eye, &[1, 2, 2]), &tensor(&eye, &[1, 2, 2]), &tensor(&eye, &[1, 2, 2]), 1)
        .unwrap();
    let map = flat(&out.map);
    assert!((map[0] - 0.6698).abs() < 1e-4 && (map[1] - 0.3302).abs() < 1e-4);

    // A single key position: the map is a column of ones and every query
    // receives that value row.
    let q = tensor(&[0.3, -1.0, 2.0, 0.5, 0.0, 1.0], &[1, 3, 2]);
    let kv = tensor(&[0.7, -0.2], &[1, 1, 2]);
    let out = scaled_attention(&q, &kv, &kv, 2).unwrap();
    assert_eq!(flat(&out.map), vec![1.0; 3]);
    assert_eq!(flat(&out.attended), [0.7, -0.2].repeat(3));
}

#[test]
fn key_permutation_and_logit_shift_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (n, m, dm, heads) = (5, 7, 8, 2);
    for _ in 0..20 {
        let (q, k, v) = (randn(&mut rng, n * dm, 1.0), randn(&mut rng, m * dm, 1.0), randn(&mut rng, m * dm, 1.0));
        let base = scaled_attention(&tensor(&q, &[1, n, dm]), &tensor(&k, &[1, m, dm]), &tensor(&v, &[1, m, dm]), heads)
            .unwrap();
        let (base_out, base_map) = (flat(&base.attended), flat(&base.map));

        let mut perm: Vec<usize> = (0..m).collect();
        perm.reverse();
        perm.swap(0, 3);
        let permute = |x: &[f64]| -> Vec<f64> { perm.iter().flat_map(|&j| x[j * dm..(j + 1) * dm].to_vec()).collect() };
        let p = scaled_attention(
            &tensor(&q, &[1, n, dm]),
            &tensor(&permute(&k), &[1, m, dm]),
            &tensor(&permute(&v), &[1, m, dm]),
            heads,
        )
        .unwrap();
        for (a, b) in flat(&p.attended).iter().zip(&base_out) {
            assert!((a - b).abs() < 1e-6);
        }
        let pm = flat(&p.map);
        for i in 0..n {
            for (jj, &j) in perm.iter().enumerate() {
                assert!((pm[i * m + jj] - base_map[i * m + j]).abs() < 1e-6);
            }
        }

        // Adding one vector to every key shifts each logit row by a constant.
        let u = randn(&mut rng, dm, 3.0);
        let shifted: Vec<f64> = k.iter().enumerate().map(|(i, x)| x + u[i % dm]).collect();
        let s = scaled_attention(&tensor(&q, &[1, n, dm]), &tensor(&shifted, &[1, m, dm]), &tensor(&v, &[1, m, dm]), heads)
            .unwrap();
        for (a, b) in flat(&s.map).iter().zip(&base_map) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

/// Central differences of a fixed linear readout of both attended tensors
/// against the analytic gradient, for every entry of W_Q, W_K and W_V of
/// both modalities.
#[test]
fn projection_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = AttentionConfig {
        d_model: 4,
        n_heads: 2,
        ..Default::default()
    };
    let mut store = ParamStore::new(DType::F64, Device::Cpu);
    let pr = params(&mut store, "rgb", 4, &cfg, &mut rng);
    let pi = params(&mut store, "ir", 4, &cfg, &mut rng);
    let fr = tensor(&randn(&mut rng, 4 * 16, 1.0), &[1, 4, 4, 4]);
    let fi = tensor(&randn(&mut rng, 4 * 9, 1.0), &[1, 4, 3, 3]);
    let rr = tensor(&randn(&mut rng, 4 * 16, 1.0), &[1, 4, 4, 4]);
    let ri = tensor(&randn(&mut rng, 4 * 9, 1.0), &[1, 4, 3, 3]);
    let readout = || -> Tensor {
        let ex = exchange_queries(&fr, &fi, &pr, &pi).unwrap();
        let a = (&ex.attended_ir * &rr).unwrap().sum_all().unwrap();
        let b = (&ex.attended_rgb * &ri).unwrap().sum_all().unwrap();
        (a + b).unwrap()
    };
    let grads = readout().backward().unwrap();

    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for modality in ["rgb", "ir"] {
        for proj in ["query", "key", "value"] {
            let var = store.get(&format!("{modality}.{proj}.weight")).unwrap();
            let base = flat(var.as_tensor());
            let analytic = flat(grads.get(var.as_tensor()).unwrap());
            let mut probe = base.clone();
            for i in 0..base.len() {
                let mut at = |s: f64| {
                    probe[i] = base[i] + s;
                    var.set(&tensor(&probe, var.dims())).unwrap();
                    readout().to_scalar::<f64>().unwrap()
                };
                let numeric = (at(h) - at(-h)) / (2.0 * h);
                probe[i] = base[i];
                let scale = analytic[i].abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((analytic[i] - numeric).abs() / scale);
            }
            var.set(&tensor(&base, var.dims())).unwrap();
        }
    }
    println!("max relative error over W_Q, W_K, W_V: {worst:e}");
    assert!(worst < 1e-4, "max relative error {worst}");
}
