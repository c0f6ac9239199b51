use blindsr::generator::{apply_dropout_mode, build_generator, Generator, GeneratorConfig, StarDenseBlock, Variant};
use blindsr::nn::{ParamStore, pixel_shuffle};
use candle_core::{DType, Device, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k * k + cout
}

/// Parameter count of the reference RRDB generator (dense blocks without skip projections).
fn rrdb_reference_params(cin: usize, cout: usize, nf: usize, nb: usize, gc: usize) -> usize {
    let rdb: usize = (0..4).map(|i| conv(nf + i * gc, gc, 3)).sum::<usize>() + conv(nf + 4 * gc, nf, 3);
    conv(cin, nf, 3) + nb * 3 * rdb + 4 * conv(nf, nf, 3) + conv(nf, cout, 3)
}

fn lite_reference_params(cin: usize, cout: usize, nf: usize) -> usize {
    conv(cin, nf, 5) + 5 * conv(nf, nf, 3) + conv(nf, cout * 16, 3) + conv(cout, cout, 3)
}

fn small_star() -> GeneratorConfig {
    GeneratorConfig {
        base_features: 8,
        num_blocks: 1,
        growth_channels: 4,
        ..GeneratorConfig::default()
    }
}

fn small_lite() -> GeneratorConfig {
    GeneratorConfig {
        base_features: 8,
        ..GeneratorConfig::lite()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn input(n: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let data: Vec<f32> = (0..n * 3 * h * w).map(|_| rand::Rng::random::<f32>(&mut r)).collect();
    Tensor::from_vec(data, (n, 3, h, w), &Device::Cpu).unwrap()
}

fn bits(t: &Tensor) -> Vec<u32> {
    t.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn star_parameter_count_is_close_to_reference_rrdb() {
    let g = build_generator(&GeneratorConfig::default(), &mut rng(0)).unwrap();
    let reference = rrdb_reference_params(3, 3, 64, 23, 32);
    assert_eq!(reference, 16_697_987);
    let rel = (g.num_params() as f64 - reference as f64).abs() / reference as f64;
    assert!(rel < 0.05, "star has {} params, reference {reference}", g.num_params());
    // The only additions are the 1×1 skip projections, one per dense block.
    assert_eq!(g.num_params(), reference + 23 * 3 * conv(64, 32, 1));
}

#[test]
fn lite_parameter_count_is_a_small_fraction_of_star() {
    let lite = build_generator(&GeneratorConfig::lite(), &mut rng(0)).unwrap();
    assert_eq!(lite.num_params(), lite_reference_params(3, 3, 64));
    let star = build_generator(&GeneratorConfig::default(), &mut rng(0)).unwrap();
    assert!((lite.num_params() as f64) < 0.1 * star.num_params() as f64);
}

#[test]
fn same_seed_gives_identical_weights() {
    for cfg in [small_star(), small_lite()] {
        let a = build_generator(&cfg, &mut rng(7)).unwrap().params().snapshot().unwrap();
        let b = build_generator(&cfg, &mut rng(7)).unwrap().params().snapshot().unwrap();
        let c = build_generator(&cfg, &mut rng(8)).unwrap().params().snapshot().unwrap();
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (k, v) in &a {
            assert_eq!(bits(v), bits(&b[k]), "{k}");
        }
        assert!(a.iter().any(|(k, v)| bits(v) != bits(&c[k])));
    }
}

#[test]
fn full_size_star_maps_64_to_256() {
    let g = build_generator(&GeneratorConfig::default(), &mut rng(1)).unwrap();
    let y = g.infer(&input(1, 64, 64, 0)).unwrap();
    assert_eq!(y.dims(), &[1, 3, 256, 256]);
    let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
    assert!(v.iter().all(|x| x.is_finite()));
}

#[test]
fn non_square_batches_keep_the_x4_contract() {
    for cfg in [small_star(), GeneratorConfig::lite()] {
        let g = build_generator(&cfg, &mut rng(2)).unwrap();
        assert_eq!(g.infer(&input(2, 17, 23, 1)).unwrap().dims(), &[2, 3, 68, 92]);
    }
}

#[test]
fn rejects_wrong_channel_count_and_bad_configs() {
    let g = build_generator(&small_lite(), &mut rng(0)).unwrap();
    let x = Tensor::zeros((1, 4, 16, 16), DType::F32, &Device::Cpu).unwrap();
    assert!(g.forward(&x).is_err());
    let bad = [
        GeneratorConfig { upscale: 2, ..small_star() },
        GeneratorConfig { residual_scale: 0.0, ..small_star() },
        GeneratorConfig { dropout_prob: 1.0, ..small_star() },
    ];
    for cfg in bad {
        assert!(build_generator(&cfg, &mut rng(0)).is_err());
    }
    assert!("medium".parse::<Variant>().is_err());
    assert_eq!("lite".parse::<Variant>().unwrap(), Variant::Lite);
}

#[test]
fn zeroed_dense_block_is_exact_identity() {
    let mut store = ParamStore::new(DType::F32);
    let mut r = rng(3);
    let block = StarDenseBlock::new(&mut store.root(&mut r), 16, 8, 0.2).unwrap();
    for (_, v) in store.params() {
        v.set(&v.zeros_like().unwrap()).unwrap();
    }
    let mut r = rng(4);
    let data: Vec<f32> = (0..2 * 16 * 9 * 11).map(|_| rand::Rng::random_range(&mut r, -3.0..3.0)).collect();
    let x = Tensor::from_vec(data, (2, 16, 9, 11), &Device::Cpu).unwrap();
    assert_eq!(bits(&block.forward(&x).unwrap()), bits(&x));
}

#[test]
fn every_block_of_a_zeroed_stack_passes_its_input_through() {
    let g = build_generator(&small_star(), &mut rng(5)).unwrap();
    for (_, v) in g.params().params() {
        v.set(&v.zeros_like().unwrap()).unwrap();
    }
    let x = input(1, 8, 8, 2).repeat((1, 3, 1, 1)).unwrap().narrow(1, 0, 8).unwrap();
    for rrdb in g.star_blocks().unwrap() {
        for block in rrdb.blocks() {
            assert_eq!(bits(&block.forward(&x).unwrap()), bits(&x));
        }
    }
}

#[test]
fn every_parameter_receives_a_gradient() {
    for cfg in [small_star(), small_lite()] {
        let g = build_generator(&cfg, &mut rng(6)).unwrap();
        let x = input(1, 8, 8, 3);
        let target = input(1, 32, 32, 4);
        let loss = (g.forward(&x).unwrap() - target).unwrap().abs().unwrap().mean_all().unwrap();
        let grads = loss.backward().unwrap();
        for (name, var) in g.params().params() {
            let gr = grads.get(var.as_tensor()).unwrap_or_else(|| panic!("{:?}: no gradient for {name}", cfg.variant));
            let v = gr.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(v.iter().all(|x| x.is_finite()), "{name}");
        }
    }
}

#[test]
fn disabled_dropout_makes_train_and_eval_identical() {
    let g = build_generator(&small_lite(), &mut rng(7)).unwrap();
    let x = input(1, 16, 16, 5);
    let eval = g.infer(&x).unwrap();
    let train = g.forward_train(&x, &mut rng(1)).unwrap();
    assert_eq!(bits(&eval), bits(&train));
}

#[test]
fn eval_mode_ignores_dropout() {
    let g = apply_dropout_mode(build_generator(&small_lite(), &mut rng(8)).unwrap(), true, 0.5).unwrap();
    let x = input(1, 16, 16, 6);
    assert_eq!(bits(&g.infer(&x).unwrap()), bits(&g.infer(&x).unwrap()));
    let t1 = g.forward_train(&x, &mut rng(1)).unwrap();
    let t2 = g.forward_train(&x, &mut rng(2)).unwrap();
    assert_ne!(bits(&t1), bits(&t2));
    assert!(apply_dropout_mode(g, true, 1.0).is_err());
}

#[test]
fn dropout_rate_matches_probability() {
    let g = apply_dropout_mode(build_generator(&small_lite(), &mut rng(9)).unwrap(), true, 0.5).unwrap();
    let x = input(1, 4, 4, 7);
    let mut r = rng(10);
    let (mut dropped, mut total) = (0usize, 0usize);
    for _ in 0..1000 {
        let (_, keep) = g.forward_train_with_mask(&x, &mut r).unwrap();
        dropped += keep.iter().filter(|k| !**k).count();
        total += keep.len();
    }
    let frac = dropped as f64 / total as f64;
    assert!((frac - 0.5).abs() <= 0.05, "dropped fraction {frac}");
}

#[test]
fn pixel_shuffle_shapes() {
    let x = Tensor::zeros((1, 48, 8, 8), DType::F32, &Device::Cpu).unwrap();
    assert_eq!(pixel_shuffle(&x, 4).unwrap().dims(), &[1, 3, 32, 32]);
    let x = Tensor::zeros((1, 47, 8, 8), DType::F32, &Device::Cpu).unwrap();
    assert!(pixel_shuffle(&x, 4).is_err());
}

fn generators() -> &'static (Generator, Generator) {
    static CELL: std::sync::OnceLock<(Generator, Generator)> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        (
            build_generator(&small_star(), &mut rng(11)).unwrap(),
            build_generator(&small_lite(), &mut rng(12)).unwrap(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_is_four_times_input(h in 16usize..40, w in 16usize..40) {
        let (star, lite) = generators();
        let x = Tensor::zeros((1, 3, h, w), DType::F32, &Device::Cpu).unwrap();
        let (ys, yl) = (star.infer(&x).unwrap(), lite.infer(&x).unwrap());
        prop_assert_eq!(ys.dims(), &[1, 3, 4 * h, 4 * w]);
        prop_assert_eq!(yl.dims(), &[1, 3, 4 * h, 4 * w]);
    }
}
