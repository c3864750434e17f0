mod common;

use common::{bits, normal, rng};
use effcd::backbone::FeaturePyramid;
use effcd::changefpn::NeckOutput;
use effcd::config::{ModelConfig, PYRAMID_STRIDES};
use effcd::decoder::{channel_euclidean_distance, normalize_distance, Decoder, DISTANCE_EPS};
use effcd::layers::Builder;
use effcd::model::Network;
use effcd::params::{BufferStore, Ctx, ParamStore};
use effcd::tensor::{BatchNormMode, Tape, Tensor};

const SIGMOID_ONE: f64 = 0.731_058_578_630_004_9;

fn distance(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let d = channel_euclidean_distance(&mut tape, x, y).unwrap();
    tape.value(d).clone()
}

fn gate(d: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(d.clone());
    let g = normalize_distance(&mut tape, v, DISTANCE_EPS).unwrap();
    tape.value(g).clone()
}

#[test]
fn distance_of_equal_maps_is_zero() {
    let f = normal::<f64>(&[2, 5, 4, 4], &mut rng(0));
    assert!(distance(&f, &f).data().iter().all(|&v| v == 0.0));
}

#[test]
fn distance_is_symmetric() {
    let mut r = rng(1);
    let (a, b) = (
        normal::<f64>(&[2, 7, 3, 5], &mut r),
        normal::<f64>(&[2, 7, 3, 5], &mut r),
    );
    assert_eq!(distance(&a, &b), distance(&b, &a));
}

#[test]
fn three_four_five() {
    let a = Tensor::from_vec(vec![1, 2, 1, 1], vec![3.0, 0.0]).unwrap();
    let b = Tensor::from_vec(vec![1, 2, 1, 1], vec![0.0, 4.0]).unwrap();
    assert_eq!(distance(&a, &b).data(), &[5.0]);
}

#[test]
fn distance_matches_pixel_loop() {
    let mut r = rng(2);
    let (n, c, h, w) = (2, 6, 4, 3);
    let a = normal::<f64>(&[n, c, h, w], &mut r);
    let b = normal::<f64>(&[n, c, h, w], &mut r);
    let d = distance(&a, &b);
    for bi in 0..n {
        for p in 0..h * w {
            let mut s = 0.0;
            for ch in 0..c {
                let i = (bi * c + ch) * h * w + p;
                s += (a.data()[i] - b.data()[i]).powi(2);
            }
            assert!((d.data()[bi * h * w + p] - s.sqrt()).abs() <= 1e-6);
        }
    }
}

#[test]
fn zero_distance_gives_half_gate() {
    let g = gate(&Tensor::zeros(&[2, 1, 3, 3]));
    assert!(g.data().iter().all(|&v| v == 0.5));
}

#[test]
fn argmax_pixel_gates_at_sigmoid_one() {
    let d = normal::<f64>(&[2, 1, 5, 5], &mut rng(3)).map(f64::abs);
    let g = gate(&d);
    for n in 0..2 {
        let s = &d.data()[n * 25..][..25];
        let k = (0..25).fold(0, |m, i| if s[i] > s[m] { i } else { m });
        assert!((g.data()[n * 25 + k] - SIGMOID_ONE).abs() <= 1e-6);
        for &v in &g.data()[n * 25..][..25] {
            assert!((0.5..=SIGMOID_ONE + 1e-12).contains(&v));
        }
    }
}

#[test]
fn gate_is_scale_invariant() {
    let d = normal::<f32>(&[1, 1, 6, 6], &mut rng(4)).map(f32::abs).cast::<f64>();
    let base = gate(&d);
    // powers of two scale without rounding, so invariance is bitwise
    for c in [0.25, 2.0, 1024.0] {
        assert_eq!(gate(&d.map(|v| v * c)), base);
    }
    for c in [0.37, 3.0, 1e3] {
        let g = gate(&d.map(|v| v * c));
        for (x, y) in g.data().iter().zip(base.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn negative_distance_rejected() {
    let mut tape = Tape::<f64>::new();
    let d = tape.constant(Tensor::from_vec(vec![1, 1, 1, 2], vec![1.0, -0.5]).unwrap());
    assert!(normalize_distance(&mut tape, d, DISTANCE_EPS).is_err());
}

struct Fixture {
    decoder: Decoder,
    params: ParamStore<f32>,
    buffers: BufferStore<f32>,
}

fn fixture(gated: bool) -> Fixture {
    let mut params = ParamStore::new();
    let mut buffers = BufferStore::new();
    let decoder = Decoder::build(&mut Builder::new(&mut params, &mut buffers, 3), 32, 16, gated).unwrap();
    Fixture {
        decoder,
        params,
        buffers,
    }
}

fn neck_levels(seed: u64) -> Vec<Tensor<f32>> {
    let mut r = rng(seed);
    PYRAMID_STRIDES
        .iter()
        .map(|&s| normal(&[2, 16, 64 / s, 64 / s], &mut r))
        .collect()
}

fn run_decoder(
    decoder: &Decoder,
    f: &mut Fixture,
    a: &[Tensor<f32>],
    b: &[Tensor<f32>],
) -> Vec<(Vec<usize>, Vec<u32>, Vec<u32>)> {
    let mut ctx = Ctx::new(&f.params, &mut f.buffers, BatchNormMode::Eval).frozen();
    let pa = FeaturePyramid::new(a.iter().map(|t| ctx.tape.constant(t.clone())).collect()).unwrap();
    let pb = FeaturePyramid::new(b.iter().map(|t| ctx.tape.constant(t.clone())).collect()).unwrap();
    let outs = decoder
        .decode_all(&mut ctx, &NeckOutput::Pair(pa, pb), (64, 64))
        .unwrap();
    outs.iter()
        .map(|o| {
            (
                ctx.tape.shape(o.decoded).to_vec(),
                bits(ctx.tape.value(o.decoded)),
                bits(ctx.tape.value(o.logit)),
            )
        })
        .collect()
}

#[test]
fn shape_walk_follows_the_stride_schedule() {
    let mut f = fixture(true);
    let d = f.decoder.clone();
    let outs = run_decoder(&d, &mut f, &neck_levels(0), &neck_levels(1));
    assert_eq!(outs.len(), 6);
    let strides = [32, 16, 16, 8, 4, 2];
    for ((shape, _, logit), s) in outs.iter().zip(strides) {
        assert_eq!(shape, &vec![2, 16, 64 / s, 64 / s]);
        assert_eq!(logit.len(), 2 * 64 * 64);
    }
}

#[test]
fn equal_features_halve_the_ungated_output() {
    let mut f = fixture(true);
    let gated = f.decoder.clone();
    let ungated = Decoder {
        gated: false,
        ..gated.clone()
    };
    let x = neck_levels(2);
    let g = run_decoder(&gated, &mut f, &x, &x);
    let u = run_decoder(&ungated, &mut f, &x, &x);
    // the coarsest stage has no carry-over, so its output is exactly halved
    let half = |v: &[u32]| v.iter().map(|&b| f32::from_bits(b) * 0.5).collect::<Vec<_>>();
    let first_g: Vec<f32> = g[0].1.iter().map(|&b| f32::from_bits(b)).collect();
    for (a, b) in first_g.iter().zip(half(&u[0].1)) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn identity_target_preserves_shape() {
    let mut f = fixture(true);
    let mut ctx = Ctx::new(&f.params, &mut f.buffers, BatchNormMode::Eval).frozen();
    let mut r = rng(5);
    let a = ctx.tape.constant(normal(&[1, 16, 4, 4], &mut r));
    let b = ctx.tape.constant(normal(&[1, 16, 4, 4], &mut r));
    let cat = ctx.tape.concat_channels(&[a, b]).unwrap();
    let out = f
        .decoder
        .decode_stage(&mut ctx, 0, cat, Some((a, b)), None, (4, 4))
        .unwrap();
    assert_eq!(ctx.tape.shape(out), &[1, 16, 4, 4]);
    assert!(f
        .decoder
        .decode_stage(&mut ctx, 0, cat, Some((a, b)), None, (2, 4))
        .is_err());
}

#[test]
fn removing_the_gate_equals_the_baseline_decoder() {
    let mut f = fixture(true);
    let ungated = Decoder {
        gated: false,
        ..f.decoder.clone()
    };
    let (x, y) = (neck_levels(6), neck_levels(7));
    let pair = run_decoder(&ungated, &mut f, &x, &y);

    let mut ctx = Ctx::new(&f.params, &mut f.buffers, BatchNormMode::Eval).frozen();
    let levels = x
        .iter()
        .zip(&y)
        .map(|(a, b)| {
            let (a, b) = (ctx.tape.constant(a.clone()), ctx.tape.constant(b.clone()));
            ctx.tape.concat_channels(&[a, b]).unwrap()
        })
        .collect();
    let fused = FeaturePyramid::new(levels).unwrap();
    let base = f.decoder.baseline_decoder(&mut ctx, &fused, (64, 64)).unwrap();
    for (p, o) in pair.iter().zip(&base) {
        assert_eq!(p.2, bits(ctx.tape.value(o.logit)));
    }
}

#[test]
fn all_four_ablation_configurations_run() {
    let mut r = rng(8);
    let a = normal::<f32>(&[1, 3, 64, 64], &mut r);
    let b = normal::<f32>(&[1, 3, 64, 64], &mut r);
    for (changefpn, gated) in [(false, false), (true, false), (false, true), (true, true)] {
        let cfg = ModelConfig {
            use_changefpn: changefpn,
            use_distance_decoder: gated,
            ..ModelConfig::nano()
        };
        let mut net = Network::<f32>::new(&cfg, 0).unwrap();
        let mut ctx = Ctx::new(&net.params, &mut net.buffers, BatchNormMode::Eval).frozen();
        let (va, vb) = (ctx.tape.constant(a.clone()), ctx.tape.constant(b.clone()));
        let outs = net.model.forward(&mut ctx, va, vb).unwrap();
        assert_eq!(outs.len(), 6, "({changefpn}, {gated})");
        for o in &outs {
            assert_eq!(ctx.tape.shape(o.logit), &[1, 1, 64, 64]);
            assert!(ctx.tape.value(o.logit).is_finite());
        }
        // the mask comes from the sixth output only
        let main = bits(ctx.tape.value(outs[5].logit));
        assert_eq!(bits(&net.predict(&a, &b).unwrap()), main);
    }
}
