//! Acceptance run: one PASS/FAIL line per criterion, with the measured
//! quantities. Runs without the libtest harness so the report always prints.

mod common;

use std::time::{Duration, Instant};

use common::{bits, normal, rng};
use effcd::app::{
    ablation_table, evaluate, gradcheck, load_checkpoint, run_ablation, run_training, save_checkpoint,
    GradcheckOptions, RunConfig, SyntheticConfig, ABLATION_ROWS,
};
use effcd::backbone::{Backbone, FeaturePyramid};
use effcd::changefpn::{changefpn_forward, layer_exchange, ExchangePattern, Fpn};
use effcd::config::{ModelConfig, PYRAMID_STRIDES};
use effcd::datapipe::{
    chip_grid, sliding_windows, stitch_logits, synthetic_dataset, AugmentPolicy, BinaryMask, LogitMap, Raster,
};
use effcd::decoder::{channel_euclidean_distance, normalize_distance, DISTANCE_EPS};
use effcd::layers::Builder;
use effcd::model::Network;
use effcd::objective::{bce_loss, confusion_matrix, total_loss, MetricReport};
use effcd::params::{BufferStore, Ctx, ParamStore};
use effcd::tensor::{BatchNormMode, Tape, Tensor};
use rand::Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gradient_suite() -> Check {
    let t = Instant::now();
    let report = gradcheck(&ModelConfig::nano(), &GradcheckOptions::default()).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let worst = report.groups.iter().map(|g| g.worst_rel_error).fold(0.0, f64::max);
    let summary = format!(
        "worst rel err {worst:.2e} over {} groups, {:.1}s",
        report.groups.len(),
        secs
    );
    ensure(report.passed && worst <= 1e-4, format!("{summary}\n{}", report.table()))?;
    ensure(secs < 120.0, format!("{summary} exceeds 2 min"))?;
    Ok(summary)
}

fn table_one() -> Check {
    let cfg = ModelConfig::b5();
    let mut params = ParamStore::<f32>::new();
    let mut buffers = BufferStore::new();
    let bb = Backbone::build(&mut Builder::new(&mut params, &mut buffers, 0), &cfg).map_err(|e| e.to_string())?;
    let mut ctx = Ctx::new(&params, &mut buffers, BatchNormMode::Eval).frozen();
    let img = ctx.tape.constant(normal(&[1, 3, 256, 256], &mut rng(0)));
    let outs = bb.stage_outputs(&mut ctx, img).map_err(|e| e.to_string())?;
    let expected = [
        (128, 48),
        (128, 24),
        (64, 40),
        (32, 64),
        (16, 128),
        (16, 176),
        (8, 304),
        (8, 512),
    ];
    ensure(outs.len() == 8, format!("{} stages", outs.len()))?;
    let mut held = 0;
    for (i, (&v, &(res, ch))) in outs.iter().zip(&expected).enumerate() {
        let s = ctx.tape.shape(v);
        ensure(
            s == [1, ch, res, res],
            format!("stage {}: {s:?}, want {res}x{res}x{ch}", i + 1),
        )?;
        held += 1;
    }
    Ok(format!("{held}/8 stage shapes"))
}

fn changefpn_properties() -> Check {
    let ch = ModelConfig::nano().pyramid_channels();
    let levels = |seed| -> Vec<Tensor<f32>> {
        let mut r = rng(seed);
        ch.iter()
            .zip(&PYRAMID_STRIDES)
            .map(|(&c, &s)| normal(&[2, c, 64 / s, 64 / s], &mut r))
            .collect()
    };
    let (x, y) = (levels(1), levels(2));
    let p = ExchangePattern::default();

    let mut tape = Tape::<f32>::new();
    let mut pyr = |t: &[Tensor<f32>]| FeaturePyramid::new(t.iter().map(|v| tape.constant(v.clone())).collect());
    let fa = pyr(&x).map_err(|e| e.to_string())?;
    let fb = pyr(&y).map_err(|e| e.to_string())?;
    let (ab, ba) = layer_exchange(&tape, &fa, &fb, &p).map_err(|e| e.to_string())?;
    let (a2, b2) = layer_exchange(&tape, &ab, &ba, &p).map_err(|e| e.to_string())?;
    let dump = |ps: [&FeaturePyramid; 2]| -> Vec<Vec<u32>> {
        ps.iter()
            .flat_map(|p| p.levels.iter().map(|&v| bits(tape.value(v))))
            .collect()
    };
    ensure(dump([&fa, &fb]) == dump([&a2, &b2]), "exchange is not an involution")?;

    let on = Network::<f32>::new(&ModelConfig::nano(), 0).map_err(|e| e.to_string())?;
    let off_cfg = ModelConfig {
        use_changefpn: false,
        ..ModelConfig::nano()
    };
    let off = Network::<f32>::new(&off_cfg, 0).map_err(|e| e.to_string())?;
    ensure(
        on.parameter_count() == off.parameter_count(),
        format!("{} vs {} parameters", on.parameter_count(), off.parameter_count()),
    )?;

    let mut params = ParamStore::new();
    let mut buffers = BufferStore::new();
    let fpn =
        Fpn::build(&mut Builder::new(&mut params, &mut buffers, 1), "neck.fpn", &ch, 16).map_err(|e| e.to_string())?;
    let run = |x: &[Tensor<f32>], y: &[Tensor<f32>]| -> Vec<Vec<u32>> {
        let mut buffers = BufferStore::new();
        let mut ctx = Ctx::new(&params, &mut buffers, BatchNormMode::Eval).frozen();
        let fa = FeaturePyramid::new(x.iter().map(|t| ctx.tape.constant(t.clone())).collect()).unwrap();
        let fb = FeaturePyramid::new(y.iter().map(|t| ctx.tape.constant(t.clone())).collect()).unwrap();
        let (oa, ob) = changefpn_forward(&mut ctx, &fpn, &fa, &fb, true).unwrap();
        oa.levels
            .iter()
            .chain(&ob.levels)
            .map(|&v| bits(ctx.tape.value(v)))
            .collect()
    };
    let fwd = run(&x, &y);
    let swp = run(&y, &x);
    ensure(
        fwd[..6] == swp[6..] && fwd[6..] == swp[..6],
        "neck is not swap equivariant",
    )?;
    Ok(format!(
        "involution bitwise, +0 parameters ({}), swap equivariant bitwise",
        on.parameter_count()
    ))
}

fn distance_gate() -> Check {
    let eval = |f: &dyn Fn(&mut Tape<f64>) -> effcd::Result<effcd::tensor::Var>| -> Tensor<f64> {
        let mut tape = Tape::new();
        let v = f(&mut tape).unwrap();
        tape.value(v).clone()
    };
    let mut r = rng(3);
    let a = normal::<f64>(&[2, 8, 6, 6], &mut r);
    let b = normal::<f64>(&[2, 8, 6, 6], &mut r);
    let dist = |x: &Tensor<f64>, y: &Tensor<f64>| {
        eval(&|t| {
            let (u, v) = (t.constant(x.clone()), t.constant(y.clone()));
            channel_euclidean_distance(t, u, v)
        })
    };
    let gate = |d: &Tensor<f64>| {
        eval(&|t| {
            let v = t.constant(d.clone());
            normalize_distance(t, v, DISTANCE_EPS)
        })
    };
    ensure(dist(&a, &a).data().iter().all(|&v| v == 0.0), "D(F,F) != 0")?;
    let d = dist(&a, &b);
    ensure(d == dist(&b, &a), "D not symmetric")?;
    let g = gate(&d);
    let sig1 = 1.0 / (1.0 + (-1.0f64).exp());
    let mut worst = 0.0f64;
    for n in 0..2 {
        let s = &d.data()[n * 36..][..36];
        let k = (0..36).fold(0, |m, i| if s[i] > s[m] { i } else { m });
        worst = worst.max((g.data()[n * 36 + k] - sig1).abs());
    }
    ensure(worst <= 1e-6, format!("argmax gate off by {worst:.2e}"))?;
    for c in [0.5, 4.0, 256.0] {
        ensure(gate(&d.map(|v| v * c)) == g, format!("scale {c} changes the gate"))?;
    }
    // other scales round once in the product, so only near-exact
    let mut drift = 0.0f64;
    for c in [0.37, 3.0, 1e3] {
        let gc = gate(&d.map(|v| v * c));
        drift = gc
            .data()
            .iter()
            .zip(g.data())
            .fold(drift, |m, (x, y)| m.max((x - y).abs()));
    }
    ensure(drift <= 1e-12, format!("arbitrary-scale drift {drift:.1e}"))?;
    Ok(format!(
        "D(F,F)=0, symmetric, argmax |g-σ(1)|={worst:.1e}, power-of-two scales bitwise, other scales {drift:.1e}"
    ))
}

fn loss_arithmetic() -> Check {
    for k in 0..5 {
        let mut tape = Tape::<f64>::new();
        let main = tape.constant(Tensor::scalar(0.0));
        let aux: Vec<_> = (0..5)
            .map(|j| tape.constant(Tensor::scalar(if j == k { 1.0 } else { 0.0 })))
            .collect();
        let t = total_loss(&mut tape, main, &aux).map_err(|e| e.to_string())?;
        let w = tape.value(t).data()[0];
        ensure(w == 0.2, format!("aux {k} weighs {w}"))?;
    }
    let mut r = rng(4);
    let z = normal::<f64>(&[2, 1, 16, 16], &mut r).map(|v| 3.0 * v);
    let y: Vec<f64> = (0..z.numel()).map(|_| r.random_bool(0.4) as u8 as f64).collect();
    let labels = Tensor::from_vec(z.shape().to_vec(), y.clone()).unwrap();
    let mut tape = Tape::new();
    let v = tape.constant(z.clone());
    let l = bce_loss(&mut tape, v, &labels).map_err(|e| e.to_string())?;
    let mut sum = 0.0;
    for (&zi, &yi) in z.data().iter().zip(&y) {
        let p = (1.0 / (1.0 + (-zi).exp())).clamp(1e-7, 1.0 - 1e-7);
        sum += -(yi * p.ln() + (1.0 - yi) * (1.0 - p).ln());
    }
    let err = (tape.value(l).data()[0] - sum / y.len() as f64).abs();
    ensure(err <= 1e-6, format!("bce differs from loop by {err:.2e}"))?;
    Ok(format!("aux weights 0.2 exactly, bce vs loop {err:.1e}"))
}

fn metric_oracle() -> Check {
    let mut r = rng(5);
    for i in 0..50 {
        let (w, h) = (r.random_range(8..48), r.random_range(8..48));
        let mut mask = || BinaryMask::from_vec(w, h, (0..w * h).map(|_| r.random_bool(0.5) as u8).collect()).unwrap();
        let (pred, label) = (mask(), mask());
        let cm = confusion_matrix(&pred, &label).map_err(|e| e.to_string())?;
        let mut c = [0u64; 4];
        for (&p, &l) in pred.data().iter().zip(label.data()) {
            c[match (p, l) {
                (1, 1) => 0,
                (1, 0) => 1,
                (0, 1) => 2,
                _ => 3,
            }] += 1;
        }
        ensure([cm.tp, cm.fp, cm.fn_, cm.tn] == c, format!("pair {i}: counts differ"))?;
        let [tp, fp, fn_, tn] = c.map(|v| v as f64);
        let (prec, rec) = (tp / (tp + fp), tp / (tp + fn_));
        let naive = [
            (tp + tn) / (tp + tn + fn_ + fp),
            tp / (tp + fn_ + fp),
            2.0 * prec * rec / (prec + rec),
            rec,
            prec,
        ];
        ensure(
            cm.metrics().map_err(|e| e.to_string())?.values() == naive,
            format!("pair {i}: metrics differ"),
        )?;
    }
    let report = confusion_matrix(&BinaryMask::filled(4, 4, true), &BinaryMask::filled(4, 4, true))
        .and_then(|cm| cm.metrics())
        .map_err(|e| e.to_string())?;
    let header = MetricReport::table(&[("x", report)]);
    let first = header.lines().next().unwrap_or_default();
    ensure(first.ends_with("OA\tIoU\tF1\tRec\tPrec"), format!("header {first:?}"))?;
    Ok("50 pairs exact, columns OA IoU F1 Rec Prec".into())
}

fn tiling_arithmetic() -> Check {
    let grid = chip_grid(1024, 1024, 256, 64).map_err(|e| e.to_string())?;
    let per = grid.len();
    let counts = [445 * per, 64 * per, 128 * per];
    ensure(per == 36, format!("{per} tiles per image"))?;
    ensure(counts == [16020, 2304, 4608], format!("{counts:?}"))?;
    let windows = sliding_windows(512, 512, 256, 170).map_err(|e| e.to_string())?;
    let mut hit = vec![false; 512 * 512];
    for &(x0, y0) in &windows {
        for y in y0..y0 + 256 {
            hit[y * 512 + x0..y * 512 + x0 + 256].fill(true);
        }
    }
    ensure(windows.len() == 9, format!("{} windows", windows.len()))?;
    ensure(hit.iter().all(|&h| h), "windows leave gaps")?;
    Ok(format!(
        "{per} tiles, {}/{}/{} patches, 9 windows covering",
        counts[0], counts[1], counts[2]
    ))
}

fn train_losses(cfg: &RunConfig) -> effcd::Result<Vec<u64>> {
    let data = synthetic_dataset(4, 64, cfg.seed);
    let out = run_training(cfg, &data, &[], None)?;
    Ok(out.history.iter().map(|e| e.loss.total.to_bits()).collect())
}

fn round_trips() -> Check {
    let mut r = rng(6);
    let (w, h) = (300, 270);
    let img: Vec<f32> = (0..w * h).map(|_| r.random_range(-4.0..4.0)).collect();
    let img = Raster::from_vec(w, h, 1, img).unwrap();
    let grid = chip_grid(w, h, 128, 32).map_err(|e| e.to_string())?;
    let padded = img
        .pad_reflect(grid.padded_w, grid.padded_h)
        .map_err(|e| e.to_string())?;
    let tiles: Vec<((usize, usize), LogitMap)> = grid
        .origins
        .iter()
        .map(|&(x, y)| ((x, y), padded.crop(x, y, 128, 128).unwrap()))
        .collect();
    let back = stitch_logits(&tiles, 128, grid.padded_w, grid.padded_h)
        .and_then(|s| s.crop(0, 0, w, h))
        .map_err(|e| e.to_string())?;
    ensure(back == img, "stitch∘chip is not the identity")?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let net = Network::<f32>::new(&ModelConfig::nano(), 7).map_err(|e| e.to_string())?;
    save_checkpoint(dir.path(), &net, None, 0, &[]).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(dir.path(), Some(&ModelConfig::nano()))
        .map_err(|e| e.to_string())?
        .network;
    for id in net.params.ids() {
        let other = loaded.params.id(net.params.name(id)).ok_or("parameter lost")?;
        ensure(
            bits(net.params.value(id)) == bits(loaded.params.value(other)),
            format!("{} differs after reload", net.params.name(id)),
        )?;
    }
    for ((n1, s1), (n2, s2)) in net.buffers.iter().zip(loaded.buffers.iter()) {
        ensure(
            n1 == n2 && bits(&s1.mean) == bits(&s2.mean) && bits(&s1.var) == bits(&s2.var),
            format!("buffer {n1} differs after reload"),
        )?;
    }

    let mut cfg = RunConfig::new("nano", 50);
    cfg.batch_size = 2;
    cfg.val_every = 50;
    cfg.seed = 11;
    let first = train_losses(&cfg).map_err(|e| e.to_string())?;
    let second = train_losses(&cfg).map_err(|e| e.to_string())?;
    ensure(
        first.len() == 50 && first == second,
        "loss curves differ between seeded runs",
    )?;
    Ok(format!(
        "stitch∘chip exact ({} tiles), checkpoint bitwise ({} tensors), 50-step losses bitwise",
        grid.len(),
        net.params.len()
    ))
}

fn synthetic_overfit() -> Check {
    let t = Instant::now();
    let mut cfg = RunConfig::new("nano", 300);
    cfg.batch_size = 8;
    cfg.val_every = 50;
    cfg.augment = AugmentPolicy::identity();
    cfg.data.synthetic = Some(SyntheticConfig { pairs: 8, size: 64 });
    let pairs = synthetic_dataset(8, 64, cfg.seed);
    let mut out = run_training(&cfg, &pairs, &pairs, None).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let f1 = evaluate(&mut out.network, &pairs)
        .and_then(|cm| cm.metrics())
        .map_err(|e| e.to_string())?
        .f1;
    let reached = out
        .history
        .iter()
        .find(|e| e.validation.as_ref().is_some_and(|v| v.report.f1 >= 0.95))
        .map(|e| e.step);
    let summary = format!(
        "final F1 {f1:.4}, first F1 >= 0.95 at step {}, {:.1}s",
        reached.map_or("-".into(), |s| s.to_string()),
        elapsed.as_secs_f64()
    );
    ensure(f1 >= 0.95 && elapsed < Duration::from_secs(300), summary.clone())?;
    Ok(summary)
}

fn ablation_matrix() -> Check {
    let mut cfg = RunConfig::new("nano", 20);
    cfg.batch_size = 2;
    cfg.val_every = 20;
    let pairs = synthetic_dataset(4, 64, 0);
    let rows = run_ablation(&cfg, &pairs, &pairs).map_err(|e| e.to_string())?;
    let flags: Vec<(bool, bool)> = rows.iter().map(|r| (r.changefpn, r.decoder)).collect();
    ensure(flags == ABLATION_ROWS, format!("rows {flags:?}"))?;
    let table = ablation_table(&rows);
    let lines: Vec<&str> = table.lines().collect();
    ensure(
        lines.len() == 5 && lines[0] == "Model\tChangeFPN\tDecoder\tParams\tIoU",
        table.clone(),
    )?;
    let marks: Vec<String> = lines[1..]
        .iter()
        .map(|l| l.split('\t').skip(1).take(2).collect::<Vec<_>>().join(""))
        .collect();
    ensure(marks == ["××", "√×", "×√", "√√"], format!("marks {marks:?}"))?;
    Ok(format!("4 rows ({})", marks.join(" ")))
}

fn main() {
    let checks: [Criterion; 10] = [
        ("gradient suite", gradient_suite),
        ("B5 stage geometry", table_one),
        ("ChangeFPN properties", changefpn_properties),
        ("distance gate", distance_gate),
        ("loss arithmetic", loss_arithmetic),
        ("metric oracle", metric_oracle),
        ("tiling arithmetic", tiling_arithmetic),
        ("round-trips", round_trips),
        ("synthetic overfit", synthetic_overfit),
        ("ablation matrix", ablation_matrix),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let t = Instant::now();
        let result = check();
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("PASS  {name:<22} {msg} [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name:<22} {msg} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
