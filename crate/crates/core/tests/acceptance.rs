//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report reads top to bottom; the
//! process exits non-zero if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use clickseg_core::augment::{
    augment_sample, exclusion_cp, image_mixing, simple_cp, union_cp, CopyPasteInfo, StandardAugConfig, SuemConfig,
    SuemMode,
};
use clickseg_core::bench::{evaluate_dataset, EvalConfig};
use clickseg_core::cfr::DEFAULT_PIXEL_THRESHOLD;
use clickseg_core::dataset::{synthetic_dataset, AnnotatedSample};
use clickseg_core::segmenter::{ConstantSegmenter, OracleSegmenter, ScriptedMock, SegmenterError};
use clickseg_core::simulator::{next_eval_click, next_training_click};
use clickseg_core::train::{
    conventional_loss, frozen_icl_loss, icl_gradient, icl_total_loss, nfl_loss_and_grad, rollout, rollout_icl_loss,
    train, IclConfig,
};
use clickseg_core::{
    assemble_model_input, encode_click_maps, BinaryMask, CfrConfig, Click, ClickLabel, ClickSequence, ProbabilityMap,
    RasterImage, SegmentationSession, Segmenter, ToyModel, ToyModelParams,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_map(r: &mut ChaCha8Rng, w: usize, h: usize) -> ProbabilityMap {
    ProbabilityMap::new(w, h, (0..w * h).map(|_| r.gen::<f64>()).collect()).unwrap()
}

fn random_image(r: &mut ChaCha8Rng, w: usize, h: usize) -> RasterImage {
    RasterImage::from_fn(w, h, |_, _| [r.gen(), r.gen(), r.gen()]).unwrap()
}

fn random_mask(r: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| r.gen_bool(density))
}

fn distinct_clicks(r: &mut ChaCha8Rng, w: usize, h: usize, k: usize) -> Vec<Click> {
    let mut seq = ClickSequence::new();
    while seq.len() < k {
        let label = if r.gen_bool(0.5) {
            ClickLabel::Positive
        } else {
            ClickLabel::Negative
        };
        let _ = seq.push(Click::new(r.gen_range(0..w), r.gen_range(0..h), label));
    }
    seq.as_slice().to_vec()
}

// ---------------------------------------------------------------------------
// refinement engine

fn cfr_structure() -> Outcome {
    let (w, h) = (16, 12);
    let mut r = rng(1);
    let image = random_image(&mut r, w, h);
    let clicks = distinct_clicks(&mut r, w, h, 3);
    for n in [0usize, 1, 2, 4] {
        let script: Vec<ProbabilityMap> = (0..clicks.len() * (1 + n)).map(|_| random_map(&mut r, w, h)).collect();
        let mut mock = ScriptedMock::new(script.clone());
        let mut session = SegmentationSession::new(image.clone());
        for &c in &clicks {
            let steps = session
                .interact(&mut mock, c, &CfrConfig::Fixed { n })
                .map_err(|e| e.to_string())?;
            ensure!(steps == n, "CFR-{n}: {steps} inner steps");
        }
        let log = mock.calls();
        ensure!(
            log.len() == clicks.len() * (1 + n),
            "CFR-{n}: {} calls for {} clicks",
            log.len(),
            clicks.len()
        );
        for (k, block) in log.chunks(1 + n).enumerate() {
            let outer = &clicks[..=k];
            for (j, call) in block.iter().enumerate() {
                ensure!(
                    call.clicks.as_slice() == outer,
                    "CFR-{n}: call {j} of click {k} saw other clicks"
                );
                let idx = k * (1 + n) + j;
                let expected_prev = if idx == 0 {
                    ProbabilityMap::zeros(w, h)
                } else {
                    script[idx - 1].clone()
                };
                ensure!(
                    call.previous_mask == expected_prev,
                    "CFR-{n}: call {j} of click {k} got the wrong mask"
                );
            }
        }
        ensure!(session.current_mask() == script.last().unwrap(), "CFR-{n}: final mask");
    }
    Ok("CFR-0/1/2/4: 1+n calls per click, shared clicks, chained masks".into())
}

fn acfr_stopping() -> Outcome {
    let (w, h) = (20, 20);
    ensure!(
        DEFAULT_PIXEL_THRESHOLD == 20,
        "default threshold is {DEFAULT_PIXEL_THRESHOLD}"
    );
    let cfg: CfrConfig = "adaptive:8".parse().map_err(|e: clickseg_core::Error| e.to_string())?;
    ensure!(cfg == CfrConfig::Adaptive { n: 8, threshold: 20 }, "parsed {cfg:?}");
    // coarse output, then outputs whose binarized deltas are 100, 30, 15, 10, 5, ...
    let prefix =
        |k: usize| ProbabilityMap::new(w, h, (0..w * h).map(|i| if i < k { 0.9 } else { 0.1 }).collect()).unwrap();
    let mut filled = 0;
    let mut script = vec![prefix(0)];
    for d in [100, 30, 15, 10, 5, 5, 5, 5] {
        filled += d;
        script.push(prefix(filled));
    }
    let mut mock = ScriptedMock::new(script);
    let mut session = SegmentationSession::new(RasterImage::filled(w, h, [0; 3]).unwrap());
    let steps = session
        .interact(&mut mock, Click::positive(3, 3), &cfg)
        .map_err(|e| e.to_string())?;
    ensure!(steps == 3, "{steps} inner steps");
    ensure!(mock.calls().len() == 4, "{} segmenter calls", mock.calls().len());
    ensure!(
        session.current_mask() == &prefix(145),
        "final mask is not the third refinement"
    );
    Ok("deltas [100, 30, 15, ...] at threshold 20 stop after 3 inner steps".into())
}

// ---------------------------------------------------------------------------
// training losses and gradients

fn icl_algebra() -> Outcome {
    let total = icl_total_loss(&[0.5, 0.4, 0.3], &[1.0, 2.0, 3.0]).map_err(|e| e.to_string())?;
    ensure!(total == 2.2, "total {total:?}");
    let data = synthetic_dataset(6, 24, 5);
    let cfg = IclConfig {
        t: 1,
        betas: vec![1.0],
        radius: 3,
        ..IclConfig::default()
    };
    for (i, s) in data.iter().enumerate() {
        let mut model = ToyModel::new(ToyModelParams::click_prior());
        let ro = rollout(&mut model, &s.image, s.gt(), &mut rng(i as u64), &cfg).map_err(|e| e.to_string())?;
        let icl = rollout_icl_loss(&ro, &cfg).map_err(|e| e.to_string())?;
        let conventional = conventional_loss(&ro);
        ensure!(
            icl.to_bits() == conventional.to_bits(),
            "sample {i}: {icl} vs {conventional}"
        );
    }
    Ok(format!(
        "weighted sum = {total}; t=1, beta=[1] bit-equal to final-output loss on 6 rollouts"
    ))
}

/// Max absolute deviation over the largest numeric component.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let dev = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(0.0, f64::max).max(1e-8);
    dev / scale
}

fn random_params(r: &mut ChaCha8Rng) -> ToyModelParams {
    let mut w = [0.0; 8];
    for x in &mut w {
        *x = r.gen_range(-1.5..1.5);
    }
    ToyModelParams::new(w)
}

fn gradient_correctness() -> Outcome {
    let h = 1e-4;
    let (mut worst_fwd, mut worst_icl) = (0.0f64, 0.0f64);
    let cfg = IclConfig {
        radius: 2,
        sigma: 4.0,
        ..IclConfig::default()
    };
    for case in 0..120u64 {
        let mut r = rng(1000 + case);
        let image = random_image(&mut r, 8, 8);
        let params = random_params(&mut r);

        // per-pixel model gradient against a random upstream signal
        let k = r.gen_range(0..5);
        let clicks = ClickSequence::from_clicks(distinct_clicks(&mut r, 8, 8, k)).unwrap();
        let input = assemble_model_input(&image, &clicks, &random_map(&mut r, 8, 8), 2).unwrap();
        let upstream: Vec<f64> = (0..64).map(|_| r.gen_range(-1.0..1.0)).collect();
        let model = ToyModel::with_sigma(params, 4.0);
        let (_, cache) = model.forward(&input);
        let analytic = ToyModel::backward(&cache, &upstream);
        let scalar = |w: [f64; 8]| -> f64 {
            let (p, _) = ToyModel::with_sigma(ToyModelParams::new(w), 4.0).forward(&input);
            p.values().iter().zip(&upstream).map(|(p, g)| p * g).sum()
        };
        let numeric: Vec<f64> = (0..8)
            .map(|j| {
                let (mut a, mut b) = (params.weights, params.weights);
                a[j] += h;
                b[j] -= h;
                (scalar(a) - scalar(b)) / (2.0 * h)
            })
            .collect();
        worst_fwd = worst_fwd.max(relative_error(&analytic, &numeric));

        // full iterative loss on a frozen rollout
        let gt = loop {
            let m = random_mask(&mut r, 8, 8, 0.4);
            if !m.is_empty() {
                break m;
            }
        };
        let mut seg = model;
        let ro = rollout(&mut seg, &image, &gt, &mut r, &cfg).map_err(|e| e.to_string())?;
        let analytic = icl_gradient(&model, &ro, &cfg).map_err(|e| e.to_string())?;
        let zs: Vec<f64> = ro.steps.iter().map(|s| s.normalizer).collect();
        let loss = |w: [f64; 8]| {
            frozen_icl_loss(&ToyModel::with_sigma(ToyModelParams::new(w), 4.0), &ro, &cfg, Some(&zs)).unwrap()
        };
        let numeric: Vec<f64> = (0..8)
            .map(|j| {
                let (mut a, mut b) = (params.weights, params.weights);
                a[j] += h;
                b[j] -= h;
                (loss(a) - loss(b)) / (2.0 * h)
            })
            .collect();
        worst_icl = worst_icl.max(relative_error(&analytic, &numeric));
    }
    ensure!(
        worst_fwd < 1e-4,
        "model gradient relative error {worst_fwd:.2e} >= 1e-4"
    );
    ensure!(
        worst_icl < 1e-3,
        "iterative loss gradient relative error {worst_icl:.2e} >= 1e-3"
    );
    Ok(format!(
        "120 instances at 8x8: model {worst_fwd:.1e} < 1e-4, loss {worst_icl:.1e} < 1e-3"
    ))
}

fn nfl_values() -> Outcome {
    for &alpha in &[0.5, 0.3] {
        for &p in &[0.05, 0.5, 0.8] {
            for gamma in [0.0, 1.0, 2.0, 5.0] {
                let out = nfl_loss_and_grad(
                    &ProbabilityMap::new(1, 1, vec![p]).unwrap(),
                    &BinaryMask::full(1, 1),
                    alpha,
                    gamma,
                )
                .map_err(|e| e.to_string())?;
                let expected = alpha * -p.ln();
                ensure!(
                    (out.loss - expected).abs() < 1e-12,
                    "alpha {alpha} p {p} gamma {gamma}: {}",
                    out.loss
                );
            }
        }
    }
    let two = nfl_loss_and_grad(
        &ProbabilityMap::new(2, 1, vec![0.5, 1.0]).unwrap(),
        &BinaryMask::full(2, 1),
        0.5,
        2.0,
    )
    .map_err(|e| e.to_string())?;
    let expected = 0.5 * std::f64::consts::LN_2;
    ensure!((two.loss - expected).abs() <= 1e-12, "two-pixel loss {}", two.loss);
    Ok(format!(
        "single pixel = alpha*(-ln p) for gamma in {{0,1,2,5}}; two-pixel = {:.6}",
        two.loss
    ))
}

// ---------------------------------------------------------------------------
// click simulator

/// 8-connected components by flood fill, in (area desc, FN first, anchor)
/// order, each as a raster-ordered pixel list.
fn oracle_components(m: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = m.dims();
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    for v in 0..h {
        for u in 0..w {
            if !m.get(u, v) || seen[v * w + u] {
                continue;
            }
            let mut pixels = Vec::new();
            let mut queue = VecDeque::from([(u, v)]);
            seen[v * w + u] = true;
            while let Some((x, y)) = queue.pop_front() {
                pixels.push((x, y));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if m.get(nx, ny) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            pixels.sort_by_key(|&(x, y)| (y, x));
            comps.push(pixels);
        }
    }
    comps
}

fn oracle_eval_click(gt: &BinaryMask, pred: &BinaryMask, existing: &ClickSequence) -> Option<Click> {
    let (w, h) = gt.dims();
    let fn_mask = BinaryMask::from_fn(w, h, |u, v| gt.get(u, v) && !pred.get(u, v));
    let fp_mask = BinaryMask::from_fn(w, h, |u, v| pred.get(u, v) && !gt.get(u, v));
    let mut comps: Vec<(Vec<(usize, usize)>, bool)> = oracle_components(&fn_mask)
        .into_iter()
        .map(|c| (c, true))
        .chain(oracle_components(&fp_mask).into_iter().map(|c| (c, false)))
        .collect();
    comps.sort_by_key(|(c, positive)| (std::cmp::Reverse(c.len()), !positive, c[0].1, c[0].0));
    for (comp, positive) in comps {
        let mut best: Option<(f64, (usize, usize))> = None;
        for &(u, v) in &comp {
            if existing.contains_position(u, v) {
                continue;
            }
            // nearest non-component position, the ring outside the image included
            let mut d2 = i64::MAX;
            for y in -1..=h as i64 {
                for x in -1..=w as i64 {
                    let inside = x >= 0 && y >= 0 && x < w as i64 && y < h as i64;
                    if inside && comp.contains(&(x as usize, y as usize)) {
                        continue;
                    }
                    d2 = d2.min((x - u as i64).pow(2) + (y - v as i64).pow(2));
                }
            }
            let d = (d2 as f64).sqrt();
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, (u, v)));
            }
        }
        if let Some((_, (u, v))) = best {
            let label = if positive {
                ClickLabel::Positive
            } else {
                ClickLabel::Negative
            };
            return Some(Click::new(u, v, label));
        }
    }
    None
}

fn simulator_oracle() -> Outcome {
    let mut r = rng(77);
    let mut training_checked = 0;
    for case in 0..500 {
        let (w, h) = (r.gen_range(1..=12), r.gen_range(1..=12));
        let (dg, dp) = (r.gen_range(0.1..0.9), r.gen_range(0.1..0.9));
        let gt = random_mask(&mut r, w, h, dg);
        let pred = random_mask(&mut r, w, h, dp);
        let k = r.gen_range(0..4).min(w * h);
        let existing = ClickSequence::from_clicks(distinct_clicks(&mut r, w, h, k)).unwrap();
        let got = next_eval_click(&gt, &pred, &existing).map_err(|e| e.to_string())?;
        let want = oracle_eval_click(&gt, &pred, &existing);
        ensure!(got == want, "case {case} ({w}x{h}): got {got:?}, oracle {want:?}");

        for _ in 0..4 {
            if let Some(c) = next_training_click(&gt, &pred, &existing, &mut r).map_err(|e| e.to_string())? {
                let wrong = gt.get(c.u, c.v) != pred.get(c.u, c.v);
                ensure!(wrong, "case {case}: training click {c:?} on a correct pixel");
                ensure!(c.label.is_positive() == gt.get(c.u, c.v), "case {case}: label of {c:?}");
                ensure!(!existing.contains_position(c.u, c.v), "case {case}: duplicate {c:?}");
                training_checked += 1;
            }
        }
    }
    Ok(format!(
        "500 random masks up to 12x12 match the oracle; {training_checked} training clicks on errors"
    ))
}

// ---------------------------------------------------------------------------
// click encoding

fn disk_encoding() -> Outcome {
    let ones = |m: &ProbabilityMap| m.values().iter().filter(|&&x| x == 1.0).count();
    let lattice = |cu: i64, cv: i64, w: i64, h: i64| {
        let mut n = 0;
        for y in 0..h {
            for x in 0..w {
                n += ((x - cu).pow(2) + (y - cv).pow(2) <= 25) as usize;
            }
        }
        n
    };
    let centre = ClickSequence::from_clicks([Click::positive(5, 5)]).unwrap();
    let maps = encode_click_maps(&centre, 11, 11, 5).map_err(|e| e.to_string())?;
    ensure!(
        ones(&maps.positive) == 81 && lattice(5, 5, 11, 11) == 81,
        "interior disk {}",
        ones(&maps.positive)
    );
    ensure!(ones(&maps.negative) == 0, "negative map not empty");
    let corner = ClickSequence::from_clicks([Click::positive(0, 0)]).unwrap();
    let maps = encode_click_maps(&corner, 11, 11, 5).map_err(|e| e.to_string())?;
    ensure!(
        ones(&maps.positive) == 26 && lattice(0, 0, 11, 11) == 26,
        "corner disk {}",
        ones(&maps.positive)
    );

    let mut r = rng(9);
    let base = distinct_clicks(&mut r, 24, 20, 10);
    let reference = encode_click_maps(&ClickSequence::from_clicks(base.clone()).unwrap(), 24, 20, 5).unwrap();
    for i in 0..1000 {
        let mut shuffled = base.clone();
        shuffled.shuffle(&mut r);
        let maps = encode_click_maps(&ClickSequence::from_clicks(shuffled).unwrap(), 24, 20, 5).unwrap();
        ensure!(maps == reference, "shuffle {i} changed the encoding");
    }
    Ok("interior 81, corner 26, 1000 shuffles invariant".into())
}

// ---------------------------------------------------------------------------
// copy-paste augmentation

fn random_sample(r: &mut ChaCha8Rng, id: &str) -> AnnotatedSample {
    let (w, h) = (r.gen_range(4..=32), r.gen_range(4..=32));
    let image = random_image(r, w, h);
    let gt = loop {
        let (x0, y0) = (r.gen_range(0..w), r.gen_range(0..h));
        let (x1, y1) = (r.gen_range(x0..w) + 1, r.gen_range(y0..h) + 1);
        let holes = r.gen_bool(0.5);
        let m = BinaryMask::from_fn(w, h, |u, v| {
            (x0..x1).contains(&u) && (y0..y1).contains(&v) && !(holes && (u * 7 + v * 3) % 5 == 0)
        });
        if !m.is_empty() {
            break m;
        }
    };
    AnnotatedSample::single(id, image, gt).unwrap()
}

/// Target-driven paste: every target pixel looks up the patch cell above
/// it and, through nearest-neighbour sampling, the object pixel behind it.
fn oracle_paste(object: &AnnotatedSample, target: &RasterImage, info: &CopyPasteInfo) -> (RasterImage, BinaryMask) {
    let rec = info.paste.as_ref().expect("placement recorded");
    let m = object.gt();
    let (w, h) = m.dims();
    let (mut u0, mut v0, mut u1, mut v1) = (usize::MAX, usize::MAX, 0, 0);
    for v in 0..h {
        for u in 0..w {
            if m.get(u, v) {
                (u0, v0, u1, v1) = (u0.min(u), v0.min(v), u1.max(u + 1), v1.max(v + 1));
            }
        }
    }
    let (bw, bh) = (u1 - u0, v1 - v0);
    let (pw, ph) = rec.patch_size;
    ensure_patch_size(bw, bh, rec.scale, pw, ph);
    let (tw, th) = target.dims();
    let mut image = target.clone();
    let mut footprint = BinaryMask::empty(tw, th);
    for ty in 0..th {
        for tx in 0..tw {
            let (x, y) = (tx as i64 - rec.offset.0, ty as i64 - rec.offset.1);
            if x < 0 || y < 0 || x >= pw as i64 || y >= ph as i64 {
                continue;
            }
            let su = u0 + (((x as f64 + 0.5) * bw as f64 / pw as f64) as usize).min(bw - 1);
            let sv = v0 + (((y as f64 + 0.5) * bh as f64 / ph as f64) as usize).min(bh - 1);
            if m.get(su, sv) {
                image.set(tx, ty, object.image.get(su, sv));
                footprint.set(tx, ty, true);
            }
        }
    }
    (image, footprint)
}

fn ensure_patch_size(bw: usize, bh: usize, scale: f64, pw: usize, ph: usize) {
    assert_eq!(pw, ((bw as f64 * scale).round() as usize).max(1));
    assert_eq!(ph, ((bh as f64 * scale).round() as usize).max(1));
}

fn set_op(a: &BinaryMask, b: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> BinaryMask {
    let (w, h) = a.dims();
    BinaryMask::from_fn(w, h, |u, v| f(a.get(u, v), b.get(u, v)))
}

fn suem_set_algebra() -> Outcome {
    let mut r = rng(2024);
    let cfg = SuemConfig::default();
    let mut fallbacks = 0;
    for pair in 0..200 {
        let src = random_sample(&mut r, "src");
        let mut extra = random_sample(&mut r, "extra");
        if pair % 4 == 0 {
            // a solid extra that tends to swallow the source object
            let (w, h) = extra.image.dims();
            extra = AnnotatedSample::single("extra", extra.image, BinaryMask::full(w, h)).unwrap();
        }
        let seed = r.gen::<u64>();

        let (out, info) = simple_cp(&src, &extra, &mut rng(seed), &cfg);
        if info.fell_back {
            ensure!(out == src, "pair {pair}: simple fallback changed the source");
        } else {
            let (img, gt) = oracle_paste(&src, &extra.image, &info);
            ensure!(
                out.image == img && out.gt() == &gt,
                "pair {pair}: simple paste differs from oracle"
            );
        }

        let (out, info) = union_cp(&src, &extra, &mut rng(seed), &cfg);
        if info.paste.is_some() {
            let (img, fp) = oracle_paste(&extra, &src.image, &info);
            let gt = set_op(src.gt(), &fp, |a, b| a || b);
            ensure!(
                out.image == img && out.gt() == &gt,
                "pair {pair}: union differs from oracle"
            );
        } else {
            ensure!(
                out.gt() == src.gt() && out.image == src.image,
                "pair {pair}: clipped union changed the source"
            );
        }

        let (out, info) = exclusion_cp(&src, &extra, &mut rng(seed), &cfg);
        if info.fell_back {
            fallbacks += 1;
            ensure!(
                info.applied == SuemMode::Simple,
                "pair {pair}: fallback mode {:?}",
                info.applied
            );
            if info.paste.is_some() {
                let (img, gt) = oracle_paste(&src, &extra.image, &info);
                ensure!(
                    out.image == img && out.gt() == &gt,
                    "pair {pair}: exclusion fallback differs from oracle"
                );
            }
        } else {
            let (img, fp) = oracle_paste(&extra, &src.image, &info);
            let gt = set_op(src.gt(), &fp, |a, b| a && !b);
            ensure!(
                out.image == img && out.gt() == &gt,
                "pair {pair}: exclusion differs from oracle"
            );
            let kept = gt.count() as f64;
            ensure!(
                kept >= 0.2 * src.gt().count() as f64,
                "pair {pair}: residual below floor"
            );
        }

        let alpha = r.gen_range(0.0..=1.0);
        let mix_cfg = SuemConfig {
            mixing_alpha: alpha,
            ..cfg.clone()
        };
        let (out, _) = image_mixing(&src, &extra, &mix_cfg);
        ensure!(
            out.instances == src.instances,
            "pair {pair}: mixing altered the ground truth"
        );
        let (w, h) = src.image.dims();
        let (ew, eh) = extra.image.dims();
        for v in 0..h {
            for u in 0..w {
                let e = extra.image.get(
                    (((u as f64 + 0.5) * ew as f64 / w as f64) as usize).min(ew - 1),
                    (((v as f64 + 0.5) * eh as f64 / h as f64) as usize).min(eh - 1),
                );
                let s = src.image.get(u, v);
                let want: [u8; 3] =
                    std::array::from_fn(|c| (alpha * s[c] as f64 + (1.0 - alpha) * e[c] as f64).round() as u8);
                ensure!(out.image.get(u, v) == want, "pair {pair}: mixed pixel ({u},{v})");
            }
        }
    }

    // mode frequencies
    let pool = synthetic_dataset(4, 32, 8);
    let freq_cfg = SuemConfig {
        standard: StandardAugConfig {
            output_size: 32,
            ..StandardAugConfig::default()
        },
        ..SuemConfig::default()
    };
    let draws = 10_000;
    let mut counts = [0usize; 4];
    let mut fr = rng(31337);
    for i in 0..draws {
        let (_, prov) = augment_sample(&pool, i % pool.len(), &mut fr, &freq_cfg).map_err(|e| e.to_string())?;
        if let Some(m) = prov.mode {
            counts[SuemMode::ALL.iter().position(|x| *x == m).unwrap()] += 1;
        }
    }
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    for (mode, f) in SuemMode::ALL.iter().zip(&freqs) {
        ensure!((f - 0.125).abs() <= 0.02, "{mode:?} frequency {f:.4}");
    }
    ensure!(fallbacks > 0, "no pair exercised the exclusion fallback");
    Ok(format!(
        "200 pairs match oracles ({fallbacks} exclusion fallbacks); mode frequencies {:.3}/{:.3}/{:.3}/{:.3}",
        freqs[0], freqs[1], freqs[2], freqs[3]
    ))
}

// ---------------------------------------------------------------------------
// end-to-end training

struct Trained {
    untrained_noc90: f64,
    untrained_iou1: f64,
    trained_noc90: f64,
    trained_iou1: f64,
    cfr1_noc90: f64,
    train_secs: f64,
}

fn toy_factory(params: ToyModelParams) -> impl Fn() -> Result<Box<dyn Segmenter>, SegmenterError> + Sync {
    move || Ok(Box::new(ToyModel::new(params)))
}

fn holdout_eval(params: ToyModelParams, holdout: &[AnnotatedSample], cfr: CfrConfig) -> (f64, f64) {
    let cfg = EvalConfig {
        cfr,
        ..EvalConfig::default()
    };
    let report = evaluate_dataset(&toy_factory(params), holdout, &cfg, 1).expect("evaluation runs");
    (report.noc_at(0.9).unwrap(), report.mean_iou_at(1))
}

fn run_training() -> Result<Trained, String> {
    let all = synthetic_dataset(250, 64, 20240917);
    let (train_set, holdout) = all.split_at(200);
    let untrained = ToyModelParams::default();
    let (untrained_noc90, untrained_iou1) = holdout_eval(untrained, holdout, CfrConfig::STANDARD);
    let cfg = IclConfig {
        t: 3,
        betas: vec![1.0, 2.0, 3.0],
        epochs: 30,
        seed: 7,
        ..IclConfig::default()
    };
    let started = Instant::now();
    let out = train(untrained, train_set, &[], &cfg, None, |_| {}).map_err(|e| e.to_string())?;
    let train_secs = started.elapsed().as_secs_f64();
    let (trained_noc90, trained_iou1) = holdout_eval(out.params, holdout, CfrConfig::STANDARD);
    let (cfr1_noc90, _) = holdout_eval(out.params, holdout, CfrConfig::Fixed { n: 1 });
    Ok(Trained {
        untrained_noc90,
        untrained_iou1,
        trained_noc90,
        trained_iou1,
        cfr1_noc90,
        train_secs,
    })
}

fn training_efficacy(t: &Trained) -> Outcome {
    ensure!(
        t.trained_noc90 < t.untrained_noc90,
        "NoC@90 {:.2} not below untrained {:.2}",
        t.trained_noc90,
        t.untrained_noc90
    );
    ensure!(
        t.trained_iou1 - t.untrained_iou1 >= 0.05,
        "IoU@1 {:.3} vs untrained {:.3}",
        t.trained_iou1,
        t.untrained_iou1
    );
    Ok(format!(
        "NoC@90 {:.2} -> {:.2}, IoU@1 {:.3} -> {:.3}, training {:.0} s",
        t.untrained_noc90, t.trained_noc90, t.untrained_iou1, t.trained_iou1, t.train_secs
    ))
}

fn cfr_non_degradation(t: &Trained) -> Outcome {
    ensure!(
        t.cfr1_noc90 <= t.trained_noc90 + 0.25,
        "CFR-1 NoC@90 {:.2} > StdInfer {:.2} + 0.25",
        t.cfr1_noc90,
        t.trained_noc90
    );
    Ok(format!(
        "CFR-1 NoC@90 {:.2} <= StdInfer {:.2} + 0.25",
        t.cfr1_noc90, t.trained_noc90
    ))
}

// ---------------------------------------------------------------------------
// benchmark harness and determinism

fn noc_harness() -> Outcome {
    let data = synthetic_dataset(12, 32, 3);
    let cfg = EvalConfig {
        radius: 3,
        ..EvalConfig::default()
    };
    let oracle = || -> Result<Box<dyn Segmenter>, SegmenterError> { Ok(Box::new(OracleSegmenter::new())) };
    let report = evaluate_dataset(&oracle, &data, &cfg, 3).map_err(|e| e.to_string())?;
    ensure!(
        report.mean_noc == vec![1.0, 1.0],
        "oracle mean NoC {:?}",
        report.mean_noc
    );
    ensure!(
        report.instances.iter().all(|r| r.noc == vec![1, 1]),
        "oracle instance above 1 click"
    );

    let empty = || -> Result<Box<dyn Segmenter>, SegmenterError> { Ok(Box::new(ConstantSegmenter(0.0))) };
    let report = evaluate_dataset(&empty, &data, &cfg, 3).map_err(|e| e.to_string())?;
    ensure!(
        report.mean_noc == vec![20.0, 20.0],
        "empty mean NoC {:?}",
        report.mean_noc
    );
    ensure!(
        report
            .instances
            .iter()
            .all(|r| r.noc == vec![20, 20] && r.reached == vec![false, false]),
        "empty segmenter reached a threshold"
    );

    let prior = toy_factory(ToyModelParams::click_prior());
    let a = evaluate_dataset(&prior, &data, &cfg, 1).map_err(|e| e.to_string())?;
    let b = evaluate_dataset(&prior, &data, &cfg, 8).map_err(|e| e.to_string())?;
    ensure!(a.without_timings() == b.without_timings(), "jobs 1 and 8 disagree");
    Ok(format!(
        "oracle 1.00, empty 20.00 unreached, jobs 1 == 8 (NoC@90 {:.2})",
        a.mean_noc[0]
    ))
}

fn determinism() -> Outcome {
    let data = synthetic_dataset(16, 24, 11);
    let cfg = IclConfig {
        epochs: 3,
        batch_size: 4,
        radius: 3,
        seed: 99,
        ..IclConfig::default()
    };
    let aug = SuemConfig {
        standard: StandardAugConfig {
            output_size: 24,
            ..StandardAugConfig::default()
        },
        ..SuemConfig::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(ToyModelParams::default(), &data, &[], &cfg, Some(&aug), |_| {}))
            .map(|o| (o.params, o.metrics))
            .map_err(|e| e.to_string())
    };
    let one = run(1)?;
    ensure!(one == run(1)?, "training not reproducible");
    ensure!(one == run(4)?, "training depends on the thread count");
    let bits: Vec<u64> = one.0.weights.iter().map(|w| w.to_bits()).collect();
    ensure!(one.0 != ToyModelParams::default(), "training did not move the weights");

    let eval_cfg = EvalConfig {
        radius: 3,
        cfr: CfrConfig::Adaptive { n: 3, threshold: 5 },
        ..EvalConfig::default()
    };
    let f = toy_factory(one.0);
    let a = evaluate_dataset(&f, &data, &eval_cfg, 1).map_err(|e| e.to_string())?;
    let b = evaluate_dataset(&f, &data, &eval_cfg, 4).map_err(|e| e.to_string())?;
    ensure!(a.without_timings() == b.without_timings(), "evaluation depends on jobs");

    let augment_all = || {
        let mut r = rng(5);
        (0..data.len())
            .map(|i| augment_sample(&data, i, &mut r, &aug).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()
    };
    ensure!(augment_all()? == augment_all()?, "augmentation not reproducible");
    Ok(format!(
        "train (1 vs 4 threads), eval (jobs 1 vs 4), augment bit-identical; w0 bits {:016x}",
        bits[0]
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(&mut *f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if elapsed > l => Err(format!(
                "took {:.2} s, limit {:.0} s",
                elapsed.as_secs_f64(),
                l.as_secs_f64()
            )),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name:<34} {detail} [{:.2} s]", elapsed.as_secs_f64()),
            Err(why) => {
                failures += 1;
                println!("FAIL  {name:<34} {why} [{:.2} s]", elapsed.as_secs_f64());
            }
        }
    };

    let secs = Duration::from_secs;
    report("cfr-structure", Some(secs(1)), &mut cfr_structure);
    report("acfr-stopping", Some(secs(1)), &mut acfr_stopping);
    report("icl-algebra", None, &mut icl_algebra);
    report("gradient-correctness", Some(secs(30)), &mut gradient_correctness);
    report("nfl-values", None, &mut nfl_values);
    report("click-simulator-oracle", Some(secs(30)), &mut simulator_oracle);
    report("disk-encoding", None, &mut disk_encoding);
    report("suem-set-algebra", None, &mut suem_set_algebra);

    let started = Instant::now();
    let trained = catch_unwind(run_training)
        .map_err(|_| "training panicked".to_string())
        .and_then(|r| r);
    let train_time = started.elapsed();
    let with_trained = |f: fn(&Trained) -> Outcome| match &trained {
        Ok(t) => f(t),
        Err(e) => Err(e.clone()),
    };
    report("training-efficacy", Some(secs(600)), &mut || {
        let out = with_trained(training_efficacy);
        if train_time > secs(600) {
            return Err(format!("training run took {:.0} s", train_time.as_secs_f64()));
        }
        out
    });
    report("cfr-non-degradation", None, &mut || with_trained(cfr_non_degradation));
    report("noc-harness-oracles", None, &mut noc_harness);
    report("determinism", None, &mut determinism);

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
