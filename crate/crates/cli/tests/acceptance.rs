//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use kfr::fusion::extractor::TEST_CHANNELS;
use kfr::fusion::{adain, spectral_normalize, FeatureMap, Matrix};
use kfr::geometry::{landmark_distance, mls_deform_point, LandmarkSet, Point2};
use kfr::keyframe_store::{CountSnapshot, KeyframeStore, Policy};
use kfr::losses::{hinge_d_loss, hinge_g_loss, hinge_single_scale, mse_loss, total_loss};
use kfr::metrics::gaussian_window;
use kfr::pipeline::{load_manifest, run_with, simulate_policy, Pipeline, PipelineConfig};
use kfr::synth::{random_landmark_stream, write_landmark_stream, write_stream, StreamSpec};
use kfr::{psnr, ssim, FusionNet, ImageBuffer, LossParts, LossWeights, WeightStore};
use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MLS_REL_TOL: f64 = 1e-6;
const MLS_BUDGET: Duration = Duration::from_secs(10);
const POLICY_BUDGET: Duration = Duration::from_secs(30);
const ADAIN_TOL: f64 = 1e-5;
const SIGMA_RANGE: (f64, f64) = (0.999, 1.001);
const PSNR_TOL: f64 = 1e-9;
const GRAD_REL_TOL: f64 = 1e-5;
const LOSS_TOL: f64 = 1e-9;
const SSIM_TOL: f64 = 1e-6;
const SIMULATION_BUDGET: Duration = Duration::from_secs(5);
const SELECT_BUDGET: Duration = Duration::from_millis(1);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// MLS

fn mls_oracle(v: Point2, p: &[Point2], q: &[Point2]) -> Point2 {
    let mut ata = Matrix3::<f64>::zeros();
    let (mut bx, mut by) = (Vector3::<f64>::zeros(), Vector3::<f64>::zeros());
    for (pi, qi) in p.iter().zip(q) {
        let w = 1.0 / ((pi.x - v.x).powi(2) + (pi.y - v.y).powi(2));
        let a = Vector3::new(pi.x, pi.y, 1.0);
        ata += w * a * a.transpose();
        bx += w * qi.x * a;
        by += w * qi.y * a;
    }
    let lu = ata.lu();
    let h = Vector3::new(v.x, v.y, 1.0);
    Point2::new(lu.solve(&bx).unwrap().dot(&h), lu.solve(&by).unwrap().dot(&h))
}

fn rel(a: Point2, b: Point2) -> f64 {
    (a - b).norm() / b.norm()
}

fn mls_criterion() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    for config in 0..100 {
        let n = [4, 10, 68][config % 3];
        let p: Vec<Point2> = (0..n).map(|_| Point2::new(rng.random_range(50.0..150.0), rng.random_range(50.0..150.0))).collect();
        let q: Vec<Point2> =
            p.iter().map(|&x| x + Point2::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0))).collect();
        let (a, b, c, d) = (rng.random_range(0.5..1.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.5..1.5));
        let t = Point2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let affine = |v: Point2| Point2::new(a * v.x + b * v.y, c * v.x + d * v.y) + t;
        let qa: Vec<Point2> = p.iter().map(|&x| affine(x)).collect();
        for _ in 0..20 {
            let v = Point2::new(rng.random_range(40.0..160.0), rng.random_range(40.0..160.0));
            let e = rel(ok(mls_deform_point(v, &p, &q))?, mls_oracle(v, &p, &q));
            worst = worst.max(e);
            ensure(e <= MLS_REL_TOL, || format!("config {config} (N={n}): relative error {e:e}"))?;
            let ea = rel(ok(mls_deform_point(v, &p, &qa))?, affine(v));
            ensure(ea <= MLS_REL_TOL, || format!("config {config}: affine map off by {ea:e}"))?;
            ensure(ok(mls_deform_point(v, &p, &p))? == v, || format!("config {config}: identity moved {v:?}"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < MLS_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("2000 queries, worst relative error {worst:.2e}, {elapsed:.2?}"))
}

// Keyframe policy

fn shifted(d: f64) -> LandmarkSet {
    LandmarkSet::canonical_template(512).map(|p| p + Point2::new(d, d)).unwrap()
}

fn hand_trace() -> Result<(), String> {
    let (k1, k2, k3) = (shifted(0.0), shifted(40.0), shifted(80.0));
    let mut s = KeyframeStore::new(Policy::LfuDecay, 2).map_err(|e| e.to_string())?;
    let mut states = Vec::new();
    s.insert((), k1.clone(), 0);
    states.push(s.snapshot());
    for f in 1..=3 {
        ok(s.select(&k1, f))?;
        states.push(s.snapshot());
    }
    s.insert((), k2.clone(), 4);
    states.push(s.snapshot());
    for f in 5..=6 {
        ok(s.select(&k2, f))?;
        states.push(s.snapshot());
    }
    let r = s.insert((), k3, 7);
    states.push(s.snapshot());
    let c = CountSnapshot;
    let expected = vec![
        vec![c(0, 0.0)],
        vec![c(0, 1.0)],
        vec![c(0, 2.0)],
        vec![c(0, 3.0)],
        vec![c(0, 1.5), c(1, 0.0)],
        vec![c(0, 1.5), c(1, 1.0)],
        vec![c(0, 1.5), c(1, 2.0)],
        vec![c(1, 1.0), c(2, 0.0)],
    ];
    ensure(states == expected, || format!("state sequence {states:?}"))?;
    ensure(r.evicted == Some(0), || format!("evicted {:?}", r.evicted))
}

fn random_set(rng: &mut ChaCha8Rng) -> LandmarkSet {
    let spread = rng.random_range(1.0..50.0);
    LandmarkSet::new((0..68).map(|_| Point2::new(rng.random_range(0.0..spread), rng.random_range(0.0..spread))).collect())
        .unwrap()
}

fn cardinality_bound() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for policy in [Policy::LfuDecay, Policy::MaxDistance] {
        let k = rng.random_range(1..=10);
        let mut s = KeyframeStore::new(policy, k).map_err(|e| e.to_string())?;
        for f in 0..10_000u64 {
            let set = random_set(&mut rng);
            if rng.random_bool(0.3) {
                s.insert((), set, f);
            } else if !s.is_empty() {
                ok(s.select(&set, f))?;
            }
            ensure(s.len() <= k, || format!("{policy}: {} entries with capacity {k} at op {f}", s.len()))?;
        }
    }
    Ok(())
}

fn total_pairwise(sets: &[&LandmarkSet]) -> f64 {
    let mut t = 0.0;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            t += landmark_distance(sets[i].points(), sets[j].points()).unwrap();
        }
    }
    t
}

fn exhaustive_max_distance() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut events = 0;
    for stream in 0..200 {
        let k = 1 + stream % 5;
        let mut s = KeyframeStore::new(Policy::MaxDistance, k).map_err(|e| e.to_string())?;
        for f in 0..15u64 {
            let mut cands: Vec<LandmarkSet> = s.entries().iter().map(|e| e.landmarks.clone()).collect();
            let full = cands.len() == k;
            let newcomer = random_set(&mut rng);
            s.insert((), newcomer.clone(), f);
            if !full {
                continue;
            }
            cands.push(newcomer);
            let n = cands.len();
            let best = (0u32..1 << n)
                .filter(|m| m.count_ones() as usize == k)
                .map(|m| total_pairwise(&(0..n).filter(|i| m & (1 << i) != 0).map(|i| &cands[i]).collect::<Vec<_>>()))
                .fold(f64::NEG_INFINITY, f64::max);
            let got = total_pairwise(&s.entries().iter().map(|e| &e.landmarks).collect::<Vec<_>>());
            ensure((got - best).abs() <= 1e-9 * best.max(1.0), || format!("stream {stream} frame {f}: kept {got}, best {best}"))?;
            events += 1;
        }
    }
    Ok(events)
}

fn policy_criterion() -> Outcome {
    let start = Instant::now();
    hand_trace().map_err(|e| format!("hand trace: {e}"))?;
    cardinality_bound().map_err(|e| format!("cardinality: {e}"))?;
    let events = exhaustive_max_distance().map_err(|e| format!("max distance: {e}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < POLICY_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("hand trace exact, 20000 ops bounded, {events} eviction decisions optimal, {elapsed:.2?}"))
}

// AdaIN

fn adain_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let (c, h, w) = (rng.random_range(1..8), rng.random_range(2..12), rng.random_range(2..12));
        let (scale, shift) = (rng.random_range(0.05..10.0), rng.random_range(-5.0..5.0));
        let g = FeatureMap::from_fn(c, h, w, |_, _, _| shift + scale * rng.random_range(-1.0..1.0));
        let d = FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-4.0..4.0));
        let out = ok(adain(&g, &d))?;
        for (ch, ((mo, so), (md, sd))) in out.channel_moments().into_iter().zip(d.channel_moments()).enumerate() {
            let e = (mo - md).abs().max((so - sd).abs());
            worst = worst.max(e);
            ensure(e <= ADAIN_TOL, || format!("map {case} channel {ch}: moment error {e:e}"))?;
        }
    }
    Ok(format!("500 maps, worst moment error {worst:.2e}"))
}

// Spectral normalization

fn spectral_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for case in 0..100 {
        let (r, c) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let m = ok(Matrix::new(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect()))?;
        let (normed, _) = ok(spectral_normalize(&m, kfr::fusion::discriminator::SN_POWER_ITERS))?;
        let top = DMatrix::from_row_slice(r, c, normed.data()).singular_values().max();
        lo = lo.min(top);
        hi = hi.max(top);
        ensure((SIGMA_RANGE.0..=SIGMA_RANGE.1).contains(&top), || format!("matrix {case} ({r}x{c}): sigma_max {top}"))?;
    }
    Ok(format!("100 matrices, sigma_max in [{lo:.6}, {hi:.6}]"))
}

// Residual identity

fn residual_identity_criterion() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let spec = StreamSpec { keyframes: vec![0, 10, 20], ..StreamSpec::regular(30, 10, 96, 96, 600) };
    let records = ok(load_manifest(ok(write_stream(dir.path(), &spec))?))?;
    let mut weights = FusionNet::init_weights(TEST_CHANNELS, 600);
    ok(FusionNet::zero_residual(&mut weights))?;
    let cfg = PipelineConfig { crop_size: 64, ..Default::default() };
    let pipeline = ok(Pipeline::with_weights(cfg, &weights))?;
    let mut mismatched = Vec::new();
    let mut compared = 0;
    let report = ok(run_with(pipeline, &records, None, |o| {
        if let (Some(a), Some(r)) = (&o.aligned_input, &o.restored_crop) {
            compared += 1;
            if a.to_png_bytes().unwrap() != r.to_png_bytes().unwrap() || a != r {
                mismatched.push(o.frame_index);
            }
        }
    }))?;
    ensure(compared == 27, || format!("{compared} frames restored, expected 27"))?;
    ensure(mismatched.is_empty(), || format!("frames differ from aligned input: {mismatched:?}"))?;
    for r in &report.records {
        let (p, b) = (r.psnr.unwrap_or(f64::NAN), r.baseline_psnr.unwrap_or(f64::NAN));
        ensure((p - b).abs() <= PSNR_TOL, || format!("frame {}: psnr {p} vs degraded {b}", r.frame_index))?;
    }
    Ok("27 frames byte-identical, PSNR equal to degraded-vs-gt".into())
}

// Loss stack

fn loss_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let (w, h, c) = (rng.random_range(1..6), rng.random_range(1..6), [1, 3][case % 2]);
        let r: Vec<f64> = (0..w * h * c).map(|_| rng.random_range(0.1..0.9)).collect();
        let g: Vec<f64> = (0..w * h * c).map(|_| rng.random_range(0.1..0.9)).collect();
        let gt = ok(ImageBuffer::new(w, h, c, g))?;
        let (_, grad) = ok(mse_loss(&ok(ImageBuffer::new(w, h, c, r.clone()))?, &gt))?;
        let step = 1e-4;
        let mut diff_sq = 0.0;
        for i in 0..r.len() {
            let mut plus = r.clone();
            let mut minus = r.clone();
            plus[i] += step;
            minus[i] -= step;
            let lp = ok(mse_loss(&ok(ImageBuffer::new(w, h, c, plus))?, &gt))?.0;
            let lm = ok(mse_loss(&ok(ImageBuffer::new(w, h, c, minus))?, &gt))?.0;
            diff_sq += ((lp - lm) / (2.0 * step) - grad[i]).powi(2);
        }
        let e = diff_sq.sqrt() / grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(e);
        ensure(e <= GRAD_REL_TOL, || format!("case {case}: gradient relative error {e:e}"))?;
    }

    let lw = LossWeights::default();
    ensure(
        (lw.mse, lw.perceptual, lw.style, lw.adversarial, lw.adversarial_scale) == (300.0, 10.0, 1.0, 2.0, [4.0, 2.0, 1.0, 1.0]),
        || format!("default weights {lw:?}"),
    )?;
    // 300 m + 10 p + s + 2 (4 a1 + 2 a2 + a4 + a8), worked by hand.
    let cases = [
        (LossParts { mse: 0.01, perceptual: 0.5, style: 0.25, adversarial_scale: [-0.5, 1.0, 0.25, -2.0] }, 4.75),
        (LossParts { mse: 0.0, perceptual: 0.0, style: 0.0, adversarial_scale: [1.0, 1.0, 1.0, 1.0] }, 16.0),
        (LossParts { mse: 0.002, perceptual: 0.1, style: 3.0, adversarial_scale: [0.0; 4] }, 4.6),
        (LossParts { mse: 1.0, perceptual: 1.0, style: 1.0, adversarial_scale: [0.125, -0.25, 0.5, 0.5] }, 313.0),
    ];
    for (i, (parts, want)) in cases.iter().enumerate() {
        let got = ok(total_loss(parts, &lw))?.total;
        ensure((got - want).abs() <= LOSS_TOL, || format!("combination {i}: {got} vs {want}"))?;
    }

    let sat = [vec![1.0, 2.5], vec![3.0], vec![1.0], vec![7.0]];
    let fake = [vec![-1.0, -4.0], vec![-1.5], vec![-1.0], vec![-2.0]];
    let d = ok(hinge_d_loss(&sat, &fake))?;
    ensure(d == 0.0, || format!("saturated discriminator loss {d}"))?;
    let (d1, _) = ok(hinge_single_scale(&[1.0, 5.0], &[-1.0, -3.0]))?;
    ensure(d1 == 0.0, || format!("saturated single-scale loss {d1}"))?;
    let g0 = ok(hinge_g_loss(&[vec![0.0], vec![0.0], vec![0.0], vec![0.0]], &lw))?;
    ensure(g0 == 0.0, || format!("zero-score generator loss {g0}"))?;
    Ok(format!("50 gradients (worst {worst:.2e}), 4 weighted totals exact, hinge saturates to 0"))
}

// Metrics

fn naive_ssim(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let g = gaussian_window(11, 1.5);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    let k = g[j] * g[i];
                    mx += k * a[(oy + j) * w + ox + i];
                    my += k * b[(oy + j) * w + ox + i];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    let k = g[j] * g[i];
                    let (dx, dy) = (a[(oy + j) * w + ox + i] - mx, b[(oy + j) * w + ox + i] - my);
                    vx += k * dx * dx;
                    vy += k * dy * dy;
                    cxy += k * dx * dy;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn metrics_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    for case in 0..20 {
        let (w, h) = (rng.random_range(4..40), rng.random_range(4..40));
        let offset = rng.random_range(0.001..0.5);
        let base: Vec<f64> = (0..w * h * 3).map(|_| rng.random_range(0.0..1.0 - offset)).collect();
        let a = ok(ImageBuffer::new(w, h, 3, base.clone()))?;
        let b = ok(ImageBuffer::new(w, h, 3, base.iter().map(|v| v + offset).collect()))?;
        let got = ok(psnr(&a, &b, 1.0))?;
        let want = -20.0 * offset.log10();
        ensure((got - want).abs() <= PSNR_TOL, || format!("offset case {case}: {got} vs {want} dB"))?;
    }
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let a: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| (v + rng.random_range(-0.3..0.3)).clamp(0.0, 1.0)).collect();
        let (ia, ib) = (ok(ImageBuffer::new(16, 16, 1, a.clone()))?, ok(ImageBuffer::new(16, 16, 1, b.clone()))?);
        let same = ok(ssim(&ia, &ia))?;
        ensure((same - 1.0).abs() <= 1e-12, || format!("case {case}: SSIM of identical images {same}"))?;
        let e = (ok(ssim(&ia, &ib))? - naive_ssim(&a, &b, 16, 16)).abs();
        worst = worst.max(e);
        ensure(e <= SSIM_TOL, || format!("case {case}: SSIM differs from naive window by {e:e}"))?;
    }
    Ok(format!("PSNR closed form exact, SSIM(x,x)=1, SSIM vs naive worst {worst:.2e}"))
}

// Determinism

fn tree(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut v = Vec::new();
    for e in ok(fs::read_dir(dir))? {
        let e = ok(e)?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name != "timings.jsonl" {
            v.push((name, ok(fs::read(e.path()))?));
        }
    }
    v.sort();
    Ok(v)
}

fn run_kfr(args: &[&std::ffi::OsStr]) -> Result<(), String> {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_kfr")).args(args).output())?;
    ensure(out.status.success(), || format!("kfr {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
}

fn determinism_criterion() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let root = dir.path();
    let manifest = ok(write_stream(&root.join("in"), &StreamSpec::regular(10, 4, 64, 64, 900)))?;
    let weights = root.join("w.kfrw");
    run_kfr(&["init-weights".as_ref(), "--seed".as_ref(), "3".as_ref(), "--out".as_ref(), weights.as_os_str()])?;
    for name in ["a", "b"] {
        let out = root.join(name);
        run_kfr(&[
            "restore".as_ref(),
            "--manifest".as_ref(),
            manifest.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
            "--crop-size".as_ref(),
            "32".as_ref(),
            "--weights".as_ref(),
            weights.as_os_str(),
            "--report-losses".as_ref(),
        ])?;
    }
    let (a, b) = (tree(&root.join("a"))?, tree(&root.join("b"))?);
    ensure(a == b, || "restore outputs differ between runs".into())?;
    let pngs = a.iter().filter(|(n, _)| n.ends_with(".png")).count();
    ensure(pngs >= 10 && a.iter().any(|(n, _)| n == "report.jsonl"), || format!("unexpected outputs: {pngs} frames"))?;

    let bytes = ok(fs::read(&weights))?;
    let again = ok(WeightStore::from_bytes(&bytes))?.to_bytes();
    ensure(bytes == again, || "weight file changed on write -> read -> write".into())?;
    Ok(format!("{} output files identical across runs, {}-byte weight file round-trips", a.len(), bytes.len()))
}

// Throughput

fn throughput_criterion() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let manifest = ok(write_landmark_stream(dir.path(), &random_landmark_stream(10_000, 0.05, 1000)))?;
    let start = Instant::now();
    let records = ok(load_manifest(&manifest))?;
    let trace = ok(simulate_policy(&records, &PipelineConfig::default()))?;
    let sim = start.elapsed();
    ensure(trace.len() == 10_000, || format!("{} trace events for 10000 frames", trace.len()))?;
    ensure(sim < SIMULATION_BUDGET, || format!("simulation took {sim:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut store = ok(KeyframeStore::new(Policy::LfuDecay, 10))?;
    for f in 0..10 {
        store.insert((), random_set(&mut rng), f);
    }
    let queries: Vec<LandmarkSet> = (0..10_000).map(|_| random_set(&mut rng)).collect();
    let start = Instant::now();
    for (f, q) in queries.iter().enumerate() {
        ok(store.select(q, 10 + f as u64))?;
    }
    let per = start.elapsed() / queries.len() as u32;
    ensure(per < SELECT_BUDGET, || format!("selection averaged {per:?}"))?;
    Ok(format!("10000-frame simulation in {sim:.2?}, selection {per:.2?} per frame"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("mls_oracle_equivalence", mls_criterion),
        ("keyframe_policy_fidelity", policy_criterion),
        ("adain_moment_contract", adain_criterion),
        ("spectral_normalization", spectral_criterion),
        ("residual_identity_end_to_end", residual_identity_criterion),
        ("loss_stack", loss_criterion),
        ("metrics", metrics_criterion),
        ("determinism", determinism_criterion),
        ("throughput", throughput_criterion),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                println!("FAIL {name}: {why}");
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
