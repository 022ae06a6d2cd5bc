//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs under `cargo test` as a plain binary (no libtest harness).

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fusionkit::embedstore::{
    assemble_protos, decode_records, encode_records, normalize, read_store, write_store, Embedding,
    EmbeddingRecord, Manifest, Role,
};
use fusionkit::fusion::{classify, confidence, fuse_confidence, fuse_standard, FusionConfig, FusionMode, PrototypeBank};
use fusionkit::harness::{
    emit_report, run_experiment, synth_fixture, synth_records, ExperimentConfig, PromptSource, ReportFormat,
    SynthSpec, WeightPolicy,
};
use fusionkit::metrics::{mean_per_class, per_class_table, top1, Metric};
use fusionkit::prompts::{demographic_prompts, AxisName};
use fusionkit::scan::{scan_weights, weight_grid, EvalSet, Evaluator};
use fusionkit::ClassProto;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// exact oracle

type Q = BigRational;

fn q_of(x: f32) -> Q {
    Q::from_float(f64::from(x)).expect("finite")
}

/// Bits of fixed-point precision for the oracle's square roots.
const SQRT_BITS: u32 = 200;

/// `sqrt(a)` to within 2^-SQRT_BITS, as a rational.
fn q_sqrt(a: &Q) -> Q {
    let scale = BigInt::one() << (2 * SQRT_BITS);
    let scaled = (a * Q::from_integer(scale)).floor().to_integer();
    let root = scaled.sqrt();
    Q::new(root, BigInt::one() << SQRT_BITS)
}

/// Renormalized mean in extended precision. A single member is returned as is.
fn q_centroid(members: &[Embedding]) -> Vec<Q> {
    let dim = members[0].dim();
    let rows: Vec<Vec<Q>> = members.iter().map(|e| e.values().iter().map(|&v| q_of(v)).collect()).collect();
    if rows.len() == 1 {
        return rows.into_iter().next().unwrap();
    }
    let n = Q::from_integer(BigInt::from(rows.len()));
    let mean: Vec<Q> = (0..dim)
        .map(|j| rows.iter().fold(Q::zero(), |acc, r| acc + &r[j]) / &n)
        .collect();
    let norm2 = mean.iter().fold(Q::zero(), |acc, m| acc + m * m);
    let norm = q_sqrt(&norm2);
    mean.into_iter().map(|m| m / &norm).collect()
}

fn q_dot(a: &[Q], b: &[Q]) -> Q {
    a.iter().zip(b).fold(Q::zero(), |acc, (x, y)| acc + x * y)
}

/// Fractional bits of the fixed-point copies of the exact dot products.
const FIXED_BITS: u32 = 256;

struct OracleQuery {
    label: usize,
    /// q . t_k and q . i_k, floored to multiples of 2^-FIXED_BITS.
    text: Vec<BigInt>,
    image: Vec<BigInt>,
    /// |q|
    norm: f64,
}

fn to_fixed(x: &Q) -> BigInt {
    (x * Q::from_integer(BigInt::one() << FIXED_BITS)).floor().to_integer()
}

fn fixed_to_f64(x: &BigInt, extra_scale: f64) -> f64 {
    // exact power-of-two scaling: 2^-256 is representable
    x.to_f64().unwrap() * 2f64.powi(-(FIXED_BITS as i32)) / extra_scale
}

fn argmax_exact(scores: &[BigInt]) -> (usize, BigInt) {
    let mut best = 0;
    for k in 1..scores.len() {
        if scores[k] > scores[best] {
            best = k;
        }
    }
    let margin = scores
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != best)
        .map(|(_, s)| &scores[best] - s)
        .min()
        .unwrap_or_else(BigInt::zero);
    (best, margin)
}

/// Scores at w = k/100, scaled by 100 * 2^FIXED_BITS. Exact on the fixed-point inputs.
fn oracle_standard(q: &OracleQuery, k: usize) -> Vec<BigInt> {
    let (a, b) = (BigInt::from(k), BigInt::from(100 - k));
    q.text.iter().zip(&q.image).map(|(t, i)| &a * t + &b * i).collect()
}

fn oracle_confidence(q: &OracleQuery, w: f64) -> Vec<f64> {
    let text: Vec<f64> = q.text.iter().map(|t| fixed_to_f64(t, 1.0)).collect();
    let image: Vec<f64> = q.image.iter().map(|i| fixed_to_f64(i, 1.0)).collect();
    let cos: Vec<f64> = text.iter().map(|t| t / q.norm).collect();
    let max = cos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = cos.iter().map(|c| (c - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    text.iter()
        .zip(&image)
        .zip(&exps)
        .map(|((t, i), e)| w * t + (1.0 - w) * (1.0 - e / total) * i)
        .collect()
}

// ---------------------------------------------------------------------------
// criteria

fn fusion_oracle() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec {
        classes: 3,
        dim: 16,
        queries_per_class: 10,
        text_bias: 0.45,
        image_bias: 0.55,
        texts_per_class: 3,
        images_per_class: 5,
        query_noise: 1.5,
        seed: 2024,
        ..Default::default()
    };
    let (manifest, records) = synth_records(&spec).unwrap();
    let protos = assemble_protos(manifest.classes.len(), &records).unwrap();
    let queries: Vec<&EmbeddingRecord> = records.iter().filter(|r| r.role == Role::Query).collect();

    let t_cent: Vec<Vec<Q>> = protos.iter().map(|p| q_centroid(&p.text_embeddings)).collect();
    let i_cent: Vec<Vec<Q>> = protos.iter().map(|p| q_centroid(&p.image_embeddings)).collect();
    let oracle: Vec<OracleQuery> = queries
        .iter()
        .map(|r| {
            let qv: Vec<Q> = r.embedding.values().iter().map(|&v| q_of(v)).collect();
            OracleQuery {
                label: r.label().unwrap(),
                text: t_cent.iter().map(|t| to_fixed(&q_dot(&qv, t))).collect(),
                image: i_cent.iter().map(|i| to_fixed(&q_dot(&qv, i))).collect(),
                norm: q_dot(&qv, &qv).to_f64().unwrap().sqrt(),
            }
        })
        .collect();

    let tol = 1e-6;
    // scores within 1e-6 of each other count as near-ties
    let tie_band = (BigInt::from(100) << FIXED_BITS) / BigInt::from(1_000_000);
    let grid = weight_grid();
    let mut max_err = 0.0f64;
    let mut near_ties = 0usize;
    let mut oracle_curves: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut impl_time = Duration::ZERO;

    for (k, &w) in grid.iter().enumerate() {
        let mut correct_std = 0usize;
        let mut correct_conf = 0usize;
        for (rec, oq) in queries.iter().zip(&oracle) {
            let exact = oracle_standard(oq, k);
            let (best, margin) = argmax_exact(&exact);
            if margin < tie_band {
                near_ties += 1;
            }
            correct_std += usize::from(best == oq.label);
            let t0 = Instant::now();
            let got = classify(rec, &protos, &FusionConfig::standard(w).unwrap()).unwrap();
            impl_time += t0.elapsed();
            for (g, e) in got.scores.iter().zip(&exact) {
                max_err = max_err.max((g - fixed_to_f64(e, 100.0)).abs());
            }

            let conf = oracle_confidence(oq, w);
            let cbest = fusionkit::fusion::argmax_lowest(&conf);
            correct_conf += usize::from(cbest == oq.label);
            let t0 = Instant::now();
            let got = classify(rec, &protos, &FusionConfig::confidence(w).unwrap()).unwrap();
            impl_time += t0.elapsed();
            for (g, e) in got.scores.iter().zip(&conf) {
                max_err = max_err.max((g - e).abs());
            }
        }
        let n = queries.len() as f64;
        oracle_curves.entry("standard").or_default().push(correct_std as f64 / n);
        oracle_curves.entry("confidence").or_default().push(correct_conf as f64 / n);
    }

    let evalset = EvalSet::from_records(queries.iter().copied());
    let t0 = Instant::now();
    let std_scan = scan_weights(&evalset, &protos, FusionMode::Standard, Metric::Top1).unwrap();
    let conf_scan = scan_weights(&evalset, &protos, FusionMode::Confidence, Metric::Top1).unwrap();
    impl_time += t0.elapsed();

    let std_match = std_scan.accuracy_at == oracle_curves["standard"];
    let conf_match = conf_scan.accuracy_at == oracle_curves["confidence"];
    let lo = std_scan.accuracy_at.iter().cloned().fold(1.0, f64::min);
    let hi = std_scan.accuracy_at.iter().cloned().fold(0.0, f64::max);
    let pass = max_err <= tol && std_match && conf_match && near_ties == 0 && start.elapsed() < Duration::from_secs(5);
    outcome(
        pass,
        format!(
            "max |score - oracle| = {max_err:.2e} (tol 1e-6) over {} queries x 101 weights x 2 modes; \
             curves match: standard {std_match}, confidence {conf_match}; near-ties {near_ties}; \
             standard curve range [{lo:.3}, {hi:.3}]; implementation {:.2}s, with oracle {:.2}s (< 5s)",
            queries.len(),
            impl_time.as_secs_f64(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn random_spec(rng: &mut ChaCha8Rng, seed: u64) -> SynthSpec {
    SynthSpec {
        classes: rng.random_range(2..9),
        dim: rng.random_range(3..33),
        queries_per_class: rng.random_range(2..12),
        text_bias: rng.random_range(0.0..1.0),
        image_bias: rng.random_range(0.0..1.0),
        texts_per_class: rng.random_range(1..4),
        images_per_class: rng.random_range(1..6),
        query_noise: rng.random_range(0.2..3.0),
        seed,
        ..Default::default()
    }
}

fn setup(spec: &SynthSpec) -> (Vec<ClassProto>, EvalSet) {
    let (m, records) = synth_records(spec).unwrap();
    let protos = assemble_protos(m.classes.len(), &records).unwrap();
    (protos, EvalSet::from_records(&records))
}

fn baseline_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = Vec::new();
    for seed in 0..100 {
        let spec = random_spec(&mut rng, seed);
        let (protos, evalset) = setup(&spec);
        let bank = PrototypeBank::from_protos(&protos).unwrap();
        let ev = Evaluator::new(&evalset, &bank, FusionMode::Confidence).unwrap();
        let text = ev.metric_at(&FusionConfig::text_only(), Metric::Top1).unwrap();
        let image = ev.metric_at(&FusionConfig::image_only(), Metric::Top1).unwrap();
        let std = ev.scan(FusionMode::Standard, Metric::Top1).unwrap().accuracy_at;
        let conf = ev.scan(FusionMode::Confidence, Metric::Top1).unwrap().accuracy_at;
        if std[0] != image || std[100] != text || conf[100] != text {
            bad.push(seed);
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "100 random fixtures: standard curve[w=0] == image-only, curve[w=1] == text-only, \
             confidence curve[w=1] == text-only, all exact; failing seeds {bad:?}"
        ),
    )
}

fn unit_random(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(e) = normalize(&v) {
            return e;
        }
    }
}

fn confidence_invariant() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut draws = 0;
    for n in [1usize, 2, 7, 102] {
        for _ in 0..1000 {
            let dim = rng.random_range(2..65);
            let q = unit_random(&mut rng, dim);
            let texts: Vec<Embedding> = (0..n).map(|_| unit_random(&mut rng, dim)).collect();
            let c = confidence(&q, &texts).unwrap();
            let s: f64 = c.values.iter().map(|c| 1.0 - c).sum();
            worst = worst.max((s - 1.0).abs());
            draws += 1;
        }
    }
    let mut identical = true;
    for k in 0..1000 {
        let dim = rng.random_range(1..65);
        let t = unit_random(&mut rng, dim);
        let i = unit_random(&mut rng, dim);
        let w = if k < 101 { k as f64 / 100.0 } else { rng.random_range(0.0..=1.0) };
        let a = fuse_standard(&t, &i, w).unwrap();
        let b = fuse_confidence(&t, &i, w, 1.0).unwrap();
        identical &= a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    outcome(
        worst <= 1e-6 && identical,
        format!(
            "max |sum(1 - c) - 1| = {worst:.2e} over {draws} draws (N in 1, 2, 7, 102; tol 1e-6); \
             fuse_confidence(c = 1) bit-identical to fuse_standard on 1000 draws: {identical}"
        ),
    )
}

fn scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut changed = 0;
    for trial in 0..1000 {
        let spec = SynthSpec {
            classes: rng.random_range(2..12),
            dim: rng.random_range(2..48),
            queries_per_class: 1,
            text_bias: rng.random_range(0.0..1.0),
            image_bias: rng.random_range(0.0..1.0),
            seed: trial,
            ..Default::default()
        };
        let (m, records) = synth_records(&spec).unwrap();
        let protos = assemble_protos(m.classes.len(), &records).unwrap();
        let q = unit_random(&mut rng, spec.dim);
        let s: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled = Embedding::new(q.values().iter().map(|&v| (f64::from(v) * s) as f32).collect()).unwrap();
        let w = rng.random_range(0.0..=1.0);
        for cfg in [
            FusionConfig::text_only(),
            FusionConfig::image_only(),
            FusionConfig::standard(w).unwrap(),
            FusionConfig::confidence(w).unwrap(),
        ] {
            let a = classify(&EmbeddingRecord::new("q", Role::Query, -1, q.clone()), &protos, &cfg).unwrap();
            let b = classify(&EmbeddingRecord::new("q", Role::Query, -1, scaled.clone()), &protos, &cfg).unwrap();
            changed += usize::from(a.predicted != b.predicted);
        }
    }
    outcome(
        changed == 0,
        format!("1000 trials x 4 modes, scale factors 1e-3..1e3: {changed} predictions changed"),
    )
}

/// Two confusable classes in 3-d, basis e1, e2, e3:
///
/// - text A = normalize(e1 + e3), text B = normalize(e1 + e2)
/// - image A = e1, image B = e2
/// - A queries (cos t, sin t, 0): one at t = -0.1, nine at t = 0.05..0.45
/// - B queries (sin p, cos p, 0) with p = 0.05..0.50
///
/// Text alone scores A correct only when sin t < 0 (0.1 accuracy) and B
/// always (1.0). Mixing in the images moves the A/B boundary so that some
/// weights fix class A while keeping B.
fn bias_offset_fixture() -> (Vec<ClassProto>, EvalSet) {
    let e = |v: [f64; 3]| normalize(&v).unwrap();
    let protos = vec![
        ClassProto::new(0, vec![e([1.0, 0.0, 1.0])], vec![e([1.0, 0.0, 0.0])]).unwrap(),
        ClassProto::new(1, vec![e([1.0, 1.0, 0.0])], vec![e([0.0, 1.0, 0.0])]).unwrap(),
    ];
    let mut set = EvalSet::default();
    set.push("a0".into(), e([(-0.1f64).cos(), (-0.1f64).sin(), 0.0]), 0);
    for j in 0..9 {
        let t = 0.05 + 0.05 * j as f64;
        set.push(format!("a{}", j + 1), e([t.cos(), t.sin(), 0.0]), 0);
    }
    for j in 0..10 {
        let p = 0.05 + 0.05 * j as f64;
        set.push(format!("b{j}"), e([p.sin(), p.cos(), 0.0]), 1);
    }
    (protos, set)
}

fn bias_offset() -> Outcome {
    let (protos, set) = bias_offset_fixture();
    let bank = PrototypeBank::from_protos(&protos).unwrap();
    let ev = Evaluator::new(&set, &bank, FusionMode::Standard).unwrap();
    let per_class = |cfg: &FusionConfig| {
        let preds = ev.predict(cfg).unwrap();
        let t = per_class_table(&preds, &set.labels, 2).unwrap();
        (t.per_class_accuracy[&0], t.per_class_accuracy[&1])
    };
    let (ta, tb) = per_class(&FusionConfig::text_only());
    let text_mean = (ta + tb) / 2.0;
    let winners: Vec<(f64, f64, f64)> = weight_grid()
        .into_iter()
        .map(|w| {
            let (a, b) = per_class(&FusionConfig::standard(w).unwrap());
            (w, a, b)
        })
        .filter(|&(_, a, b)| a >= 0.5 && b >= 0.5 && (a + b) / 2.0 > text_mean)
        .collect();
    let fixture_ok = ta == 0.1 && tb == 1.0;
    let detail = match winners.first() {
        Some((w, a, b)) => format!(
            "text only per-class ({ta:.2}, {tb:.2}); {} grid weights qualify, first w = {w:.2} with ({a:.2}, {b:.2})",
            winners.len()
        ),
        None => format!("text only per-class ({ta:.2}, {tb:.2}); no grid weight qualifies"),
    };
    outcome(fixture_ok && !winners.is_empty(), detail)
}

fn prompt_counts() -> Outcome {
    let p = |c: AxisName, e: AxisName, class: &str| demographic_prompts(c, e, class).unwrap().prompts;
    use AxisName::*;
    let race = p(Profession, Race7, "doctor");
    let age = p(Profession, Age, "doctor");
    let gender = p(Profession, Gender, "doctor");
    let counts_ok = race.len() == 7 && age.len() == 9 && gender.len() == 2;
    let expected = [
        (Profession, Profession, "doctor", "A photo of a doctor"),
        (Profession, Race7, "doctor", "A photo of a white doctor"),
        (Profession, Race4, "doctor", "A photo of a white doctor"),
        (Profession, Gender, "doctor", "A photo of a male doctor"),
        (Profession, Age, "doctor", "A photo of a 30-39 year old doctor"),
        (Race7, Race7, "black", "A photo of a black person"),
        (Race7, Profession, "black", "A photo of a black doctor"),
        (Race7, Gender, "black", "A photo of a black male"),
        (Race7, Age, "black", "A photo of a 30-39 year old black person"),
        (Gender, Gender, "female", "A photo of a female"),
        (Gender, Profession, "female", "A photo of a female doctor"),
        (Gender, Race7, "female", "A photo of a black female"),
        (Gender, Age, "female", "A photo of a 30-39 year old female"),
        (Age, Age, "30-39", "A photo of a 30-39 year old"),
        (Age, Profession, "30-39", "A photo of a 30-39 year old doctor"),
        (Age, Race7, "30-39", "A photo of a 30-39 year old black person"),
        (Age, Gender, "30-39", "A photo of a 30-39 year old female"),
    ];
    let missing: Vec<&str> = expected
        .iter()
        .filter(|(c, e, class, text)| !p(*c, *e, class).iter().any(|x| x == text))
        .map(|(.., text)| *text)
        .collect();
    outcome(
        counts_ok && missing.is_empty(),
        format!(
            "prompts per class: race7 {}, age {}, gender {} (want 7, 9, 2); {} of {} table strings rendered verbatim{}",
            race.len(),
            age.len(),
            gender.len(),
            expected.len() - missing.len(),
            expected.len(),
            if missing.is_empty() { String::new() } else { format!("; missing {missing:?}") }
        ),
    )
}

fn metrics_fixture() -> Outcome {
    // class 0: 1 of 10 right, class 1: 10 of 10 right
    let mut preds = vec![0];
    preds.extend([1; 19]);
    let mut labels = vec![0; 10];
    labels.extend([1; 10]);
    let mpc = mean_per_class(&preds, &labels, 2).unwrap();
    let t1 = top1(&preds, &labels).unwrap();
    let table = per_class_table(&preds, &labels, 2).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut invariant = true;
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    for _ in 0..200 {
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let p: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
        let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        invariant &= per_class_table(&p, &l, 2).unwrap() == table
            && mean_per_class(&p, &l, 2).unwrap() == mpc
            && top1(&p, &l).unwrap() == t1;
    }
    outcome(
        mpc == 0.55 && t1 == 11.0 / 20.0 && invariant,
        format!("mean_per_class = {mpc} (want 0.55), top1 = {t1} (want 11/20), invariant under 200 permutations: {invariant}"),
    )
}

fn random_record(rng: &mut ChaCha8Rng, k: usize, dim: usize, classes: usize) -> EmbeddingRecord {
    let role = match rng.random_range(0..3) {
        0 => Role::ClassText,
        1 => Role::ClassImage,
        _ => Role::Query,
    };
    let class = if role == Role::Query && rng.random_bool(0.2) {
        -1
    } else {
        rng.random_range(0..classes as i32)
    };
    let values: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let mut rec = EmbeddingRecord::new(format!("rec-{k}-\u{e9}"), role, class, Embedding::new(values).unwrap());
    for t in 0..rng.random_range(0..3) {
        rec = rec.with_tag(format!("k{t}"), format!("v{}", rng.random::<u32>()));
    }
    rec
}

fn store_round_trip() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.embs");
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let classes = 17;
    let dim = 128;
    let records: Vec<EmbeddingRecord> = (0..10_000).map(|k| random_record(&mut rng, k, dim, classes)).collect();
    let manifest = Manifest::new("random", (0..classes).map(|k| format!("c{k}")).collect(), Metric::Top1);
    write_store(&records, &manifest, &path).unwrap();
    let (m2, back) = read_store(&path).unwrap();
    let bit_exact = m2 == manifest
        && back.len() == records.len()
        && back.iter().zip(&records).all(|(a, b)| {
            a.id == b.id
                && a.role == b.role
                && a.class_index == b.class_index
                && a.axis_tags == b.axis_tags
                && a.embedding
                    .values()
                    .iter()
                    .zip(b.embedding.values())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        });

    let bytes = fs::read(&path).unwrap();
    let mut rejected = Vec::new();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    rejected.push(decode_records(&bad_magic).is_err());
    let mut bad_version = bytes.clone();
    bad_version[4..8].copy_from_slice(&99u32.to_le_bytes());
    rejected.push(decode_records(&bad_version).is_err());
    let mut bad_count = bytes.clone();
    bad_count[12..20].copy_from_slice(&10_001u64.to_le_bytes());
    rejected.push(decode_records(&bad_count).is_err());
    for cut in [0, 3, 7, 19, 20, 100, bytes.len() / 2, bytes.len() - 1] {
        rejected.push(decode_records(&bytes[..cut]).is_err());
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    rejected.push(decode_records(&trailing).is_err());
    let all_rejected = rejected.iter().all(|&r| r);
    let reencoded = encode_records(dim, &back).unwrap() == bytes;
    let elapsed = start.elapsed();
    outcome(
        bit_exact && all_rejected && reencoded && elapsed < Duration::from_secs(10),
        format!(
            "10000 records (dim {dim}) bit-exact: {bit_exact}; re-encode identical: {reencoded}; \
             {}/{} corrupt or truncated inputs rejected; {:.2}s (< 10s)",
            rejected.iter().filter(|&&r| r).count(),
            rejected.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("e2e.embs");
    let spec = SynthSpec {
        classes: 6,
        dim: 24,
        queries_per_class: 25,
        text_bias: 0.5,
        image_bias: 0.45,
        texts_per_class: 2,
        holdout_per_class: 5,
        query_noise: 1.5,
        seed: 99,
        ..Default::default()
    };
    synth_fixture(&spec, &store).unwrap();
    let store_bytes = fs::read(&store).unwrap();
    synth_fixture(&spec, &dir.path().join("again.embs")).unwrap();
    let store_repeatable = fs::read(dir.path().join("again.embs")).unwrap() == store_bytes;

    let mut configs = Vec::new();
    for mode in [FusionMode::TextOnly, FusionMode::ImageOnly, FusionMode::Standard, FusionMode::Confidence] {
        let mut cfg = ExperimentConfig::new(&store, PromptSource::PhotoTemplate, mode);
        if mode == FusionMode::Confidence {
            cfg.select_on = Some("select".into());
        }
        if mode == FusionMode::ImageOnly {
            cfg.weight_policy = WeightPolicy::Fixed(0.3);
        }
        configs.push(cfg);
    }
    let mut fixed = ExperimentConfig::new(&store, PromptSource::PhotoTemplate, FusionMode::Standard);
    fixed.weight_policy = WeightPolicy::Fixed(0.62);
    fixed.metric = Some(Metric::MeanPerClass);
    configs.push(fixed);

    let mut mismatches = 0;
    let mut runs = 0;
    for cfg in &configs {
        let mut reference: Option<Vec<String>> = None;
        for threads in [None, Some(1), Some(2), Some(4), Some(8), None] {
            let mut c = cfg.clone();
            c.threads = threads;
            let r = run_experiment(&c).unwrap();
            let out: Vec<String> = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown]
                .into_iter()
                .map(|f| emit_report(&r, f).unwrap())
                .collect();
            runs += 1;
            match &reference {
                None => reference = Some(out),
                Some(prev) => mismatches += usize::from(*prev != out),
            }
        }
    }

    // the CLI path, in separate processes
    let exe = env!("CARGO_BIN_EXE_fusionkit");
    let cli = |threads: &str, out: &Path| {
        std::process::Command::new(exe)
            .args(["scan", "--store", store.to_str().unwrap(), "--prompt-source", "photo_template"])
            .args(["--fusion-mode", "confidence", "--threads", threads, "--out", out.to_str().unwrap()])
            .status()
            .unwrap()
            .success()
    };
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let cli_ok = cli("1", &a) && cli("6", &b) && fs::read(&a).unwrap() == fs::read(&b).unwrap();

    outcome(
        store_repeatable && mismatches == 0 && cli_ok,
        format!(
            "{} configs x {runs} runs over thread counts default/1/2/4/8: {mismatches} byte differences \
             in json/csv/markdown; synthetic store repeatable: {store_repeatable}; CLI 1 vs 6 threads identical: {cli_ok}",
            configs.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 9] = [
        ("fusion oracle equivalence", fusion_oracle),
        ("baseline limits", baseline_limits),
        ("confidence invariant", confidence_invariant),
        ("argmax scale invariance", scale_invariance),
        ("bias-offset reproduction", bias_offset),
        ("prompt expansion counts", prompt_counts),
        ("metrics fixture", metrics_fixture),
        ("store round-trip", store_round_trip),
        ("end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!result.pass);
        println!(
            "[{}] {name}: {} ({:.2}s)",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
