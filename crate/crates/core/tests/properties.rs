use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oeenc_core::cluster::assignment_probs;
use oeenc_core::eend_eda::{collect_attractors, speaker_posteriors, FrameEmbeddings};
use oeenc_core::eval::{der, Segment, SegmentList};
use oeenc_core::features::{featurize, FeatureConfig, StreamingFeaturizer};
use oeenc_core::io::weights::{load_weights, random_weights, save_weights};
use oeenc_core::losses::{
    bce, clustering_ce, eend_eda_loss_chunks, existence_loss, pit_diarization_loss, EendEdaOutput,
};
use oeenc_core::nn::scaled_dot_attention;
use oeenc_core::stream::{BufferSize, Session, StreamConfig};
use oeenc_core::{Matrix, Model, ModelConfig};

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect())
}

fn pcm(seed: u64, len: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn tiny_stream() -> (Arc<Model>, StreamConfig) {
    let features = FeatureConfig { n_mels: 4, context: 1, ..FeatureConfig::default() };
    let model = ModelConfig {
        input_dim: features.feature_dim(),
        d_model: 8,
        n_heads: 2,
        n_encoder_layers: 2,
        ff_dim: 16,
        existence_threshold: 0.45,
        ..ModelConfig::default()
    };
    let weights = random_weights(&model, 12).unwrap();
    let cfg = StreamConfig {
        model: model.clone(),
        features,
        ..StreamConfig::new(0.5, BufferSize::Seconds(2.0))
    };
    (Arc::new(Model::from_bundle(&weights).unwrap()), cfg)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn segments(rng: &mut ChaCha8Rng, prefix: &str, n: usize) -> SegmentList {
    let mut out = Vec::new();
    for s in 0..n {
        let mut t = rng.random_range(0.0..1.0);
        for _ in 0..rng.random_range(1..6) {
            let len = rng.random_range(0.2..2.0);
            out.push(Segment { speaker: format!("{prefix}{s}"), start: t, end: t + len });
            t += len + rng.random_range(0.0..2.0);
        }
    }
    SegmentList::new(out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn feature_dim_and_count(len in 1usize..3000) {
        let cfg = FeatureConfig::default();
        let x = pcm(len as u64, len);
        let seq = featurize(&x, &cfg).unwrap();
        prop_assert_eq!(seq.dim(), 345);
        prop_assert_eq!(seq.frames(), cfg.mel_frame_count(len).div_ceil(10));
        prop_assert_eq!(&featurize(&x, &cfg).unwrap().data, &seq.data);
    }

    #[test]
    fn streaming_features_match_batch(len in 200usize..4000, cuts in prop::collection::vec(1usize..700, 1..12)) {
        let cfg = FeatureConfig::default();
        let x = pcm(7, len);
        let mut s = StreamingFeaturizer::new(&cfg).unwrap();
        let mut frames = Vec::new();
        let mut pos = 0;
        for c in cuts.iter().cycle() {
            if pos >= len {
                break;
            }
            let end = (pos + c).min(len);
            frames.extend(s.push(&x[pos..end]));
            pos = end;
        }
        frames.extend(s.flush());
        let batch = featurize(&x, &cfg).unwrap();
        prop_assert_eq!(frames.len(), batch.frames());
        for (t, f) in frames.iter().enumerate() {
            prop_assert_eq!(f.as_slice(), batch.data.row(t));
        }
    }

    #[test]
    fn posteriors_strictly_inside_unit_interval(seed in any::<u64>(), s in 1usize..5, t in 1usize..30, scale in 0.1f32..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_matrix(&mut rng, s, 8, scale);
        let e = FrameEmbeddings { data: rand_matrix(&mut rng, t, 8, scale) };
        let p = speaker_posteriors(&a, &e);
        prop_assert_eq!(p.data.shape(), (s, t));
        prop_assert!(p.data.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn stop_rule_invariant(probs in prop::collection::vec(0.0f32..1.0, 1..10), max in 1usize..5, th in 0.05f32..0.95) {
        let mut it = probs.iter().cycle();
        let set = collect_attractors(3, max, th, || (vec![0.0; 3], *it.next().unwrap()));
        let n = set.count();
        prop_assert!(n <= max);
        prop_assert_eq!(set.existence.len(), n + 1);
        prop_assert!(set.existence[..n].iter().all(|&p| p >= th));
        prop_assert!(set.existence[n] < th || n == max);
    }

    #[test]
    fn attention_with_equal_values_returns_value(seed in any::<u64>(), tq in 1usize..8, tk in 1usize..8, la in prop::option::of(0usize..4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = rand_matrix(&mut rng, tq, 8, 3.0);
        let k = rand_matrix(&mut rng, tk, 8, 3.0);
        let row: Vec<f32> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v = Matrix::from_rows(&vec![row.clone(); tk], 8);
        let out = scaled_dot_attention(&q, &k, &v, 2, la);
        for r in out.iter_rows() {
            for (x, y) in r.iter().zip(&row) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn assignment_rows_sum_to_one(seed in any::<u64>(), s in 1usize..5, c in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = rand_matrix(&mut rng, c, 8, 2.0);
        let h0: Vec<f32> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = rand_matrix(&mut rng, s, 8, 2.0);
        let p = assignment_probs(&h, &h0, &a);
        prop_assert_eq!(p.p.len(), s);
        for row in &p.p {
            prop_assert_eq!(row.len(), c + 1);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn pit_matches_exhaustive_up_to_five(seed in any::<u64>(), s in 1usize..=5, t in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hyp: Vec<Vec<f64>> = (0..s).map(|_| (0..t).map(|_| rng.random()).collect()).collect();
        let r: Vec<Vec<f64>> = (0..s).map(|_| (0..t).map(|_| rng.random_range(0..2) as f64).collect()).collect();
        let (loss, perm) = pit_diarization_loss(&hyp, &r).unwrap();
        let cost: Vec<Vec<f64>> = hyp
            .iter()
            .map(|h| r.iter().map(|y| h.iter().zip(y).map(|(&p, &y)| bce(p, y)).sum()).collect())
            .collect();
        let best = permutations(s)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / (s * t) as f64)
            .fold(f64::INFINITY, f64::min);
        prop_assert_eq!(loss, best);
        let mut sorted = perm.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..s).collect::<Vec<_>>());
    }

    #[test]
    fn losses_nonnegative_and_finite(seed in any::<u64>(), s in 1usize..4, t in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = |rng: &mut ChaCha8Rng| -> f64 { [0.0, 1.0, rng.random()][rng.random_range(0..3)] };
        let out = EendEdaOutput {
            existence: (0..=s).map(|_| pick(&mut rng)).collect(),
            posteriors: (0..s).map(|_| (0..t).map(|_| pick(&mut rng)).collect()).collect(),
            reference: (0..s).map(|_| (0..t).map(|_| rng.random_range(0..2) as f64).collect()).collect(),
        };
        let chunk = eend_eda_loss_chunks(std::slice::from_ref(&out)).unwrap();
        let exist = existence_loss(&out.existence, s).unwrap();
        let probs = vec![out.posteriors.iter().map(|r| {
            let z: f64 = r.iter().sum::<f64>() + 1.0;
            r.iter().map(|v| v / z).chain(std::iter::once(1.0 / z)).collect::<Vec<f64>>()
        }).collect::<Vec<_>>()];
        let targets = vec![(0..s).map(|i| (0..=t).map(|j| if j == i % (t + 1) { 1.0 } else { 0.0 }).collect()).collect()];
        let ce = clustering_ce(&probs, &targets).unwrap();
        for v in [chunk, exist, ce] {
            prop_assert!(v.is_finite() && v >= 0.0);
        }
    }

    #[test]
    fn der_order_and_label_invariance(seed in any::<u64>(), nr in 1usize..4, nh in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = segments(&mut rng, "r", nr);
        let h = segments(&mut rng, "h", nh);
        let base = der(&r, &h, 0.25);
        prop_assume!(base.is_ok());
        let base = base.unwrap();

        let mut r2 = r.clone();
        r2.segments.reverse();
        let mut h2 = h.clone();
        let half = h2.segments.len() / 2;
        h2.segments.rotate_left(half);
        let reordered = der(&r2, &h2, 0.25).unwrap();
        prop_assert!((reordered.der - base.der).abs() < 1e-9);

        let rename = |l: &SegmentList, tag: &str| SegmentList::new(
            l.segments.iter().map(|s| Segment { speaker: format!("{tag}{}", s.speaker.len() * 7 + s.speaker.bytes().last().unwrap() as usize), ..s.clone() }).collect()
        );
        let renamed = der(&rename(&r, "x"), &rename(&h, "y"), 0.25).unwrap();
        prop_assert!((renamed.der - base.der).abs() < 1e-9);
    }

    #[test]
    fn larger_collar_never_adds_scored_speech(seed in any::<u64>(), c1 in 0.0f64..0.5, c2 in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = segments(&mut rng, "r", 2);
        let h = segments(&mut rng, "h", 2);
        let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        let small = der(&r, &h, lo);
        let large = der(&r, &h, hi);
        if let (Ok(s), Ok(l)) = (small, large) {
            prop_assert!(l.scored_speech <= s.scored_speech + 1e-9);
            for v in [l.miss, l.false_alarm, l.confusion] {
                prop_assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn weight_round_trip(seed in any::<u64>(), d in 1usize..4, layers in 1usize..3) {
        let cfg = ModelConfig {
            input_dim: 5,
            d_model: 4 * d,
            n_heads: 2,
            n_encoder_layers: layers,
            ff_dim: 8,
            ..ModelConfig::default()
        };
        let b = random_weights(&cfg, seed).unwrap();
        let mut bytes = Vec::new();
        save_weights(&b, &mut bytes).unwrap();
        let back = load_weights(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn session_split_invariance(cuts in prop::collection::vec(1usize..5000, 1..8), seconds in 2.0f64..9.0) {
        let (model, cfg) = tiny_stream();
        let x = pcm(99, (seconds * 8000.0) as usize);
        let whole = {
            let mut s = Session::new(model.clone(), cfg.clone()).unwrap();
            s.push_audio(&x).unwrap();
            s.finalize().unwrap();
            s
        };
        let mut split = Session::new(model, cfg).unwrap();
        let mut pos = 0;
        let mut last_c = 0;
        for c in cuts.iter().cycle() {
            if pos >= x.len() {
                break;
            }
            let end = (pos + c).min(x.len());
            split.push_audio(&x[pos..end]).unwrap();
            prop_assert!(split.bank().len() >= last_c);
            last_c = split.bank().len();
            pos = end;
        }
        split.finalize().unwrap();
        prop_assert_eq!(split.emitted(), whole.emitted());
        let expected = (x.len().saturating_sub(200) / 80 + 1).div_ceil(10);
        prop_assert_eq!(whole.emitted().frames(), expected);
        for w in whole.steps().windows(2) {
            prop_assert!(w[1].centroids_before >= w[0].centroids_before);
        }
    }
}
