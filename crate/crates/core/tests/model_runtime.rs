mod common;

use approx::assert_abs_diff_eq;
use ndarray::Array2;
use proptest::prelude::*;

use nrsed::audio::{mel_spectrogram, AnalysisConfig, Waveform};
use nrsed::events::{weak_from_strong, ClipPrediction};
use nrsed::experiment::{add_test_noise, calibrate_clean, frame_targets, generate_scenes, World};
use nrsed::metrics::macro_recall;
use nrsed::model::{lass_separate, refine_reference_sed, sed_infer, CalibrationClip, CalibrationParams, LassModelHandle, Pooling, ReferenceLass, ReferenceSed, SedModelHandle};
use nrsed::par::Execution;
use nrsed::synth::{render_event, SceneDraw, SceneSetManifest};

use common::band_energy;

fn world() -> World {
    World::fixture()
}

fn calibrated(w: &World) -> ReferenceSed {
    let cal = generate_scenes("cal", 40, w, &SceneDraw::default(), 16_000, 11);
    calibrate_clean(w, &cal, &AnalysisConfig::default(), &CalibrationParams::default(), Execution::Parallel).unwrap()
}

fn handle(w: &World, m: ReferenceSed, pooling: Pooling) -> SedModelHandle {
    SedModelHandle { pooling, ..SedModelHandle::reference(w.targets(), m).unwrap() }
}

fn recall(m: &SedModelHandle, set: &SceneSetManifest, w: &World) -> f64 {
    let cfg = AnalysisConfig::default();
    let (mut preds, mut labels) = (Vec::new(), Vec::new());
    for e in &set.scenes {
        let (audio, t) = e.render(&w.prototypes).unwrap();
        let (_, clip) = sed_infer(m, &mel_spectrogram(&audio, &cfg).unwrap(), &t.clip_id, t.clip_duration).unwrap();
        preds.push(clip);
        labels.push(weak_from_strong(&t));
    }
    macro_recall(&preds, &labels, &w.targets(), 0.5).unwrap()
}

#[test]
fn clean_calibration_recalls_every_class_on_held_out_clean_scenes() {
    let w = world();
    let held = generate_scenes("held", 30, &w, &SceneDraw::default(), 16_000, 97);
    for pooling in [Pooling::Max, Pooling::ClipHead] {
        assert_eq!(recall(&handle(&w, calibrated(&w), pooling), &held, &w), 1.0, "{pooling:?}");
    }
}

#[test]
fn single_event_clip_argmax_is_its_class() {
    let w = world();
    let m = handle(&w, calibrated(&w), Pooling::Max);
    let cfg = AnalysisConfig::default();
    for (k, class) in w.targets().iter().enumerate() {
        let ev = render_event(&w.prototypes[class], 2.0, 16_000, 500 + k as u64).unwrap();
        let mut clip = Waveform::silence(16_000 * 4, 16_000);
        clip.add_at(&ev, 16_000).unwrap();
        let (_, p) = sed_infer(&m, &mel_spectrogram(&clip, &cfg).unwrap(), class, 4.0).unwrap();
        let best = (0..p.probs.len()).max_by(|&a, &b| p.probs[a].total_cmp(&p.probs[b])).unwrap();
        assert_eq!(&w.targets()[best], class, "{:?}", p.probs);
    }
}

#[test]
fn silent_clip_scores_at_most_a_tenth() {
    let w = world();
    let cfg = AnalysisConfig::default();
    let x = mel_spectrogram(&Waveform::silence(16_000 * 3, 16_000), &cfg).unwrap();
    for pooling in [Pooling::Max, Pooling::LinearSoftmax, Pooling::ClipHead] {
        let (_, p) = sed_infer(&handle(&w, calibrated(&w), pooling), &x, "silence", 3.0).unwrap();
        assert!(p.probs.iter().all(|&v| v <= 0.1), "{pooling:?}: {:?}", p.probs);
    }
}

/// The clean detector refined on -5 dB copies of its calibration scenes
/// (one freshly noised copy per epoch) against the clean detector, on a
/// separate 0 dB set.
#[test]
fn noise_refined_detector_beats_clean_detector_at_0db() {
    let w = world();
    let cfg = AnalysisConfig::default();
    let names = w.targets();
    let cal = generate_scenes("cal", 40, &w, &SceneDraw::default(), 16_000, 11);
    let epochs = 3;
    let copies: Vec<SceneSetManifest> = (0..epochs).map(|e| add_test_noise(&cal, &w, "household", -5.0, 12 + e as u64).unwrap()).collect();
    let held = generate_scenes("held", 30, &w, &SceneDraw::default(), 16_000, 97);
    let held0 = add_test_noise(&held, &w, "household", 0.0, 98).unwrap();
    let initial = calibrated(&w);
    let clip = |j: usize| -> nrsed::Result<CalibrationClip> {
        let (audio, t) = copies[j / cal.scenes.len()].scenes[j % cal.scenes.len()].render(&w.prototypes)?;
        let x = mel_spectrogram(&audio, &cfg)?;
        let y = frame_targets(&t, &names, x.n_frames(), &cfg)?;
        Ok((x, y))
    };
    let refined = refine_reference_sed(&initial, epochs, cal.scenes.len(), clip, &CalibrationParams::default(), 0.85, Execution::Parallel).unwrap();
    let clean = handle(&w, initial, Pooling::ClipHead);
    let noisy = handle(&w, refined, Pooling::ClipHead);
    let (r_clean, r_noisy) = (recall(&clean, &held0, &w), recall(&noisy, &held0, &w));
    eprintln!("0 dB macro recall: clean {r_clean:.4}, refined {r_noisy:.4}");
    assert!(r_noisy > r_clean, "{r_noisy} <= {r_clean}");
}

#[test]
fn separation_keeps_the_queried_band_of_a_two_band_mixture() {
    let w = world();
    let cfg = AnalysisConfig::default();
    let (c1, c2) = ("speech", "dog");
    let lass = LassModelHandle::ReferenceMask(ReferenceLass::from_prototypes(&w.targets(), &w.prototypes, &cfg, 60.0).unwrap());
    let a = render_event(&w.prototypes[c1], 2.0, 16_000, 1).unwrap();
    let b = render_event(&w.prototypes[c2], 2.0, 16_000, 2).unwrap();
    let mix = a.add(&b).unwrap();
    let out = lass_separate(&lass, &mix, c1, "mix").unwrap();
    assert_eq!(out.len(), mix.len());
    let band = |x: &Waveform, c: &str| {
        let (lo, hi) = w.prototypes[c].band;
        band_energy(x.samples(), 16_000, lo, hi)
    };
    assert!(band(&out, c1) >= 0.9 * band(&mix, c1), "kept {}", band(&out, c1) / band(&mix, c1));
    assert!(band(&out, c2) <= 0.1 * band(&mix, c2), "leaked {}", band(&out, c2) / band(&mix, c2));
}

#[test]
fn query_for_an_absent_class_returns_little_energy() {
    let w = world();
    let cfg = AnalysisConfig::default();
    let lass = LassModelHandle::ReferenceMask(ReferenceLass::from_prototypes(&w.targets(), &w.prototypes, &cfg, 60.0).unwrap());
    let clip = render_event(&w.prototypes["dog"], 2.0, 16_000, 3).unwrap();
    let energy = |x: &Waveform| x.samples().iter().map(|v| v * v).sum::<f64>();
    for other in w.targets().iter().filter(|c| *c != "dog") {
        let out = lass_separate(&lass, &clip, other, "c").unwrap();
        assert!(energy(&out) <= 0.05 * energy(&clip), "{other}: {}", energy(&out) / energy(&clip));
    }
    let silence = Waveform::silence(8_000, 16_000);
    assert!(lass_separate(&lass, &silence, "dog", "s").unwrap().samples().iter().all(|&v| v == 0.0));
    assert!(lass_separate(&lass, &clip, "not-a-class", "c").is_err());
}

#[test]
fn model_files_roundtrip_through_disk() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let m = handle(&w, calibrated(&w), Pooling::ClipHead);
    m.save(dir.path().join("sed.json")).unwrap();
    assert_eq!(SedModelHandle::load(dir.path().join("sed.json")).unwrap(), m);
    let lass = LassModelHandle::ReferenceMask(ReferenceLass::from_prototypes(&w.targets(), &w.prototypes, &AnalysisConfig::default(), 60.0).unwrap());
    lass.save(dir.path().join("lass.json")).unwrap();
    assert_eq!(LassModelHandle::load(dir.path().join("lass.json")).unwrap(), lass);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn max_pooling_equals_columnwise_max(t in 1usize..40, n in 1usize..12, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = nrsed::seed::rng(seed);
        let p = Array2::from_shape_fn((t, n), |_| rng.random::<f64>());
        let pooled = Pooling::Max.pool(&p);
        for c in 0..n {
            let m = (0..t).map(|i| p[[i, c]]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(pooled[c], m);
        }
    }

    #[test]
    fn linear_softmax_lies_between_mean_and_max(t in 1usize..40, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = nrsed::seed::rng(seed);
        let p = Array2::from_shape_fn((t, 1), |_| rng.random::<f64>());
        let v = Pooling::LinearSoftmax.pool(&p)[0];
        let mean = p.sum() / t as f64;
        let max = p.iter().copied().fold(0.0, f64::max);
        prop_assert!(v >= mean - 1e-12 && v <= max + 1e-12);
    }
}

#[test]
fn clip_predictions_are_probabilities() {
    let w = world();
    let m = handle(&w, calibrated(&w), Pooling::ClipHead);
    let held = generate_scenes("held", 5, &w, &SceneDraw::default(), 16_000, 5);
    let noisy = add_test_noise(&held, &w, "household", -5.0, 6).unwrap();
    for e in &noisy.scenes {
        let (audio, t) = e.render(&w.prototypes).unwrap();
        let (g, c): (_, ClipPrediction) = sed_infer(&m, &mel_spectrogram(&audio, &AnalysisConfig::default()).unwrap(), &t.clip_id, t.clip_duration).unwrap();
        assert!(g.probs.iter().chain(&c.probs).all(|v| (0.0..=1.0).contains(v)));
        assert_abs_diff_eq!(g.frame_hop_seconds, 256.0 / 16_000.0);
    }
}
