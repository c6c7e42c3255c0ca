use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nrsed::audio::{mel_spectrogram, AnalysisConfig, Waveform};
use nrsed::events::{frames_to_events, Timeline};
use nrsed::experiment::{calibrate_clean, generate_scenes, World};
use nrsed::metrics::{linspace, psds, PsdsParams};
use nrsed::model::{sed_infer, CalibrationParams, Pooling, SedModelHandle};
use nrsed::par::{self, Execution};
use nrsed::synth::SceneDraw;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

struct Setup {
    clips: Vec<(Waveform, Timeline)>,
    model: SedModelHandle,
    analysis: AnalysisConfig,
}

fn setup() -> Setup {
    let world = World::fixture();
    let analysis = AnalysisConfig::default();
    let cal = generate_scenes("cal", 24, &world, &SceneDraw::default(), 16_000, 1);
    let sed = calibrate_clean(&world, &cal, &analysis, &CalibrationParams::default(), Execution::Parallel).unwrap();
    let model = SedModelHandle { pooling: Pooling::ClipHead, ..SedModelHandle::reference(world.targets(), sed).unwrap() };
    let test = generate_scenes("test", 32, &world, &SceneDraw::default(), 16_000, 2);
    let clips = test.scenes.iter().map(|e| e.render(&world.prototypes).unwrap()).collect();
    Setup { clips, model, analysis }
}

fn inference(c: &mut Criterion, s: &Setup) {
    let mut g = c.benchmark_group("mel_and_sed");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                par::map(exec, &s.clips, |(w, t)| {
                    let x = mel_spectrogram(w, &s.analysis).unwrap();
                    sed_infer(&s.model, &x, &t.clip_id, t.clip_duration).unwrap()
                })
            })
        });
    }
    g.finish();
}

fn scoring(c: &mut Criterion, s: &Setup) {
    let names = s.model.class_names.clone();
    let grids: Vec<_> = s
        .clips
        .iter()
        .map(|(w, t)| sed_infer(&s.model, &mel_spectrogram(w, &s.analysis).unwrap(), &t.clip_id, t.clip_duration).unwrap().0)
        .collect();
    let refs: Vec<Timeline> = s.clips.iter().map(|(_, t)| t.normalized()).collect();
    let sweep: Vec<(f64, Vec<Timeline>)> = linspace(0.01, 0.99, 50)
        .into_iter()
        .map(|th| (th, grids.iter().map(|g| frames_to_events(g, &names, th, 7).unwrap()).collect()))
        .collect();
    let params = PsdsParams::scenario1();
    let mut g = c.benchmark_group("psds");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| b.iter(|| black_box(psds(&sweep, &refs, &names, &params, exec).unwrap().value)));
    }
    g.finish();
}

fn benches(c: &mut Criterion) {
    let s = setup();
    inference(c, &s);
    scoring(c, &s);
}

criterion_group!(throughput, benches);
criterion_main!(throughput);
