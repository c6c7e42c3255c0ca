//! The built-in fixture world: ten domestic target classes, thirty noise
//! candidates in ten similarity groups, and one acoustic prototype per class.
//!
//! Each similarity group owns a disjoint slice of the mel axis between
//! 150 Hz and 7 kHz. The target class sits in the middle of its slice and the
//! three noise classes of the group overlap it from below, above and across.

use std::collections::BTreeMap;

use super::{EventPrototype, SynthKind};
use crate::audio::{hz_to_mel, mel_to_hz};
use crate::events::{ClassInfo, ClassOntology};

pub const ENV_HOUSEHOLD: &str = "household";
pub const ENV_OUTDOOR: &str = "outdoor";

struct GroupDef {
    group: &'static str,
    target: (&'static str, SynthKind),
    noise: [(&'static str, &'static [&'static str], SynthKind); 3],
}

const H: &[&str] = &[ENV_HOUSEHOLD];
const O: &[&str] = &[ENV_OUTDOOR];
const HO: &[&str] = &[ENV_HOUSEHOLD, ENV_OUTDOOR];

const GROUPS: [GroupDef; 10] = [
    GroupDef {
        group: "rumble",
        target: ("vacuum_cleaner", SynthKind::BandNoise),
        noise: [
            ("fan", H, SynthKind::BandNoise),
            ("air_conditioner", H, SynthKind::ToneCluster),
            ("traffic", O, SynthKind::BandNoise),
        ],
    },
    GroupDef {
        group: "motor",
        target: ("blender", SynthKind::ToneCluster),
        noise: [
            ("hair_dryer", H, SynthKind::BandNoise),
            ("drill", HO, SynthKind::ToneCluster),
            ("engine", O, SynthKind::BandNoise),
        ],
    },
    GroupDef {
        group: "voice",
        target: ("speech", SynthKind::ToneCluster),
        noise: [
            ("conversation", H, SynthKind::ToneCluster),
            ("television", H, SynthKind::BandNoise),
            ("crowd", O, SynthKind::BandNoise),
        ],
    },
    GroupDef {
        group: "canine",
        target: ("dog", SynthKind::Chirp),
        noise: [
            ("wild_animals", O, SynthKind::Chirp),
            ("livestock", O, SynthKind::BandNoise),
            ("bird_song", HO, SynthKind::Chirp),
        ],
    },
    GroupDef {
        group: "water",
        target: ("running_water", SynthKind::BandNoise),
        noise: [
            ("toilet_flush", H, SynthKind::BandNoise),
            ("shower", H, SynthKind::ToneCluster),
            ("stream", O, SynthKind::BandNoise),
        ],
    },
    GroupDef {
        group: "feline",
        target: ("cat", SynthKind::Chirp),
        noise: [
            ("baby_cry", H, SynthKind::Chirp),
            ("squeaky_door", H, SynthKind::BandNoise),
            ("owl", O, SynthKind::Chirp),
        ],
    },
    GroupDef {
        group: "clatter",
        target: ("dishes", SynthKind::BandNoise),
        noise: [
            ("cutlery", H, SynthKind::ToneCluster),
            ("keys_jangling", H, SynthKind::BandNoise),
            ("construction", O, SynthKind::BandNoise),
        ],
    },
    GroupDef {
        group: "alarm",
        target: ("alarm_bell_ringing", SynthKind::Tone),
        noise: [
            ("telephone", H, SynthKind::ToneCluster),
            ("doorbell", H, SynthKind::Tone),
            ("siren", O, SynthKind::Chirp),
        ],
    },
    GroupDef {
        group: "sizzle",
        target: ("frying", SynthKind::BandNoise),
        noise: [
            ("rain", HO, SynthKind::BandNoise),
            ("applause", O, SynthKind::BandNoise),
            ("wind", O, SynthKind::BandNoise),
        ],
    },
    GroupDef {
        group: "buzz",
        target: ("electric_shaver_toothbrush", SynthKind::ToneCluster),
        noise: [
            ("buzzer", H, SynthKind::ToneCluster),
            ("refrigerator_hum", H, SynthKind::BandNoise),
            ("insect_buzz", O, SynthKind::Chirp),
        ],
    },
];

const SLICE_LO_HZ: f64 = 150.0;
const SLICE_HI_HZ: f64 = 7_000.0;

/// Fractions of the group slice (on the mel axis) occupied by the target and
/// its three noise companions.
const TARGET_SPAN: (f64, f64) = (0.25, 0.75);
const NOISE_SPANS: [(f64, f64); 3] = [(0.05, 0.45), (0.55, 0.95), (0.15, 0.85)];

fn span_hz(group: usize, span: (f64, f64)) -> (f64, f64) {
    let (lo, hi) = (hz_to_mel(SLICE_LO_HZ), hz_to_mel(SLICE_HI_HZ));
    let width = (hi - lo) / GROUPS.len() as f64;
    let base = lo + width * group as f64;
    (mel_to_hz(base + span.0 * width), mel_to_hz(base + span.1 * width))
}

/// Ten targets, thirty noise classes.
pub fn fixture_ontology() -> ClassOntology {
    let targets = GROUPS.iter().map(|g| ClassInfo::new(g.target.0, H, g.group)).collect();
    let noise = GROUPS
        .iter()
        .flat_map(|g| g.noise.iter().map(move |(n, tags, _)| ClassInfo::new(n, tags, g.group)))
        .collect();
    ClassOntology::new(targets, noise).expect("fixture ontology is well formed")
}

/// One prototype per class of [`fixture_ontology`].
pub fn fixture_prototypes() -> BTreeMap<String, EventPrototype> {
    let mut out = BTreeMap::new();
    for (gi, g) in GROUPS.iter().enumerate() {
        out.insert(
            g.target.0.to_string(),
            EventPrototype { class_name: g.target.0.to_string(), synth_kind: g.target.1, band: span_hz(gi, TARGET_SPAN), base_amplitude: 0.3 },
        );
        for (ni, (name, _, kind)) in g.noise.iter().enumerate() {
            out.insert(
                name.to_string(),
                EventPrototype { class_name: name.to_string(), synth_kind: *kind, band: span_hz(gi, NOISE_SPANS[ni]), base_amplitude: 0.3 },
            );
        }
    }
    out
}
