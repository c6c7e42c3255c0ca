use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{compose_scene, make_noisy_clip, NoiseEvent, Prototypes, SceneSpec};
use crate::audio::wav::{write_wav, WavFormat};
use crate::audio::Waveform;
use crate::error::Result;
use crate::events::tsv::write_strong_tsv;
use crate::events::Timeline;
use crate::par::{self, Execution};

/// Background noise added to a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub events: Vec<NoiseEvent>,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    #[serde(flatten)]
    pub scene: SceneSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

impl SceneEntry {
    /// Audio (noisy when a noise spec is present) and its strong labels.
    pub fn render(&self, protos: &Prototypes) -> Result<(Waveform, Timeline)> {
        let (clean, timeline) = compose_scene(&self.scene, protos)?;
        match &self.noise {
            Some(n) => Ok((make_noisy_clip(&clean, &n.events, n.snr_db, protos)?, timeline)),
            None => Ok((clean, timeline)),
        }
    }
}

/// A reproducible set of scenes (JSON on disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSetManifest {
    pub global_seed: u64,
    pub scenes: Vec<SceneEntry>,
}

impl SceneSetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn render_all(&self, protos: &Prototypes, exec: Execution) -> Result<Vec<(Waveform, Timeline)>> {
        par::try_map(exec, &self.scenes, |e| e.render(protos))
    }

    /// Writes `audio/<clip>.wav`, `metadata.tsv`, `durations.tsv` and
    /// `export_gains.tsv` (normalization applied to each WAV) under `dir`.
    pub fn emit(&self, protos: &Prototypes, dir: impl AsRef<Path>, exec: Execution) -> Result<()> {
        let dir = dir.as_ref();
        let audio_dir = dir.join("audio");
        fs::create_dir_all(&audio_dir)?;
        let rendered = par::try_map(exec, &self.scenes, |e| -> Result<(Timeline, f64)> {
            let (w, t) = e.render(protos)?;
            let gain = write_wav(audio_dir.join(format!("{}.wav", e.scene.clip_id)), &w, WavFormat::Float32)?;
            Ok((t, gain))
        })?;
        let timelines: Vec<Timeline> = rendered.iter().map(|(t, _)| t.clone()).collect();
        fs::write(dir.join("metadata.tsv"), write_strong_tsv(&timelines))?;
        let mut durations = String::from("filename\tduration\n");
        let mut gains = String::from("filename\tgain\n");
        for (t, g) in &rendered {
            let _ = writeln!(durations, "{}\t{:.3}", t.clip_id, t.clip_duration);
            let _ = writeln!(gains, "{}\t{g}", t.clip_id);
        }
        fs::write(dir.join("durations.tsv"), durations)?;
        fs::write(dir.join("export_gains.tsv"), gains)?;
        Ok(())
    }
}
