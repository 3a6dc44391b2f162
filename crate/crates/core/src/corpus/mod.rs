//! Synthetic tone-complex corpora, WAV input and output, and CSV manifests.

mod manifest;
mod synth;
mod wav;

pub use manifest::{export_corpus, load_manifest, write_manifest, Manifest, ManifestRecord};
pub use synth::{
    apportion, generate_synthetic_corpus, synthesize_clip, ClassRecipe, SynthCorpus, SynthSpec,
    EMOTIONS, EMOTION_PROPORTIONS,
};
pub use wav::{read_wav, write_wav};

use crate::dataset::Dataset;
use crate::dsp::{AudioClip, DspConfig, Frontend};
use crate::error::Result;

/// Spectrograms of `clips` under one frontend.
pub fn extract_dataset(
    clips: &[AudioClip],
    labels: &[usize],
    class_names: &[String],
    frontend: Frontend,
    dsp: &DspConfig,
) -> Result<Dataset> {
    let specs = clips
        .iter()
        .map(|c| frontend.extract(c, dsp))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(specs, labels.to_vec(), class_names.to_vec())
}

impl SynthCorpus {
    pub fn to_dataset(&self, frontend: Frontend, dsp: &DspConfig) -> Result<Dataset> {
        extract_dataset(&self.clips, &self.labels, &self.class_names, frontend, dsp)
    }
}

impl Manifest {
    /// Reads the clips of `indices` and extracts their spectrograms.
    pub fn to_dataset(
        &self,
        indices: &[usize],
        frontend: Frontend,
        dsp: &DspConfig,
    ) -> Result<Dataset> {
        let specs = indices
            .iter()
            .map(|&i| frontend.extract(&self.load_clip(i)?, dsp))
            .collect::<Result<Vec<_>>>()?;
        let labels = indices.iter().map(|&i| self.records[i].label).collect();
        Dataset::new(specs, labels, self.class_names.clone())
    }
}
