use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use basen_core::eeg::{preprocess, MuaConfig};
use basen_core::signal::matrix::{read_matrix, write_matrix};
use basen_core::signal::wav::{read_wav, write_wav};
use basen_core::train::{example_id, synthetic_scenes, Example, SyntheticTaskConfig, SPLITS};

pub const MANIFEST: &str = "manifest.tsv";
const HEADER: &str = "id\tmixture\teeg\ttarget\tinterferer\tattended";

/// One manifest line; paths are relative to the dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub id: String,
    pub mixture: PathBuf,
    pub eeg: PathBuf,
    pub target: PathBuf,
    pub interferer: PathBuf,
    pub attended: usize,
}

impl Entry {
    fn for_id(split: &str, id: &str, attended: usize) -> Self {
        let file = |suffix: &str| Path::new(split).join(format!("{id}-{suffix}"));
        Self {
            id: id.to_owned(),
            mixture: file("mixture.wav"),
            eeg: file("eeg.mat"),
            target: file("target.wav"),
            interferer: file("interferer.wav"),
            attended,
        }
    }

    pub fn split(&self) -> &str {
        self.id.split_once('-').map_or("", |(s, _)| s)
    }

    fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.id,
            self.mixture.display(),
            self.eeg.display(),
            self.target.display(),
            self.interferer.display(),
            self.attended
        )
    }
}

/// Generates every split and writes WAVs, raw EEG containers and the manifest.
pub fn write_synthetic(out: &Path, task: &SyntheticTaskConfig, seed: u64) -> Result<Vec<Entry>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut entries = Vec::new();
    for (split, n) in SPLITS.iter().zip([task.n_train, task.n_val, task.n_test]) {
        if n == 0 {
            continue;
        }
        fs::create_dir_all(out.join(split)).with_context(|| format!("creating {}", out.join(split).display()))?;
        for (i, scene) in synthetic_scenes(task, seed, split, n)?.into_iter().enumerate() {
            let entry = Entry::for_id(split, &example_id(split, i), scene.attended);
            write_wav(out.join(&entry.mixture), &scene.mixture)?;
            write_wav(out.join(&entry.target), &scene.target)?;
            write_wav(out.join(&entry.interferer), &scene.interferer)?;
            write_matrix(out.join(&entry.eeg), &scene.eeg)?;
            entries.push(entry);
        }
        log::info!("{split}: {n} scenes");
    }
    let mut text = String::from(HEADER);
    text.push('\n');
    for e in &entries {
        text.push_str(&e.line());
        text.push('\n');
    }
    let path = out.join(MANIFEST);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<Entry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => bail!("{}: missing header {HEADER:?}", path.display()),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 6 {
                bail!("{}:{}: expected 6 fields, found {}", path.display(), n + 1, f.len());
            }
            Ok(Entry {
                id: f[0].to_owned(),
                mixture: f[1].into(),
                eeg: f[2].into(),
                target: f[3].into(),
                interferer: f[4].into(),
                attended: f[5]
                    .parse()
                    .with_context(|| format!("{}:{}: bad attended label", path.display(), n + 1))?,
            })
        })
        .collect()
}

/// Loads one split. EEG is run through the MUA front end unless
/// `preprocessed` is set.
pub fn load_split(dir: &Path, split: &str, mua: &MuaConfig, preprocessed: bool) -> Result<Vec<Example>> {
    read_manifest(dir)?
        .into_iter()
        .filter(|e| e.split() == split)
        .map(|e| {
            let raw = read_matrix(dir.join(&e.eeg))?;
            Ok(Example {
                eeg: if preprocessed { raw } else { preprocess(&raw, mua)? },
                mixture: read_wav(dir.join(&e.mixture))?,
                target: read_wav(dir.join(&e.target))?,
                interferer: read_wav(dir.join(&e.interferer))?,
                attended: e.attended,
                id: e.id,
            })
        })
        .collect::<Result<_>>()
        .with_context(|| format!("loading split {split:?} of {}", dir.display()))
}
