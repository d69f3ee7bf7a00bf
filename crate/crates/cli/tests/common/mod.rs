#![allow(dead_code)]

use std::path::{Path, PathBuf};

use soundmorph::audio::{save_wav, DatasetSplit};
use soundmorph::synthetic::synthetic_digit_split;

/// Ten synthetic digit classes, `train` + `test` clips each, written as WAVs
/// next to a manifest. Returns the manifest path and the split.
pub fn digit_fixture(dir: &Path, train: usize, test: usize) -> (PathBuf, DatasetSplit) {
    let mut split = synthetic_digit_split(10, train, test, 3);
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio).unwrap();
    for c in split.train.iter_mut().chain(split.test.iter_mut()) {
        c.source_id.push_str(".wav");
        save_wav(&c.clip, audio.join(&c.source_id)).unwrap();
    }
    split.source_root = Some(audio);
    let manifest = dir.join("manifest.csv");
    split.manifest().write(&manifest).unwrap();
    (manifest, split)
}

pub fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("soundmorph").chain(list.iter().copied()).map(String::from).collect()
}
