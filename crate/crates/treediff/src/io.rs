//! JSON-lines files for graphs, search traces and trajectory stores.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use treediff_core::dual::{Trajectory, TrajectoryStore};

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        let mut w = BufWriter::new(file);
        for item in items {
            serde_json::to_writer(&mut w, &item)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    steps: usize,
    trajectories: usize,
}

/// One header line, then one trajectory per line.
pub fn save_trajectories(path: &Path, store: &TrajectoryStore) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        let header = StoreHeader {
            steps: store.steps,
            trajectories: store.trajectories.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for tr in &store.trajectories {
            serde_json::to_writer(&mut w, tr)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_trajectories(path: &Path) -> Result<TrajectoryStore> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let Some(first) = lines.next() else {
        bail!("{} is empty", path.display());
    };
    let header: StoreHeader = serde_json::from_str(&first?)?;
    let mut trajectories = Vec::with_capacity(header.trajectories);
    for line in lines {
        let tr: Trajectory = serde_json::from_str(&line?)?;
        trajectories.push(tr);
    }
    if trajectories.len() != header.trajectories {
        bail!(
            "{}: header announces {} trajectories, found {}",
            path.display(),
            header.trajectories,
            trajectories.len()
        );
    }
    let store = TrajectoryStore {
        steps: header.steps,
        trajectories,
    };
    store.validate()?;
    Ok(store)
}
