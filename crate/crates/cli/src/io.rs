use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context as _, Result};
use dlm_decode::{Error, NBestList, PosteriorLattice, Token};
use serde::{Deserialize, Serialize};

/// One line of a references file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefLine {
    pub utt_id: String,
    pub tokens: Vec<Token>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn read_lattices(path: &Path) -> Result<Vec<PosteriorLattice>> {
    let lats = PosteriorLattice::read_all(open(path)?).with_context(|| format!("in {}", path.display()))?;
    Ok(lats)
}

pub fn write_lattices<'a>(path: &Path, lats: impl IntoIterator<Item = &'a PosteriorLattice>) -> Result<()> {
    let mut w = create(path)?;
    for lat in lats {
        lat.write_to(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_nbest(path: &Path) -> Result<Vec<NBestList>> {
    let lists = NBestList::read_jsonl(open(path)?).with_context(|| format!("in {}", path.display()))?;
    Ok(lists)
}

pub fn write_nbest(path: &Path, lists: &[NBestList]) -> Result<()> {
    let mut w = create(path)?;
    NBestList::write_jsonl(lists, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_refs(path: &Path) -> Result<Vec<RefLine>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RefLine = serde_json::from_str(&line)
            .map_err(Error::from)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_refs(path: &Path, refs: &[RefLine]) -> Result<()> {
    let mut w = create(path)?;
    for r in refs {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Pairs every reference with the item of the same utterance id.
pub fn align_by_id<'a, T>(
    refs: &'a [RefLine],
    items: &'a [T],
    id: impl Fn(&T) -> &str,
    what: &str,
) -> Result<Vec<(&'a RefLine, &'a T)>> {
    let index: BTreeMap<&str, &T> = items.iter().map(|t| (id(t), t)).collect();
    refs.iter()
        .map(|r| {
            index
                .get(r.utt_id.as_str())
                .map(|t| (r, *t))
                .ok_or_else(|| Error::InvalidConfig(format!("no {what} for utterance {}", r.utt_id)).into())
        })
        .collect()
}
