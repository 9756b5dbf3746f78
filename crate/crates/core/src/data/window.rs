use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::recording::Recording;
use crate::engine::Tensor;
use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel normalisation statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

/// Fixed-length windows stored channel-major: window `i` occupies
/// `values[i·3·W .. (i+1)·3·W]` laid out as `[3, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub window_len: usize,
    pub sample_rate_hz: f64,
    pub values: Vec<f64>,
    pub labels: Option<Vec<usize>>,
    pub subjects: Vec<String>,
    pub stats: Option<ZScore>,
}

impl WindowedDataset {
    pub fn empty(window_len: usize, sample_rate_hz: f64, labelled: bool) -> Self {
        WindowedDataset {
            window_len,
            sample_rate_hz,
            values: Vec::new(),
            labels: labelled.then(Vec::new),
            subjects: Vec::new(),
            stats: None,
        }
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    fn stride(&self) -> usize {
        CHANNELS * self.window_len
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.values[i * s..(i + 1) * s]
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Label("dataset has no labels".into()))
    }

    /// Number of classes implied by the largest label.
    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.labels()?.iter().max().map_or(0, |&m| m + 1))
    }

    /// Distinct subject ids in sorted order.
    pub fn subject_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.subjects.clone();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Windows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> WindowedDataset {
        let mut values = Vec::with_capacity(indices.len() * self.stride());
        for &i in indices {
            values.extend_from_slice(self.window(i));
        }
        WindowedDataset {
            window_len: self.window_len,
            sample_rate_hz: self.sample_rate_hz,
            values,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            stats: self.stats,
        }
    }

    /// Windows whose subject is in `subjects`, original order kept.
    pub fn select_subjects(&self, subjects: &[String]) -> WindowedDataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| subjects.contains(&self.subjects[i])).collect();
        self.subset(&idx)
    }

    /// Appends `other`; window length and labelling must agree.
    pub fn extend(&mut self, other: &WindowedDataset) -> Result<()> {
        if other.window_len != self.window_len || other.labels.is_some() != self.labels.is_some() {
            return Err(Error::Data("cannot concatenate datasets with different layouts".into()));
        }
        self.values.extend_from_slice(&other.values);
        if let (Some(a), Some(b)) = (&mut self.labels, &other.labels) {
            a.extend_from_slice(b);
        }
        self.subjects.extend(other.subjects.iter().cloned());
        Ok(())
    }

    /// `[indices.len(), 3, W]` input tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let mut values = Vec::with_capacity(indices.len() * self.stride());
        for &i in indices {
            values.extend_from_slice(self.window(i));
        }
        Tensor::new(&[indices.len(), CHANNELS, self.window_len], values)
    }
}

/// Number of samples in a window of `window_s` seconds.
pub fn window_samples(window_s: f64, rate_hz: f64) -> usize {
    (window_s * rate_hz).round() as usize
}

/// Label of a window: majority vote, ties going to the tied label that
/// occurs last in the window.
pub fn window_label(labels: &[usize]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    labels
        .iter()
        .rev()
        .find(|l| counts[l] == best)
        .copied()
        .unwrap_or(0)
}

/// Cuts a recording into windows of `window_s` seconds with fractional
/// `overlap`; the trailing partial window is dropped.
pub fn make_windows(rec: &Recording, window_s: f64, overlap: f64) -> Result<WindowedDataset> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Data(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    let w = window_samples(window_s, rec.sample_rate_hz);
    if w == 0 {
        return Err(Error::Data(format!("window of {window_s} s at {} Hz is empty", rec.sample_rate_hz)));
    }
    let hop = ((w as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let mut ds = WindowedDataset::empty(w, rec.sample_rate_hz, rec.labels.is_some());
    let mut start = 0;
    while start + w <= rec.len() {
        for c in 0..CHANNELS {
            ds.values.extend(rec.samples[start..start + w].iter().map(|s| s[c]));
        }
        if let (Some(out), Some(l)) = (&mut ds.labels, &rec.labels) {
            out.push(window_label(&l[start..start + w]));
        }
        ds.subjects.push(rec.subject.clone());
        start += hop;
    }
    Ok(ds)
}

/// Windows of every recording, concatenated in subject-id order.
pub fn window_all(recs: &[Recording], window_s: f64, overlap: f64) -> Result<WindowedDataset> {
    let mut sorted: Vec<&Recording> = recs.iter().collect();
    sorted.sort_by(|a, b| a.subject.cmp(&b.subject));
    let first = sorted.first().ok_or_else(|| Error::EmptyData("no recordings".into()))?;
    let rate = first.sample_rate_hz;
    let mut out = WindowedDataset::empty(window_samples(window_s, rate), rate, first.labels.is_some());
    for rec in sorted {
        if rec.sample_rate_hz != rate {
            return Err(Error::Data(format!(
                "subject {} is sampled at {} Hz, expected {rate} Hz",
                rec.subject, rec.sample_rate_hz
            )));
        }
        out.extend(&make_windows(rec, window_s, overlap)?)?;
    }
    Ok(out)
}

pub fn zscore_fit(train: &WindowedDataset) -> Result<ZScore> {
    if train.is_empty() {
        return Err(Error::EmptyData("cannot fit normalisation on an empty dataset".into()));
    }
    let w = train.window_len;
    let n = (train.len() * w) as f64;
    let mut mean = [0.0; CHANNELS];
    let mut std = [0.0; CHANNELS];
    for c in 0..CHANNELS {
        let channel = || (0..train.len()).flat_map(move |i| &train.window(i)[c * w..(c + 1) * w]);
        let m = channel().sum::<f64>() / n;
        let var = channel().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean[c] = m;
        std[c] = var.sqrt().max(STD_FLOOR);
    }
    Ok(ZScore { mean, std })
}

pub fn zscore_apply(ds: &WindowedDataset, stats: &ZScore) -> WindowedDataset {
    let w = ds.window_len;
    let mut out = ds.clone();
    for (j, v) in out.values.iter_mut().enumerate() {
        let c = (j / w) % CHANNELS;
        *v = (*v - stats.mean[c]) / stats.std[c];
    }
    out.stats = Some(*stats);
    out
}

const CACHE_MAGIC: &[u8; 8] = b"CPCWINDS";
const CACHE_VERSION: u32 = 1;

impl WindowedDataset {
    /// Binary cache: magic, version, counts, optional stats, f64 payload,
    /// labels and subject ids, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.values.len() * 8);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
        out.extend_from_slice(&(self.window_len as u64).to_le_bytes());
        out.extend_from_slice(&self.sample_rate_hz.to_le_bytes());
        out.push(self.labels.is_some() as u8);
        out.push(self.stats.is_some() as u8);
        if let Some(s) = &self.stats {
            for v in s.mean.iter().chain(&s.std) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(l) = &self.labels {
            for &v in l {
                out.extend_from_slice(&(v as u64).to_le_bytes());
            }
        }
        for s in &self.subjects {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        take(&mut r, &mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("not a window cache".into()));
        }
        let version = u32::from_le_bytes(take_array(&mut r)?);
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("unsupported window cache version {version}")));
        }
        let n = u64::from_le_bytes(take_array(&mut r)?) as usize;
        let channels = u32::from_le_bytes(take_array(&mut r)?) as usize;
        if channels != CHANNELS {
            return Err(Error::Format(format!("expected {CHANNELS} channels, found {channels}")));
        }
        let window_len = u64::from_le_bytes(take_array(&mut r)?) as usize;
        let sample_rate_hz = f64::from_le_bytes(take_array(&mut r)?);
        let [has_labels, has_stats] = take_array(&mut r)?;
        let stats = if has_stats == 1 {
            let mut v = [0.0; 6];
            for x in &mut v {
                *x = f64::from_le_bytes(take_array(&mut r)?);
            }
            Some(ZScore {
                mean: [v[0], v[1], v[2]],
                std: [v[3], v[4], v[5]],
            })
        } else {
            None
        };
        let count = n
            .checked_mul(CHANNELS * window_len)
            .filter(|&c| c.saturating_mul(8) <= r.len())
            .ok_or_else(|| Error::Format("truncated window cache".into()))?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f64::from_le_bytes(take_array(&mut r)?));
        }
        let labels = if has_labels == 1 {
            Some((0..n).map(|_| take_array(&mut r).map(|b| u64::from_le_bytes(b) as usize)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        let mut subjects = Vec::with_capacity(n);
        for _ in 0..n {
            let len = u32::from_le_bytes(take_array(&mut r)?) as usize;
            if r.len() < len {
                return Err(Error::Format("truncated window cache".into()));
            }
            let (s, rest) = r.split_at(len);
            subjects.push(String::from_utf8(s.to_vec()).map_err(|e| Error::Format(e.to_string()))?);
            r = rest;
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in window cache", r.len())));
        }
        Ok(WindowedDataset {
            window_len,
            sample_rate_hz,
            values,
            labels,
            subjects,
            stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn take(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format("truncated window cache".into()))
}

fn take_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    take(r, &mut b)?;
    Ok(b)
}
