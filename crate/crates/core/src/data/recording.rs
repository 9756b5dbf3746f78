use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Continuous triaxial accelerometer stream from one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub subject: String,
    pub sample_rate_hz: f64,
    pub samples: Vec<[f64; 3]>,
    pub labels: Option<Vec<usize>>,
}

impl Recording {
    pub fn new(subject: &str, sample_rate_hz: f64, samples: Vec<[f64; 3]>, labels: Option<Vec<usize>>) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(Error::Data(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(Error::Data(format!(
                    "subject {subject}: {} labels for {} samples",
                    l.len(),
                    samples.len()
                )));
            }
        }
        Ok(Recording {
            subject: subject.to_string(),
            sample_rate_hz,
            samples,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Timestamps above this magnitude are taken to be integer milliseconds.
const MILLIS_THRESHOLD: f64 = 1e6;

const REQUIRED: [&str; 5] = ["subject", "timestamp", "ax", "ay", "az"];

struct Rows {
    times: Vec<f64>,
    samples: Vec<[f64; 3]>,
    labels: Vec<usize>,
}

/// Reads `subject,timestamp,ax,ay,az[,label]` into one recording per
/// subject, ordered by subject id. The sample rate is the reciprocal of the
/// median timestamp spacing, rounded to a micro-hertz so that timestamps
/// written in seconds give back the exact rate.
pub fn load_csv(path: &Path) -> Result<Vec<Recording>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(REQUIRED) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}` in {}", path.display())))?;
    }
    let label_col = headers.iter().position(|h| h == "label");

    let mut by_subject: BTreeMap<String, Rows> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let row = i + 2;
        let record = record.map_err(csv_error)?;
        let field = |col: usize, name: &'static str| -> Result<&str> {
            record.get(col).ok_or_else(|| Error::Parse {
                row,
                field: name,
                value: String::new(),
            })
        };
        let num = |col: usize, name: &'static str| -> Result<f64> {
            let raw = field(col, name)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    field: name,
                    value: raw.to_string(),
                })
        };
        let subject = field(cols[0], "subject")?.to_string();
        let t = num(cols[1], "timestamp")?;
        let sample = [num(cols[2], "ax")?, num(cols[3], "ay")?, num(cols[4], "az")?];
        let entry = by_subject.entry(subject.clone()).or_insert_with(|| Rows {
            times: Vec::new(),
            samples: Vec::new(),
            labels: Vec::new(),
        });
        if entry.times.last().is_some_and(|&prev| t <= prev) {
            return Err(Error::Ordering { subject, row });
        }
        entry.times.push(t);
        entry.samples.push(sample);
        if let Some(c) = label_col {
            let raw = field(c, "label")?;
            let label = raw.parse::<usize>().map_err(|_| Error::Parse {
                row,
                field: "label",
                value: raw.to_string(),
            })?;
            entry.labels.push(label);
        }
    }
    if by_subject.is_empty() {
        return Err(Error::EmptyData(format!("no rows in {}", path.display())));
    }

    let millis = by_subject
        .values()
        .flat_map(|r| r.times.iter())
        .any(|t| t.abs() > MILLIS_THRESHOLD);
    let unit = if millis { 1e-3 } else { 1.0 };

    by_subject
        .into_iter()
        .map(|(subject, rows)| {
            let rate = infer_rate(&rows.times, unit)
                .ok_or_else(|| Error::Data(format!("subject {subject}: need at least two samples to infer a rate")))?;
            let labels = label_col.map(|_| rows.labels);
            Recording::new(&subject, rate, rows.samples, labels)
        })
        .collect()
}

fn infer_rate(times: &[f64], unit: f64) -> Option<f64> {
    let mut deltas: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]) * unit).collect();
    if deltas.is_empty() {
        return None;
    }
    deltas.sort_by(f64::total_cmp);
    let n = deltas.len();
    let median = if n % 2 == 1 {
        deltas[n / 2]
    } else {
        0.5 * (deltas[n / 2 - 1] + deltas[n / 2])
    };
    Some((1e6 / median).round() / 1e6)
}

/// Writes recordings in the layout [`load_csv`] reads, with timestamps in
/// seconds from the start of each recording. Samples round-trip exactly.
pub fn write_csv(recs: &[Recording], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let labelled = recs.iter().all(|r| r.labels.is_some());
    let mut header = REQUIRED.to_vec();
    if labelled {
        header.push("label");
    }
    w.write_record(&header).map_err(csv_error)?;
    for rec in recs {
        for (i, s) in rec.samples.iter().enumerate() {
            let mut row = vec![
                rec.subject.clone(),
                (i as f64 / rec.sample_rate_hz).to_string(),
                s[0].to_string(),
                s[1].to_string(),
                s[2].to_string(),
            ];
            if let (true, Some(l)) = (labelled, &rec.labels) {
                row.push(l[i].to_string());
            }
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Relative deviation from an integer decimation factor that is still
/// accepted.
pub const RATIO_TOLERANCE: f64 = 0.01;

/// Keeps every `round(rate / target)`-th sample. No anti-alias filter.
pub fn downsample(rec: &Recording, target_hz: f64) -> Result<Recording> {
    let ratio = rec.sample_rate_hz / target_hz;
    let stride = ratio.round();
    if !(target_hz > 0.0) || stride < 1.0 || (ratio - stride).abs() / stride > RATIO_TOLERANCE {
        return Err(Error::ResampleRatio {
            from: rec.sample_rate_hz,
            to: target_hz,
        });
    }
    let stride = stride as usize;
    let samples = rec.samples.iter().step_by(stride).copied().collect();
    let labels = rec.labels.as_ref().map(|l| l.iter().step_by(stride).copied().collect());
    Recording::new(&rec.subject, rec.sample_rate_hz / stride as f64, samples, labels)
}
