//! Panel CSV interchange.
//!
//! A panel is stored as two files: a long-format visits file with columns
//! `id,time,y,<aux covariates...>` (plus optional `<baseline covariates...>`
//! repeated on each row), and a per-subject events file with columns
//! `id,dropout_time,censor_time,competing_time` where empty cells mean the
//! event did not occur. `tau` travels in the run configuration, not the CSV.
//!
//! Files written by this crate start with `#`-prefixed comment lines carrying
//! the config hash and master seed; the reader skips them.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Panel, PanelSchema, SubjectRecord};

/// Formats a float with 17 significant digits so values round-trip exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Key/value lines (config hash, seed) embedded as `#` comments at the top of
/// every file this crate writes.
#[derive(Debug, Clone, Default)]
pub struct FileStamp {
    pub entries: Vec<(String, String)>,
}

impl FileStamp {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Self {
            entries: vec![
                ("config_hash".into(), config_hash.to_string()),
                ("seed".into(), seed.to_string()),
            ],
        }
    }

    fn header(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("# {k}={v}\n"))
            .collect()
    }
}

/// Writes `content` to `path` atomically (write to a sibling temp file, then
/// rename), so an interrupted run never leaves a partially written file.
pub fn write_atomic(path: &Path, content: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp_path)?;
        f.write_all(content)?;
        f.sync_all()?;
    }
    fs::rename(&tmp_path, path)?;
    Ok(())
}

pub fn write_panel(panel: &Panel, visits_path: &Path, events_path: &Path, stamp: &FileStamp) -> Result<()> {
    let mut visits = String::new();
    visits.push_str(&stamp.header());
    visits.push_str("id,time,y");
    for name in &panel.schema.aux {
        visits.push(',');
        visits.push_str(name);
    }
    for name in &panel.schema.baseline {
        visits.push(',');
        visits.push_str(name);
    }
    visits.push('\n');
    for s in &panel.subjects {
        for (k, (&t, &y)) in s.visit_times.iter().zip(&s.outcomes).enumerate() {
            visits.push_str(&s.id);
            visits.push(',');
            visits.push_str(&fmt_f64(t));
            visits.push(',');
            visits.push_str(&fmt_f64(y));
            for j in 0..panel.schema.aux.len() {
                visits.push(',');
                visits.push_str(&fmt_f64(s.aux[k][j]));
            }
            for &b in &s.baseline {
                visits.push(',');
                visits.push_str(&fmt_f64(b));
            }
            visits.push('\n');
        }
    }
    write_atomic(visits_path, visits.as_bytes())?;

    let mut events = String::new();
    events.push_str(&stamp.header());
    events.push_str("id,dropout_time,censor_time,competing_time");
    for name in &panel.schema.baseline {
        events.push(',');
        events.push_str(name);
    }
    events.push('\n');
    let opt = |t: Option<f64>| t.map(fmt_f64).unwrap_or_default();
    for s in &panel.subjects {
        events.push_str(&s.id);
        events.push(',');
        events.push_str(&opt(s.dropout_time));
        events.push(',');
        events.push_str(&opt(s.censor_time));
        events.push(',');
        events.push_str(&opt(s.competing_time));
        for &b in &s.baseline {
            events.push(',');
            events.push_str(&fmt_f64(b));
        }
        events.push('\n');
    }
    write_atomic(events_path, events.as_bytes())
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(false)
        .from_path(path)?)
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Invalid(format!("cannot parse {what} value {s:?}")))
}

fn parse_opt_f64(s: &str, what: &str) -> Result<Option<f64>> {
    let t = s.trim();
    if t.is_empty() {
        Ok(None)
    } else {
        parse_f64(t, what).map(Some)
    }
}

/// Reads the two-file format back into a `Panel`. Subjects appear in first
/// encounter order; every subject in the visits file must have an events row
/// (subjects with no visits may appear only in the events file).
pub fn read_panel(visits_path: &Path, events_path: &Path, tau: f64) -> Result<Panel> {
    let mut events = reader(events_path)?;
    let headers = events.headers()?.clone();
    let baseline_names: Vec<String> = headers.iter().skip(4).map(|h| h.to_string()).collect();
    let mut order: Vec<String> = Vec::new();
    let mut subjects: HashMap<String, SubjectRecord> = HashMap::new();
    for rec in events.records() {
        let rec = rec?;
        if rec.len() < 4 {
            return Err(Error::Invalid("events row has fewer than 4 columns".into()));
        }
        let id = rec[0].trim().to_string();
        let mut baseline = Vec::with_capacity(baseline_names.len());
        for j in 0..baseline_names.len() {
            baseline.push(parse_f64(&rec[4 + j], &baseline_names[j])?);
        }
        let subject = SubjectRecord {
            id: id.clone(),
            visit_times: vec![],
            outcomes: vec![],
            baseline,
            aux: vec![],
            dropout_time: parse_opt_f64(&rec[1], "dropout_time")?,
            censor_time: parse_opt_f64(&rec[2], "censor_time")?,
            competing_time: parse_opt_f64(&rec[3], "competing_time")?,
        };
        if subjects.insert(id.clone(), subject).is_some() {
            return Err(Error::Invalid(format!("duplicate events row for subject {id}")));
        }
        order.push(id);
    }

    let mut visits = reader(visits_path)?;
    let headers = visits.headers()?.clone();
    if headers.len() < 3 {
        return Err(Error::Invalid("visits file needs id,time,y columns".into()));
    }
    // Trailing columns that repeat the events-file baseline names are baseline
    // covariates; everything else after `y` is a per-visit aux covariate.
    let extra: Vec<String> = headers.iter().skip(3).map(|h| h.to_string()).collect();
    let n_base_cols = extra
        .iter()
        .rev()
        .zip(baseline_names.iter().rev())
        .take_while(|(a, b)| a == b)
        .count();
    let aux_names: Vec<String> = extra[..extra.len() - n_base_cols].to_vec();

    for rec in visits.records() {
        let rec = rec?;
        let id = rec[0].trim().to_string();
        let s = subjects.get_mut(&id).ok_or_else(|| {
            Error::Invalid(format!("visit row for subject {id} with no events row"))
        })?;
        s.visit_times.push(parse_f64(&rec[1], "time")?);
        s.outcomes.push(parse_f64(&rec[2], "y")?);
        if !aux_names.is_empty() {
            let mut row = Vec::with_capacity(aux_names.len());
            for j in 0..aux_names.len() {
                row.push(parse_f64(&rec[3 + j], &aux_names[j])?);
            }
            s.aux.push(row);
        }
    }

    let subjects = order
        .into_iter()
        .map(|id| subjects.remove(&id).expect("subject recorded in order"))
        .collect();
    Ok(Panel {
        subjects,
        tau,
        schema: PanelSchema {
            baseline: baseline_names,
            aux: aux_names,
        },
    })
}
