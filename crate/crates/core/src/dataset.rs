//! Random-walk excitation data, temporal splits, CSV persistence.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{Actuation2, Position2};
use crate::error::{invalid, Error, Result};
use crate::plant::{random_walk, Plant, PlantParams};

pub const DEFAULT_SAMPLES: usize = 20_000;
pub const DEFAULT_MAX_DELTA: f64 = 0.1;
pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.7, 0.1, 0.2);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Record `t` pairs command `t` with the position sensed right after it.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<(Actuation2, Position2)>,
    pub control_period: f64,
    pub plant_id: String,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    records: usize,
    control_period: f64,
    plant_id: String,
    split: Split,
}

const SIDECAR_FORMAT: &str = "softhybrid-dataset-1";

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positions(&self) -> Vec<Position2> {
        self.records.iter().map(|r| r.1).collect()
    }

    pub fn actuations(&self) -> Vec<Actuation2> {
        self.records.iter().map(|r| r.0).collect()
    }
}

/// Drive the plant with a bounded random walk and record every step. The walk
/// starts from zero and each component moves by at most `max_delta` per step.
pub fn excite(params: &PlantParams, n: usize, max_delta: f64, seed: u64, control_period: f64) -> Result<Dataset> {
    if n < 100 {
        return Err(invalid(format!("n {n} < 100")));
    }
    if !(max_delta > 0.0 && max_delta <= 1.0) {
        return Err(invalid(format!("max_delta {max_delta} not in (0, 1]")));
    }
    excite_sequence(params, &random_walk(n, max_delta, seed), control_period)
}

/// Record the plant's response to an explicit command sequence.
pub fn excite_sequence(params: &PlantParams, commands: &[Actuation2], control_period: f64) -> Result<Dataset> {
    let mut plant = Plant::new(params.clone(), control_period)?;
    let records: Vec<_> = commands.iter().map(|&a| (a, plant.step(a))).collect();
    let split = split_ranges(records.len(), DEFAULT_FRACTIONS)?;
    Ok(Dataset {
        records,
        control_period,
        plant_id: plant_label(params),
        split,
    })
}

pub fn plant_label(p: &PlantParams) -> String {
    format!(
        "gx{:.3}-gy{:.3}-d{}-r{}-t{:.3}",
        p.gain_x, p.gain_y, p.delay_steps, p.config_turns, p.twist
    )
}

fn split_ranges(n: usize, (ft, fv, fs): (f64, f64, f64)) -> Result<Split> {
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split fractions ({ft}, {fv}, {fs}) must be positive and sum to 1")));
    }
    let a = (ft * n as f64).round() as usize;
    let b = ((ft + fv) * n as f64).round() as usize;
    let (a, b) = (a.min(n), b.min(n));
    Ok(Split {
        train: 0..a,
        val: a..b,
        test: b..n,
    })
}

/// Assign contiguous train/val/test ranges in temporal order.
pub fn split(ds: &Dataset, fractions: (f64, f64, f64)) -> Result<Dataset> {
    let mut out = ds.clone();
    out.split = split_ranges(ds.len(), fractions)?;
    Ok(out)
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Write `step,u1,u2,x,y` CSV plus a JSON sidecar holding the metadata.
/// Floats use the shortest representation that parses back exactly.
pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    let mut s = String::with_capacity(ds.len() * 96);
    s.push_str("step,u1,u2,x,y\n");
    for (i, (a, p)) in ds.records.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{},{},{}", a.u1, a.u2, p.x, p.y);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))?;
    let side = Sidecar {
        format: SIDECAR_FORMAT.into(),
        records: ds.len(),
        control_period: ds.control_period,
        plant_id: ds.plant_id.clone(),
        split: ds.split.clone(),
    };
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&sp, e))
}

pub fn load(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let perr = |line: usize, message: String| Error::Parse {
        path: name.clone(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "step,u1,u2,x,y" => {}
        _ => return Err(perr(1, "expected header step,u1,u2,x,y".into())),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(perr(lineno, format!("expected 5 cells, found {}", cells.len())));
        }
        let step: usize = cells[0]
            .trim()
            .parse()
            .map_err(|_| perr(lineno, format!("bad step index {:?}", cells[0])))?;
        if step != records.len() {
            return Err(perr(lineno, format!("step {step} out of sequence")));
        }
        let mut v = [0.0f64; 4];
        for (slot, cell) in v.iter_mut().zip(&cells[1..]) {
            *slot = cell
                .trim()
                .parse()
                .map_err(|_| perr(lineno, format!("non-numeric cell {cell:?}")))?;
        }
        records.push((Actuation2::new(v[0], v[1]), Position2::new(v[2], v[3])));
    }
    let sp = sidecar_path(path);
    let side_text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: Sidecar = serde_json::from_str(&side_text)?;
    if side.format != SIDECAR_FORMAT {
        return Err(Error::Parse {
            path: sp.display().to_string(),
            line: 1,
            message: format!("unknown format {:?}", side.format),
        });
    }
    if side.records != records.len() || side.split.test.end != records.len() {
        return Err(perr(
            records.len() + 1,
            format!("sidecar declares {} records, csv has {}", side.records, records.len()),
        ));
    }
    Ok(Dataset {
        records,
        control_period: side.control_period,
        plant_id: side.plant_id,
        split: side.split,
    })
}
