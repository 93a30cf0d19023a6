//! Static SVG figures and the CSVs behind them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::domain::{Position2, RolloutLog};
use crate::error::{invalid, Error, Result};

/// Per-step min, max and mean error across trials.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorBand {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
}

pub fn error_band(logs: &[RolloutLog]) -> Result<ErrorBand> {
    let n = logs.first().ok_or_else(|| invalid("no logs"))?.records.len();
    if logs.iter().any(|l| l.records.len() != n) {
        return Err(invalid("trials differ in length"));
    }
    let mut band = ErrorBand {
        min: vec![f64::INFINITY; n],
        max: vec![f64::NEG_INFINITY; n],
        mean: vec![0.0; n],
    };
    for l in logs {
        for (k, r) in l.records.iter().enumerate() {
            band.min[k] = band.min[k].min(r.per_step_error);
            band.max[k] = band.max[k].max(r.per_step_error);
            band.mean[k] += r.per_step_error / logs.len() as f64;
        }
    }
    Ok(band)
}

fn mean_path(logs: &[RolloutLog]) -> Vec<Position2> {
    let n = logs[0].records.len();
    let t = logs.len() as f64;
    (0..n)
        .map(|k| {
            let (sx, sy) = logs
                .iter()
                .fold((0.0, 0.0), |(x, y), l| (x + l.records[k].achieved.x, y + l.records[k].achieved.y));
            Position2::new(sx / t, sy / t)
        })
        .collect()
}

fn band_csv(band: &ErrorBand) -> String {
    let mut s = String::from("step,min,max,mean\n");
    for k in 0..band.min.len() {
        let _ = writeln!(s, "{k},{},{},{}", band.min[k], band.max[k], band.mean[k]);
    }
    s
}

const PANEL: f64 = 360.0;
const MARGIN: f64 = 30.0;

struct Frame {
    x0: f64,
    y0: f64,
    sx: f64,
    sy: f64,
    ox: f64,
    oy: f64,
}

impl Frame {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (self.ox + (x - self.x0) * self.sx, self.oy + PANEL - (y - self.y0) * self.sy)
    }
}

fn polyline(s: &mut String, f: &Frame, pts: impl Iterator<Item = (f64, f64)>, style: &str) {
    s.push_str("<polyline fill=\"none\" ");
    s.push_str(style);
    s.push_str(" points=\"");
    for (x, y) in pts {
        let (a, b) = f.px(x, y);
        let _ = write!(s, "{a:.2},{b:.2} ");
    }
    s.push_str("\"/>\n");
}

fn render(name: &str, logs: &[RolloutLog], cloud: &[Position2], band: &ErrorBand, workspace_length: f64) -> String {
    let half = workspace_length / 2.0;
    let ws = Frame {
        x0: -half,
        y0: -half,
        sx: PANEL / workspace_length,
        sy: PANEL / workspace_length,
        ox: MARGIN,
        oy: MARGIN,
    };
    let n = band.min.len();
    let top = band.max.iter().copied().fold(0.0, f64::max).max(1e-6) * 1.1;
    let er = Frame {
        x0: 0.0,
        y0: 0.0,
        sx: PANEL / (n.max(2) - 1) as f64,
        sy: PANEL / top,
        ox: 2.0 * MARGIN + PANEL + MARGIN,
        oy: MARGIN,
    };
    let width = 3.0 * MARGIN + 2.0 * PANEL + MARGIN;
    let height = 2.0 * MARGIN + PANEL;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(s, "<title>{name}</title>");
    for f in [&ws, &er] {
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{PANEL:.2}\" height=\"{PANEL:.2}\" fill=\"none\" stroke=\"#999\"/>",
            f.ox, f.oy
        );
    }
    for p in cloud {
        let (a, b) = ws.px(p.x, p.y);
        let _ = writeln!(s, "<circle cx=\"{a:.2}\" cy=\"{b:.2}\" r=\"1\" fill=\"#ccc\"/>");
    }
    let desired = &logs[0].trajectory.waypoints;
    polyline(
        &mut s,
        &ws,
        desired.iter().chain(desired.first()).map(|p| (p.x, p.y)),
        "stroke=\"#000\" stroke-dasharray=\"4 3\"",
    );
    polyline(&mut s, &ws, mean_path(logs).iter().map(|p| (p.x, p.y)), "stroke=\"#c33\"");

    s.push_str("<polygon fill=\"#36c\" fill-opacity=\"0.3\" stroke=\"none\" points=\"");
    for (k, v) in band.max.iter().enumerate() {
        let (a, b) = er.px(k as f64, *v);
        let _ = write!(s, "{a:.2},{b:.2} ");
    }
    for (k, v) in band.min.iter().enumerate().rev() {
        let (a, b) = er.px(k as f64, *v);
        let _ = write!(s, "{a:.2},{b:.2} ");
    }
    s.push_str("\"/>\n");
    polyline(&mut s, &er, band.mean.iter().enumerate().map(|(k, v)| (k as f64, *v)), "stroke=\"#36c\"");
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{name}: max {:.4}</text>",
        er.ox,
        MARGIN - 8.0,
        top / 1.1
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `<name>.svg`, `<name>_band.csv` and `<name>_trial<i>.csv` per
/// condition and returns every path written.
pub fn emit_plots(
    conditions: &[(String, Vec<RolloutLog>)],
    cloud: &[Position2],
    workspace_length: f64,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if conditions.is_empty() || conditions.iter().any(|(_, l)| l.is_empty()) {
        return Err(invalid("nothing to plot"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, logs) in conditions {
        let band = error_band(logs)?;
        let mut put = |file: String, body: &str| -> Result<()> {
            let p = dir.join(file);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            written.push(p);
            Ok(())
        };
        put(format!("{name}.svg"), &render(name, logs, cloud, &band, workspace_length))?;
        put(format!("{name}_band.csv"), &band_csv(&band))?;
        for (i, l) in logs.iter().enumerate() {
            put(format!("{name}_trial{i}.csv"), &l.to_csv())?;
        }
    }
    Ok(written)
}

/// Equilibrium positions over a command grid, for the background cloud.
pub fn workspace_cloud(params: &crate::plant::PlantParams, per_axis: usize) -> Vec<Position2> {
    let n = per_axis.max(2);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let u = |t: usize| -1.0 + 2.0 * t as f64 / (n - 1) as f64;
            out.push(crate::plant::equilibrium(params, crate::domain::Actuation2::new(u(i), u(j))));
        }
    }
    out
}
