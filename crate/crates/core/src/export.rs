//! Trace/metrics CSV export and standalone SVG line charts. All writes are
//! atomic (temp file + rename) so interrupted runs never leave truncated
//! artifacts.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::sim::{RunMetrics, SweepRow, TraceRow};

/// Column layout of the trace CSV.
pub const TRACE_HEADER: &str =
    "t,x,y,z,phi,theta,psi,vx,vy,vz,p,q,r,tx,ty,tz,u1,u2,u3,u4,jx,ju,jp,ji";

/// Write `content` to `path` atomically.
pub fn write_atomic(path: &Path, content: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(content)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Render the trace as CSV, one row per plant step, `.` decimal separator,
/// newline-terminated.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for row in trace {
        out.push_str(&format!("{}", row.t));
        for i in 0..12 {
            out.push_str(&format!(",{}", row.state[i]));
        }
        for i in 0..3 {
            out.push_str(&format!(",{}", row.target[i]));
        }
        for i in 0..4 {
            out.push_str(&format!(",{}", row.input[i]));
        }
        out.push_str(&format!(
            ",{},{},{},{}\n",
            row.cost.jx, row.cost.ju, row.cost.jp, row.cost.ji
        ));
    }
    out
}

pub const METRICS_HEADER: &str =
    "method,total_err_x,total_err_y,total_err_z,min_err_x,min_err_y,min_err_z,flight_time";

fn metrics_row(label: &str, m: &RunMetrics) -> String {
    let ft = m
        .flight_time
        .map(|v| format!("{v}"))
        .unwrap_or_else(|| "".to_string());
    format!(
        "{label},{},{},{},{},{},{},{ft}\n",
        m.total_err[0], m.total_err[1], m.total_err[2], m.min_err[0], m.min_err[1], m.min_err[2]
    )
}

/// One-row metrics table for a single run.
pub fn metrics_csv(label: &str, m: &RunMetrics) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    out.push_str(&metrics_row(label, m));
    out
}

/// Sweep table, one row per method in input order. Failed rows carry the
/// error text in place of numbers.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        match &row.outcome {
            Ok(m) => out.push_str(&metrics_row(&row.label, m)),
            Err(e) => out.push_str(&format!("{},error: {}\n", row.label, e.replace(',', ";"))),
        }
    }
    out
}

/// Minimal standalone SVG line chart; pure markup, no external renderer.
struct Chart {
    width: f64,
    height: f64,
    margin: f64,
    title: String,
    series: Vec<(String, String, Vec<(f64, f64)>)>, // (label, color, points)
}

impl Chart {
    fn new(title: &str) -> Self {
        Chart {
            width: 800.0,
            height: 420.0,
            margin: 55.0,
            title: title.to_string(),
            series: Vec::new(),
        }
    }

    fn add(&mut self, label: &str, color: &str, points: Vec<(f64, f64)>) {
        self.series
            .push((label.to_string(), color.to_string(), points));
    }

    fn render(&self) -> String {
        let (w, h, m) = (self.width, self.height, self.margin);
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for (_, _, pts) in &self.series {
            for (x, y) in pts {
                xmin = xmin.min(*x);
                xmax = xmax.max(*x);
                ymin = ymin.min(*y);
                ymax = ymax.max(*y);
            }
        }
        if !xmin.is_finite() {
            xmin = 0.0;
            xmax = 1.0;
            ymin = 0.0;
            ymax = 1.0;
        }
        if (xmax - xmin).abs() < 1e-12 {
            xmax = xmin + 1.0;
        }
        if (ymax - ymin).abs() < 1e-12 {
            ymax = ymin + 1.0;
        }
        // A little headroom.
        let pad = 0.05 * (ymax - ymin);
        ymin -= pad;
        ymax += pad;

        let sx = |x: f64| m + (x - xmin) / (xmax - xmin) * (w - 2.0 * m);
        let sy = |y: f64| h - m - (y - ymin) / (ymax - ymin) * (h - 2.0 * m);

        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
        ));
        svg.push_str(&format!(
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
            w / 2.0,
            self.title
        ));
        // Axes.
        svg.push_str(&format!(
            "<line x1=\"{m}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
            h - m,
            w - m
        ));
        svg.push_str(&format!(
            "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n",
            h - m
        ));
        // Ticks and grid: 6 divisions each way.
        for i in 0..=6 {
            let fx = xmin + (xmax - xmin) * i as f64 / 6.0;
            let px = sx(fx);
            svg.push_str(&format!(
                "<line x1=\"{px}\" y1=\"{0}\" x2=\"{px}\" y2=\"{1}\" stroke=\"#ddd\"/>\n",
                m,
                h - m
            ));
            svg.push_str(&format!(
                "<text x=\"{px}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{:.2}</text>\n",
                h - m + 18.0,
                fx
            ));
            let fy = ymin + (ymax - ymin) * i as f64 / 6.0;
            let py = sy(fy);
            svg.push_str(&format!(
                "<line x1=\"{m}\" y1=\"{py}\" x2=\"{}\" y2=\"{py}\" stroke=\"#ddd\"/>\n",
                w - m
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.2}</text>\n",
                m - 6.0,
                py + 4.0,
                fy
            ));
        }
        // Series.
        for (idx, (label, color, pts)) in self.series.iter().enumerate() {
            let path: Vec<String> = pts
                .iter()
                .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                path.join(" ")
            ));
            let lx = w - m - 110.0;
            let ly = m + 16.0 * idx as f64 + 4.0;
            svg.push_str(&format!(
                "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                lx + 22.0
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{label}</text>\n",
                lx + 28.0,
                ly + 4.0
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Per-axis position error vs time.
pub fn errors_svg(trace: &[TraceRow]) -> String {
    let mut chart = Chart::new("Tracking error per axis [m]");
    let colors = ["#d62728", "#2ca02c", "#1f77b4"];
    let labels = ["x error", "y error", "z error"];
    for a in 0..3 {
        let pts: Vec<(f64, f64)> = trace
            .iter()
            .map(|r| (r.t, r.state[a] - r.target[a]))
            .collect();
        chart.add(labels[a], colors[a], pts);
    }
    chart.render()
}

/// Control channels vs time.
pub fn inputs_svg(trace: &[TraceRow]) -> String {
    let mut chart = Chart::new("Control inputs");
    let colors = ["#d62728", "#2ca02c", "#1f77b4", "#9467bd"];
    for i in 0..4 {
        let pts: Vec<(f64, f64)> = trace.iter().map(|r| (r.t, r.input[i])).collect();
        chart.add(&format!("u{}", i + 1), colors[i], pts);
    }
    chart.render()
}
