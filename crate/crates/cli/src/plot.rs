//! Two-panel SVG of one joint's vertical and depth trajectories.

use std::fmt::Write;

const WIDTH: f64 = 900.0;
const PANEL_H: f64 = 240.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 50.0;
const GAP: f64 = 70.0;

/// One panel: a predicted and a ground-truth series over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub label: String,
    pub pred: Vec<Option<f64>>,
    pub gt: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPlot {
    pub title: String,
    pub panels: Vec<Panel>,
    /// Frames shaded as occluded.
    pub occluded: Vec<bool>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Maximal runs `[start, end)` of true flags.
pub fn runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flags.len()));
    }
    out
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    frames: usize,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn x(&self, t: f64) -> f64 {
        let span = (self.frames.max(2) - 1) as f64;
        self.x0 + self.w * t / span
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h * (self.hi - v) / (self.hi - self.lo)
    }
}

fn path_data(f: &Frame, series: &[Option<f64>]) -> String {
    let mut d = String::new();
    let mut pen_down = false;
    for (t, v) in series.iter().enumerate() {
        match v {
            Some(v) => {
                let cmd = if pen_down { 'L' } else { 'M' };
                let _ = write!(d, "{cmd}{:.2},{:.2} ", f.x(t as f64), f.y(*v));
                pen_down = true;
            }
            None => pen_down = false,
        }
    }
    d.trim_end().to_string()
}

pub fn render_svg(plot: &TrajectoryPlot) -> String {
    let n = plot.panels.len() as f64;
    let height = TOP + n * PANEL_H + (n - 1.0).max(0.0) * GAP + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<style>.occluded{{fill:#cccccc;fill-opacity:0.6}} .gt{{fill:none;stroke:#000000;stroke-width:1.5}} .pred{{fill:none;stroke:#d62728;stroke-width:1.5}}</style>"#
    );
    let _ = writeln!(
        s,
        r##"<rect width="{WIDTH}" height="{height}" fill="#ffffff"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="22" font-size="14">{}</text>"#,
        escape(&plot.title)
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="22" fill="#000000">ground truth</text><text x="{}" y="22" fill="#d62728">prediction</text><text x="{}" y="22" fill="#888888">occluded</text>"##,
        WIDTH - 300.0,
        WIDTH - 200.0,
        WIDTH - 110.0
    );
    let frames = plot.occluded.len();
    for (i, p) in plot.panels.iter().enumerate() {
        let y0 = TOP + i as f64 * (PANEL_H + GAP);
        let vals = p.pred.iter().chain(&p.gt).flatten().copied();
        let (mut lo, mut hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let pad = ((hi - lo) * 0.05).max(1.0);
        let f = Frame {
            x0: LEFT,
            y0,
            w: WIDTH - LEFT - RIGHT,
            h: PANEL_H,
            frames,
            lo: lo - pad,
            hi: hi + pad,
        };
        let _ = writeln!(s, r#"<g class="panel" id="panel-{i}">"#);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#888888"/>"##,
            f.x0, f.y0, f.w, f.h
        );
        for (a, b) in runs(&plot.occluded) {
            let xa = f.x(a as f64 - 0.5).max(f.x0);
            let xb = f.x(b as f64 - 0.5).min(f.x0 + f.w);
            let _ = writeln!(
                s,
                r#"<rect class="occluded" x="{xa:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
                f.y0,
                (xb - xa).max(0.5),
                f.h
            );
        }
        let _ = writeln!(s, r#"<path class="gt" d="{}"/>"#, path_data(&f, &p.gt));
        let _ = writeln!(s, r#"<path class="pred" d="{}"/>"#, path_data(&f, &p.pred));
        for v in [f.hi, (f.hi + f.lo) / 2.0, f.lo] {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.0}</text>"#,
                f.x0 - 6.0,
                f.y(v) + 4.0,
                v
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            18.0,
            f.y0 + f.h / 2.0,
            18.0,
            f.y0 + f.h / 2.0,
            escape(&p.label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">0</text><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            f.x0,
            f.y0 + f.h + 16.0,
            f.x0 + f.w,
            f.y0 + f.h + 16.0,
            frames.saturating_sub(1)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">frame</text>"#,
            f.x0 + f.w / 2.0,
            f.y0 + f.h + 16.0
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_examples() {
        assert_eq!(runs(&[]), vec![]);
        assert_eq!(runs(&[false, false]), vec![]);
        assert_eq!(runs(&[true, true, false, true]), vec![(0, 2), (3, 4)]);
    }

    #[test]
    fn missing_samples_split_the_path() {
        let f = Frame {
            x0: 0.0,
            y0: 0.0,
            w: 10.0,
            h: 10.0,
            frames: 11,
            lo: 0.0,
            hi: 10.0,
        };
        let d = path_data(&f, &[Some(0.0), Some(1.0), None, Some(3.0)]);
        assert_eq!(d, "M0.00,10.00 L1.00,9.00 M3.00,7.00");
    }
}
