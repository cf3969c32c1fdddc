//! CSV persistence of sweep rows and small static SVG line charts.

use std::fmt::Write as _;
use std::io::{Read, Write};

use super::{EvalError, SweepParameter, SweepRow};
use crate::env::AgentStatus;
use crate::trainer::StatsRow;

pub fn write_rows<W: Write>(rows: &[SweepRow], out: W) -> Result<(), EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<SweepRow>, EvalError> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<SweepRow>, _>>()?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
    /// Plotted against the right-hand axis.
    pub right_axis: bool,
}

/// A line chart with an optional second y axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub left_label: String,
    pub right_label: String,
    /// Fixed range of the left axis; derived from the data when absent.
    pub left_range: Option<(f64, f64)>,
    pub right_range: Option<(f64, f64)>,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 70.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

fn span(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1.0 { 0.1 * lo.abs() } else { 0.5 };
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

impl LineChart {
    fn range(&self, right: bool) -> (f64, f64) {
        let fixed = if right { self.right_range } else { self.left_range };
        fixed
            .or_else(|| {
                span(self.series.iter().filter(|s| s.right_axis == right).flat_map(|s| s.points.iter().map(|p| p.1)))
            })
            .unwrap_or((0.0, 1.0))
    }

    fn x_range(&self) -> (f64, f64) {
        span(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0))).unwrap_or((0.0, 1.0))
    }

    /// Pixel position of a data point of a series on the given axis.
    pub fn to_pixel(&self, point: (f64, f64), right_axis: bool) -> (f64, f64) {
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.range(right_axis);
        let w = WIDTH - MARGIN_L - MARGIN_R;
        let h = HEIGHT - MARGIN_T - MARGIN_B;
        (
            MARGIN_L + (point.0 - x0) / (x1 - x0) * w,
            MARGIN_T + (1.0 - (point.1 - y0) / (y1 - y0)) * h,
        )
    }

    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let (x0, x1) = self.x_range();
        let bottom = HEIGHT - MARGIN_B;
        let right = WIDTH - MARGIN_R;
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&self.title));
        let _ = writeln!(
            s,
            r#"<path d="M{MARGIN_L},{MARGIN_T} V{bottom} H{right} V{MARGIN_T}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let x = x0 + t * (x1 - x0);
            let (px, _) = self.to_pixel((x, 0.0), false);
            let _ = writeln!(
                s,
                r#"<line x1="{px:.2}" y1="{bottom}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
                bottom + 5.0,
                bottom + 18.0,
                tick(x)
            );
            for right_axis in [false, true] {
                let (y0, y1) = self.range(right_axis);
                let y = y0 + t * (y1 - y0);
                let (_, py) = self.to_pixel((x0, y), right_axis);
                let (edge, dx, anchor) = if right_axis { (right, 8.0, "start") } else { (MARGIN_L, -8.0, "end") };
                let _ = writeln!(
                    s,
                    r#"<line x1="{edge}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="{anchor}">{}</text>"#,
                    edge + dx / 2.0,
                    edge + dx,
                    py + 4.0,
                    tick(y)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (MARGIN_L + right) / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let mid = (MARGIN_T + bottom) / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="18" y="{mid}" text-anchor="middle" transform="rotate(-90 18 {mid})">{}</text>"#,
            escape(&self.left_label)
        );
        let rx = WIDTH - 14.0;
        let _ = writeln!(
            s,
            r#"<text x="{rx}" y="{mid}" text-anchor="middle" transform="rotate(90 {rx} {mid})">{}</text>"#,
            escape(&self.right_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let pts: Vec<String> = series
                .points
                .iter()
                .map(|&p| {
                    let (x, y) = self.to_pixel(p, series.right_axis);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="series" data-label="{}" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
                escape(&series.label),
                pts.join(" "),
                series.color
            );
            for p in &pts {
                let (x, y) = p.split_once(',').expect("formatted pair");
                let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{}"/>"#, series.color);
            }
            let ly = MARGIN_T + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                MARGIN_L + 10.0,
                MARGIN_L + 30.0,
                series.color,
                MARGIN_L + 36.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Success ratio (left axis) and probe speed (right axis) against the
/// swept value.
pub fn sweep_svg(rows: &[SweepRow], parameter: SweepParameter) -> Result<String, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    let chart = LineChart {
        title: format!("Probe behavior against {}", parameter.label()),
        x_label: parameter.label().to_string(),
        left_label: "success ratio".into(),
        right_label: "average speed (m/s)".into(),
        left_range: Some((0.0, 1.0)),
        right_range: None,
        series: vec![
            Series {
                label: "success ratio".into(),
                color: "#1f77b4",
                points: rows.iter().map(|r| (r.value, r.success_ratio)).collect(),
                right_axis: false,
            },
            Series {
                label: "average speed".into(),
                color: "#d62728",
                points: rows.iter().map(|r| (r.value, r.avg_speed)).collect(),
                right_axis: true,
            },
        ],
    };
    Ok(chart.to_svg())
}

/// Moving averages over `window` episodes of the episode reward (left axis)
/// and of the goal-reaching ratio (right axis).
pub fn learning_curve_svg(stats: &[StatsRow], window: usize) -> Result<String, EvalError> {
    if stats.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut rows: Vec<&StatsRow> = stats.iter().collect();
    rows.sort_by_key(|r| r.episode);
    let window = window.max(1);
    let mut reward = Vec::with_capacity(rows.len());
    let mut goals = Vec::with_capacity(rows.len());
    let (mut sum_r, mut sum_g) = (0.0, 0.0);
    for (i, row) in rows.iter().enumerate() {
        sum_r += row.cum_reward;
        sum_g += f64::from(u8::from(row.outcome == AgentStatus::ReachedGoal));
        if i >= window {
            sum_r -= rows[i - window].cum_reward;
            sum_g -= f64::from(u8::from(rows[i - window].outcome == AgentStatus::ReachedGoal));
        }
        let n = (i + 1).min(window) as f64;
        reward.push((row.episode as f64, sum_r / n));
        goals.push((row.episode as f64, sum_g / n));
    }
    let chart = LineChart {
        title: format!("Training progress ({window}-episode moving average)"),
        x_label: "episode".into(),
        left_label: "episode reward".into(),
        right_label: "goal ratio".into(),
        left_range: None,
        right_range: Some((0.0, 1.0)),
        series: vec![
            Series {
                label: "reward".into(),
                color: "#1f77b4",
                points: reward,
                right_axis: false,
            },
            Series {
                label: "goal ratio".into(),
                color: "#2ca02c",
                points: goals,
                right_axis: true,
            },
        ],
    };
    Ok(chart.to_svg())
}
