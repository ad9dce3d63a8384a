//! Static SVG plots of a trajectory and its tracking log.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::planner::Trajectory;
use crate::project::Project;
use crate::simulator::SimLog;
use crate::Result;

const WIDTH: f64 = 640.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;

const PATH_COLOR: &str = "#8b1a1a";
const TARGET_COLOR: &str = "#d4a017";
const KEY_COLOR: &str = "#6a3d9a";
const BOUND_COLOR: &str = "#555555";

/// Maps data coordinates into one rectangular panel.
#[derive(Debug, Clone, Copy)]
struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(left: f64, top: f64, width: f64, height: f64, x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            let span = (hi - lo).abs().max(1e-6);
            (lo - 0.05 * span, hi + 0.05 * span)
        };
        Self { left, top, width, height, x: pad(x), y: pad(y) }
    }

    /// Widens one axis so both have the same scale.
    fn equal_aspect(mut self) -> Self {
        let sx = (self.x.1 - self.x.0) / self.width;
        let sy = (self.y.1 - self.y.0) / self.height;
        if sx > sy {
            let c = 0.5 * (self.y.0 + self.y.1);
            let half = 0.5 * sx * self.height;
            self.y = (c - half, c + half);
        } else {
            let c = 0.5 * (self.x.0 + self.x.1);
            let half = 0.5 * sy * self.width;
            self.x = (c - half, c + half);
        }
        self
    }

    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }

    fn scale_x(&self) -> f64 {
        self.width / (self.x.1 - self.x.0)
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    step * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo);
    let first = (lo / step - 1e-9).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).take(20).map(|k| k as f64 * step).collect()
}

fn axes(svg: &mut String, f: &Frame, xlabel: &str, ylabel: &str, title: &str) {
    let (l, t, w, h) = (f.left, f.top, f.width, f.height);
    let _ = writeln!(svg, r##"<rect x="{l:.2}" y="{t:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#000" stroke-width="1"/>"##);
    for x in ticks(f.x.0, f.x.1) {
        let px = f.px(x);
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#000"/><text x="{px:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"##,
            t + h,
            t + h + 4.0,
            t + h + 15.0,
            fmt_tick(x)
        );
    }
    for y in ticks(f.y.0, f.y.1) {
        let py = f.py(y);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{py:.2}" x2="{l:.2}" y2="{py:.2}" stroke="#000"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"##,
            l - 4.0,
            l - 6.0,
            py + 3.0,
            fmt_tick(y)
        );
    }
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{xlabel}</text>"#, l + w / 2.0, t + h + 32.0);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{ylabel}</text>"#,
        l - 50.0,
        t + h / 2.0,
        l - 50.0,
        t + h / 2.0
    );
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{title}</text>"#, l + w / 2.0, t - 10.0);
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn polyline(svg: &mut String, f: &Frame, points: impl Iterator<Item = (f64, f64)>, color: &str, series: &str) {
    let pts: Vec<String> = points.map(|(x, y)| format!("{:.3},{:.3}", f.px(x), f.py(y))).collect();
    let _ = writeln!(
        svg,
        r#"<polyline data-series="{series}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
        pts.join(" ")
    );
}

fn hline(svg: &mut String, f: &Frame, y: f64, kind: &str) {
    let py = f.py(y);
    let _ = writeln!(
        svg,
        r#"<line data-bound="{kind}" x1="{:.3}" y1="{py:.3}" x2="{:.3}" y2="{py:.3}" stroke="{BOUND_COLOR}" stroke-dasharray="6,4"/>"#,
        f.left,
        f.left + f.width
    );
}

fn document(height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" viewBox=\"0 0 {WIDTH} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Path seen from above (x right, y up) with targets, keyframes and obstacles.
pub fn topdown_svg(trajectory: &Trajectory, project: &Project) -> String {
    path_view(trajectory, project, (0, 1), "x [m]", "y [m]", "Top-down view", true)
}

/// Path seen from the side (x right, z up).
pub fn side_svg(trajectory: &Trajectory, project: &Project) -> String {
    path_view(trajectory, project, (0, 2), "x [m]", "z [m]", "Side view", false)
}

fn path_view(
    trajectory: &Trajectory,
    project: &Project,
    (a, b): (usize, usize),
    xlabel: &str,
    ylabel: &str,
    title: &str,
    obstacles: bool,
) -> String {
    let n = trajectory.num_stages();
    let pos: Vec<_> = (0..n).map(|i| trajectory.position(i)).collect();
    let tgt: Vec<_> = (0..n).map(|i| trajectory.target(i)).collect();
    let mut xs: Vec<f64> = pos.iter().chain(&tgt).map(|p| p[a]).collect();
    let mut ys: Vec<f64> = pos.iter().chain(&tgt).map(|p| p[b]).collect();
    for k in &project.keyframes {
        xs.push(k.position[a]);
        ys.push(k.position[b]);
    }
    if obstacles {
        for o in &project.obstacles {
            let r = o.radius + o.margin;
            xs.extend([o.center[a] - r, o.center[a] + r]);
            ys.extend([o.center[b] - r, o.center[b] + r]);
        }
    }
    let height = 480.0;
    let frame = Frame::new(
        MARGIN_LEFT,
        MARGIN_TOP,
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        height - MARGIN_TOP - MARGIN_BOTTOM,
        range(xs.into_iter()),
        range(ys.into_iter()),
    )
    .equal_aspect();
    let mut body = String::new();
    axes(&mut body, &frame, xlabel, ylabel, title);
    if obstacles {
        for (i, o) in project.obstacles.iter().enumerate() {
            let (cx, cy) = (frame.px(o.center[a]), frame.py(o.center[b]));
            let _ = writeln!(
                body,
                r##"<circle data-obstacle="{i}" cx="{cx:.3}" cy="{cy:.3}" r="{:.3}" fill="#cccccc" stroke="#333"/>"##,
                o.radius * frame.scale_x()
            );
            let _ = writeln!(
                body,
                r##"<circle cx="{cx:.3}" cy="{cy:.3}" r="{:.3}" fill="none" stroke="#333" stroke-dasharray="3,3"/>"##,
                (o.radius + o.margin) * frame.scale_x()
            );
        }
    }
    polyline(&mut body, &frame, tgt.iter().map(|p| (p[a], p[b])), TARGET_COLOR, "target");
    polyline(&mut body, &frame, pos.iter().map(|p| (p[a], p[b])), PATH_COLOR, "position");
    for k in &project.keyframes {
        let _ = writeln!(
            body,
            r#"<circle data-keyframe="{}" cx="{:.3}" cy="{:.3}" r="4" fill="{KEY_COLOR}"/>"#,
            k.stage.unwrap_or(0),
            frame.px(k.position[a]),
            frame.py(k.position[b])
        );
    }
    document(height, &body)
}

/// Force components and yaw moment over time with their box limits.
pub fn inputs_svg(trajectory: &Trajectory, project: &Project) -> Result<String> {
    let bounds = project.input_bounds()?;
    let lower = bounds.input_lower();
    let upper = bounds.input_upper();
    let n = trajectory.num_stages();
    let dt = trajectory.dt();
    let names = ["Fx", "Fy", "Fz", "M_yaw"];
    let units = ["N", "N", "N", "N m"];
    let panel_h = 150.0;
    let gap = 50.0;
    let height = MARGIN_TOP + 4.0 * panel_h + 3.0 * gap + MARGIN_BOTTOM;
    let mut body = String::new();
    let t_end = (n.max(2) - 1) as f64 * dt;
    for k in 0..4 {
        let values: Vec<f64> = (0..n).map(|i| trajectory.flat_input(i).to_vector()[k]).collect();
        let (lo, hi) = range(values.iter().copied().chain([lower[k], upper[k]]));
        let frame = Frame::new(
            MARGIN_LEFT,
            MARGIN_TOP + k as f64 * (panel_h + gap),
            WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
            panel_h,
            (0.0, t_end),
            (lo, hi),
        );
        let _ = writeln!(body, r#"<g data-panel="{}">"#, names[k]);
        axes(&mut body, &frame, "t [s]", &format!("{} [{}]", names[k], units[k]), names[k]);
        hline(&mut body, &frame, lower[k], "lower");
        hline(&mut body, &frame, upper[k], "upper");
        polyline(&mut body, &frame, values.iter().enumerate().map(|(i, v)| (i as f64 * dt, *v)), PATH_COLOR, names[k]);
        body.push_str("</g>\n");
    }
    Ok(document(height, &body))
}

/// Position tracking error over time. `None` for an empty log.
pub fn tracking_svg(log: &SimLog) -> Option<String> {
    if log.is_empty() {
        return None;
    }
    let errors: Vec<f64> = (0..log.len()).map(|k| log.position_error(k)).collect();
    let (_, hi) = range(errors.iter().copied());
    let height = 360.0;
    let frame = Frame::new(
        MARGIN_LEFT,
        MARGIN_TOP,
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        height - MARGIN_TOP - MARGIN_BOTTOM,
        (log.times[0], *log.times.last().unwrap()),
        (0.0, hi.max(1e-6)),
    );
    let mut body = String::new();
    axes(&mut body, &frame, "t [s]", "position error [m]", "Tracking error");
    polyline(&mut body, &frame, log.times.iter().copied().zip(errors), PATH_COLOR, "position_error");
    Some(document(height, &body))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotFiles {
    pub files: Vec<PathBuf>,
}

/// Writes `topdown.svg`, `side.svg`, `inputs.svg` and, for a non-empty log,
/// `tracking.svg` into `dir`.
pub fn emit_plots(trajectory: &Trajectory, log: Option<&SimLog>, project: &Project, dir: impl AsRef<Path>) -> Result<PlotFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut write = |name: &str, content: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, content)?;
        files.push(path);
        Ok(())
    };
    write("topdown.svg", topdown_svg(trajectory, project))?;
    write("side.svg", side_svg(trajectory, project))?;
    write("inputs.svg", inputs_svg(trajectory, project)?)?;
    if let Some(svg) = log.and_then(tracking_svg) {
        write("tracking.svg", svg)?;
    }
    Ok(PlotFiles { files })
}
