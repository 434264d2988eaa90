//! Calibrated biplot scenes and their SVG / JSON renderings.
//!
//! A scene holds one vector per X variable (red) and per Y variable (blue).
//! The inner product of an X marker with a Y marker, plus the origin offset,
//! reproduces the fitted correlation. Calibrated axes carry dots at fixed
//! correlation steps whose spacing is `1/|g|^2` per unit correlation.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::agls::{AdjustmentModel, FitResult};
use crate::cca::biplot_coordinates;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "1";
pub const CANVAS: f64 = 800.0;
const MIN_AXIS_LENGTH: f64 = 1e-12;
const PALETTE: [&str; 6] = ["green", "red", "blue", "orange", "purple", "brown"];
const X_COLOR: &str = "#c0392b";
const Y_COLOR: &str = "#1f4e9c";
const NEG_TICK: &str = "red";
const POS_TICK: &str = "blue";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Fine,
    Medium,
    Major,
}

impl SizeClass {
    fn radius(self) -> f64 {
        match self {
            SizeClass::Fine => 1.2,
            SizeClass::Medium => 2.0,
            SizeClass::Major => 2.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub value: f64,
    pub position: [f64; 2],
    pub size_class: SizeClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedAxis {
    pub label: String,
    /// Full k-dimensional marker, used for predictions.
    pub vector: Vec<f64>,
    /// Displayed 2-D marker (second coordinate zero for rank one).
    pub plotted: [f64; 2],
    /// Unit vector along `plotted`; zero for a degenerate axis.
    pub direction: [f64; 2],
    pub length: f64,
    /// Plot position of the vector tail.
    pub anchor: [f64; 2],
    /// Correlation represented at the anchor.
    pub offset: f64,
    pub calibrated: bool,
    pub degenerate: bool,
    pub ticks: Vec<Tick>,
}

impl CalibratedAxis {
    pub fn tip(&self) -> [f64; 2] {
        [self.anchor[0] + self.plotted[0], self.anchor[1] + self.plotted[1]]
    }

    /// Plot position of correlation `value` on this axis.
    pub fn position_of(&self, value: f64) -> [f64; 2] {
        let s = (value - self.offset) / (self.length * self.length);
        [self.anchor[0] + s * self.plotted[0], self.anchor[1] + s * self.plotted[1]]
    }
}

/// Correlation steps `-1, -0.99, ..., 1`.
pub fn default_tick_values() -> Vec<f64> {
    (-100..=100).map(|i| i as f64 / 100.0).collect()
}

fn size_class(value: f64) -> SizeClass {
    let hundredths = (value * 100.0).round() as i64;
    if hundredths % 10 == 0 {
        SizeClass::Major
    } else if hundredths % 5 == 0 {
        SizeClass::Medium
    } else {
        SizeClass::Fine
    }
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Axis for marker `g` whose anchor represents `offset`, dotted at `tick_values`.
///
/// Ticks farther than `clip_radius` from the plot origin are dropped.
pub fn calibrate_axis(
    label: &str,
    g: [f64; 2],
    offset: f64,
    tick_values: &[f64],
    clip_radius: Option<f64>,
) -> Result<CalibratedAxis> {
    calibrate_anchored(label, &g, g, [0.0, 0.0], offset, tick_values, clip_radius)
}

fn calibrate_anchored(
    label: &str,
    vector: &[f64],
    plotted: [f64; 2],
    anchor: [f64; 2],
    offset: f64,
    tick_values: &[f64],
    clip_radius: Option<f64>,
) -> Result<CalibratedAxis> {
    let length = norm2(plotted);
    if !(length > MIN_AXIS_LENGTH) {
        return Err(Error::DegenerateAxis(label.to_string()));
    }
    let mut axis = CalibratedAxis {
        label: label.to_string(),
        vector: vector.to_vec(),
        plotted,
        direction: [plotted[0] / length, plotted[1] / length],
        length,
        anchor,
        offset,
        calibrated: true,
        degenerate: false,
        ticks: Vec::new(),
    };
    axis.ticks = tick_values
        .iter()
        .map(|&value| Tick {
            value,
            position: axis.position_of(value),
            size_class: size_class(value),
        })
        .filter(|t| clip_radius.is_none_or(|r| norm2(t.position) <= r))
        .collect();
    Ok(axis)
}

fn plain_axis(label: &str, vector: &[f64], plotted: [f64; 2], anchor: [f64; 2], offset: f64) -> CalibratedAxis {
    let length = norm2(plotted);
    let degenerate = !(length > MIN_AXIS_LENGTH);
    let direction = if degenerate {
        [0.0, 0.0]
    } else {
        [plotted[0] / length, plotted[1] / length]
    };
    CalibratedAxis {
        label: label.to_string(),
        vector: vector.to_vec(),
        plotted,
        direction,
        length,
        anchor,
        offset,
        calibrated: false,
        degenerate,
        ticks: Vec::new(),
    }
}

/// `f . g + offset`: the correlation read off `axis` for marker `f`.
pub fn predict_correlation(f: &[f64], axis: &CalibratedAxis) -> f64 {
    f.iter().zip(&axis.vector).map(|(a, b)| a * b).sum::<f64>() + axis.offset
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePoint {
    pub label: String,
    pub group: Option<String>,
    pub position: [f64; 2],
}

/// Perpendicular dropped from the tip of `from` onto the line of `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub from_axis: String,
    pub to_axis: String,
    pub from: [f64; 2],
    pub foot: [f64; 2],
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiplotScene {
    pub schema_version: String,
    pub model: AdjustmentModel,
    pub rank: usize,
    pub alpha: f64,
    pub rmse: f64,
    pub title: String,
    pub clip_radius: f64,
    pub one_dimensional: bool,
    pub x_axes: Vec<CalibratedAxis>,
    pub y_axes: Vec<CalibratedAxis>,
    pub points: Option<Vec<ScenePoint>>,
    /// Distinct point groups in first-appearance order; indexes the palette.
    pub groups: Vec<String>,
    pub point_scale: Option<f64>,
    pub projections: Option<Vec<Projection>>,
    pub warnings: Vec<String>,
}

impl BiplotScene {
    /// Fitted correlation of X variable `i` with Y variable `j`.
    pub fn predict(&self, i: usize, j: usize) -> f64 {
        let x = &self.x_axes[i];
        let y = &self.y_axes[j];
        let inner: f64 = x.vector.iter().zip(&y.vector).map(|(a, b)| a * b).sum();
        let offset = match self.model {
            AdjustmentModel::None => 0.0,
            AdjustmentModel::Scalar | AdjustmentModel::Column => y.offset,
            AdjustmentModel::Row => x.offset,
            AdjustmentModel::RowColumn => x.offset + y.offset,
        };
        inner + offset
    }

    pub fn predictions(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.x_axes.len(), self.y_axes.len(), |i, j| self.predict(i, j))
    }
}

#[derive(Debug, Clone)]
pub struct SceneOptions {
    pub alpha: f64,
    pub clip_radius: Option<f64>,
    pub tick_values: Vec<f64>,
    /// Restrict calibration to these labels; `None` calibrates every eligible axis.
    pub calibrate: Option<Vec<String>>,
    /// (from, to) label pairs for perpendicular overlays.
    pub projections: Vec<(String, String)>,
    /// Vertical separation between vectors in a one-dimensional biplot.
    pub stagger: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        SceneOptions {
            alpha: 1.0,
            clip_radius: None,
            tick_values: default_tick_values(),
            calibrate: None,
            projections: Vec::new(),
            stagger: 0.06,
        }
    }
}

fn calibrates_rows(model: AdjustmentModel) -> bool {
    matches!(model, AdjustmentModel::None | AdjustmentModel::Scalar | AdjustmentModel::Row)
}

fn calibrates_columns(model: AdjustmentModel) -> bool {
    matches!(model, AdjustmentModel::None | AdjustmentModel::Scalar | AdjustmentModel::Column)
}

fn plotted_of(m: &DMatrix<f64>, i: usize) -> [f64; 2] {
    let second = if m.ncols() > 1 { m[(i, 1)] } else { 0.0 };
    [m[(i, 0)], second]
}

/// Scene for `fit` with markers `F = A D^alpha`, `G = B D^(1-alpha)`.
pub fn build_scene(fit: &FitResult, x_names: &[String], y_names: &[String], opts: &SceneOptions) -> Result<BiplotScene> {
    let coords = biplot_coordinates(fit, opts.alpha, fit.rank)?;
    let (p, q) = (coords.f.nrows(), coords.g.nrows());
    if x_names.len() != p || y_names.len() != q {
        return Err(Error::ShapeMismatch(format!(
            "{} x labels and {} y labels for a {p}x{q} fit",
            x_names.len(),
            y_names.len()
        )));
    }
    let model = fit.model;
    let one_dimensional = fit.rank == 1;
    let mut warnings = Vec::new();
    if model == AdjustmentModel::RowColumn {
        warnings.push("row and column adjustments leave the origin without a unique correlation; axes drawn without calibration".into());
    }

    let x_plotted: Vec<[f64; 2]> = (0..p).map(|i| plotted_of(&coords.f, i)).collect();
    let y_plotted: Vec<[f64; 2]> = (0..q).map(|j| plotted_of(&coords.g, j)).collect();
    let reach = x_plotted.iter().chain(&y_plotted).map(|v| norm2(*v)).fold(0.0_f64, f64::max);
    let stagger = opts.stagger * reach.max(MIN_AXIS_LENGTH);
    let x_anchor = |i: usize| if one_dimensional { [0.0, -stagger * (i + 1) as f64] } else { [0.0, 0.0] };
    let y_anchor = |j: usize| if one_dimensional { [0.0, stagger * (j + 1) as f64] } else { [0.0, 0.0] };
    let extent = reach.max(if one_dimensional { stagger * (p.max(q) + 1) as f64 } else { 0.0 });
    let clip_radius = opts.clip_radius.unwrap_or(1.15 * extent.max(MIN_AXIS_LENGTH));

    let x_offset = |i: usize| match model {
        AdjustmentModel::Scalar => fit.delta.unwrap_or(0.0),
        AdjustmentModel::Row | AdjustmentModel::RowColumn => fit.r_adj.as_ref().map_or(0.0, |r| r[i]),
        _ => 0.0,
    };
    let y_offset = |j: usize| match model {
        AdjustmentModel::Scalar => fit.delta.unwrap_or(0.0),
        AdjustmentModel::Column | AdjustmentModel::RowColumn => fit.c_adj.as_ref().map_or(0.0, |c| c[j]),
        _ => 0.0,
    };
    let wanted = |label: &str| opts.calibrate.as_ref().is_none_or(|l| l.iter().any(|s| s == label));

    let mut make = |label: &str, vector: Vec<f64>, plotted: [f64; 2], anchor: [f64; 2], offset: f64, eligible: bool| {
        if eligible && wanted(label) {
            match calibrate_anchored(label, &vector, plotted, anchor, offset, &opts.tick_values, Some(clip_radius)) {
                Ok(axis) => return axis,
                Err(e) => warnings.push(e.to_string()),
            }
        }
        plain_axis(label, &vector, plotted, anchor, offset)
    };
    let x_axes: Vec<CalibratedAxis> = (0..p)
        .map(|i| {
            let v = coords.f.row(i).iter().copied().collect();
            make(&x_names[i], v, x_plotted[i], x_anchor(i), x_offset(i), calibrates_rows(model))
        })
        .collect();
    let y_axes: Vec<CalibratedAxis> = (0..q)
        .map(|j| {
            let v = coords.g.row(j).iter().copied().collect();
            make(&y_names[j], v, y_plotted[j], y_anchor(j), y_offset(j), calibrates_columns(model))
        })
        .collect();

    let mut scene = BiplotScene {
        schema_version: SCHEMA_VERSION.to_string(),
        model,
        rank: fit.rank,
        alpha: opts.alpha,
        rmse: fit.rmse_gls,
        title: format!("{} ({:.4})", model.label(), fit.rmse_gls),
        clip_radius,
        one_dimensional,
        x_axes,
        y_axes,
        points: None,
        groups: Vec::new(),
        point_scale: None,
        projections: None,
        warnings,
    };
    if !opts.projections.is_empty() {
        let mut out = Vec::with_capacity(opts.projections.len());
        for (from, to) in &opts.projections {
            out.push(project(&scene, from, to)?);
        }
        scene.projections = Some(out);
    }
    Ok(scene)
}

fn find_axis<'a>(scene: &'a BiplotScene, label: &str) -> Option<(bool, usize, &'a CalibratedAxis)> {
    if let Some(i) = scene.x_axes.iter().position(|a| a.label == label) {
        return Some((true, i, &scene.x_axes[i]));
    }
    scene.y_axes.iter().position(|a| a.label == label).map(|j| (false, j, &scene.y_axes[j]))
}

fn project(scene: &BiplotScene, from: &str, to: &str) -> Result<Projection> {
    let (from_x, fi, fa) = find_axis(scene, from).ok_or_else(|| Error::InvalidArgument(format!("no biplot vector `{from}`")))?;
    let (to_x, ti, ta) = find_axis(scene, to).ok_or_else(|| Error::InvalidArgument(format!("no biplot vector `{to}`")))?;
    if from_x == to_x {
        return Err(Error::InvalidArgument(format!("`{from}` and `{to}` belong to the same block")));
    }
    if ta.degenerate {
        return Err(Error::DegenerateAxis(to.to_string()));
    }
    let (i, j) = if from_x { (fi, ti) } else { (ti, fi) };
    let tip = fa.tip();
    let s = (fa.plotted[0] * ta.plotted[0] + fa.plotted[1] * ta.plotted[1]) / (ta.length * ta.length);
    let foot = [ta.anchor[0] + s * ta.plotted[0], ta.anchor[1] + s * ta.plotted[1]];
    Ok(Projection {
        from_axis: from.to_string(),
        to_axis: to.to_string(),
        from: tip,
        foot,
        value: scene.predict(i, j),
    })
}

/// Adds the first two columns of `scores` as points, multiplied by `scale`
/// or, by default, by the constant that fits the cloud in the unit box.
pub fn add_points(
    scene: &mut BiplotScene,
    scores: &DMatrix<f64>,
    labels: &[String],
    groups: Option<&[String]>,
    scale: Option<f64>,
) -> Result<()> {
    let n = scores.nrows();
    if labels.len() != n || groups.is_some_and(|g| g.len() != n) {
        return Err(Error::ShapeMismatch(format!("{n} points but {} labels", labels.len())));
    }
    if scores.ncols() == 0 {
        return Err(Error::ShapeMismatch("point scores have no columns".into()));
    }
    let raw: Vec<[f64; 2]> = (0..n).map(|i| plotted_of(scores, i)).collect();
    let scale = match scale {
        Some(s) => s,
        None => {
            let m = raw.iter().flat_map(|p| [p[0].abs(), p[1].abs()]).fold(0.0_f64, f64::max);
            if m > 0.0 { 1.0 / m } else { 1.0 }
        }
    };
    if !scale.is_finite() {
        return Err(Error::InvalidArgument("point scale must be finite".into()));
    }
    let mut distinct: Vec<String> = Vec::new();
    let points = raw
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let group = groups.map(|g| g[i].clone());
            if let Some(g) = &group {
                if !distinct.contains(g) {
                    distinct.push(g.clone());
                }
            }
            ScenePoint {
                label: labels[i].clone(),
                group,
                position: [p[0] * scale, p[1] * scale],
            }
        })
        .collect();
    scene.points = Some(points);
    scene.groups = distinct;
    scene.point_scale = Some(scale);
    Ok(())
}

fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.11e}").parse().unwrap_or(v)
}

fn round_numbers(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) => {
            if n.is_f64() {
                if let Some(x) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round_sig(x))) {
                    *n = x;
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_numbers),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// Pretty JSON with every real rounded to 12 significant digits.
pub fn scene_to_json(scene: &BiplotScene) -> Result<String> {
    let mut value = serde_json::to_value(scene)?;
    round_numbers(&mut value);
    let mut s = serde_json::to_string_pretty(&value)?;
    s.push('\n');
    Ok(s)
}

pub fn scene_from_json(s: &str) -> Result<BiplotScene> {
    let scene: BiplotScene = serde_json::from_str(s)?;
    if scene.schema_version != SCHEMA_VERSION {
        return Err(Error::Data(format!("unsupported scene schema version `{}`", scene.schema_version)));
    }
    Ok(scene)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct View {
    scale: f64,
}

impl View {
    fn new(radius: f64) -> Self {
        View {
            scale: (CANVAS / 2.0 - 50.0) / radius,
        }
    }

    fn x(&self, p: [f64; 2]) -> f64 {
        CANVAS / 2.0 + p[0] * self.scale
    }

    fn y(&self, p: [f64; 2]) -> f64 {
        CANVAS / 2.0 - p[1] * self.scale
    }
}

/// Parameter interval of `anchor + t * dir` inside the disc of radius `r`.
fn disc_interval(anchor: [f64; 2], dir: [f64; 2], r: f64) -> Option<(f64, f64)> {
    let b = anchor[0] * dir[0] + anchor[1] * dir[1];
    let c = anchor[0] * anchor[0] + anchor[1] * anchor[1] - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some((-b - s, -b + s))
}

fn scale_segment(axis: &CalibratedAxis, radius: f64) -> Option<([f64; 2], [f64; 2])> {
    let lo = (-1.0 - axis.offset) / axis.length;
    let hi = (1.0 - axis.offset) / axis.length;
    let (a, b) = disc_interval(axis.anchor, axis.direction, radius)?;
    let (lo, hi) = (lo.max(a), hi.min(b));
    if lo >= hi {
        return None;
    }
    let at = |t: f64| [axis.anchor[0] + t * axis.direction[0], axis.anchor[1] + t * axis.direction[1]];
    Some((at(lo), at(hi)))
}

fn draw_axis(out: &mut String, view: &View, axis: &CalibratedAxis, color: &str, radius: f64) {
    let tip = axis.tip();
    if axis.degenerate {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.3}" cy="{:.3}" r="2.5" fill="{color}"/>"#,
            view.x(axis.anchor),
            view.y(axis.anchor)
        );
    } else {
        if axis.calibrated {
            if let Some((a, b)) = scale_segment(axis, radius) {
                let _ = writeln!(
                    out,
                    r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="{color}" stroke-width="0.6" stroke-opacity="0.6"/>"#,
                    view.x(a),
                    view.y(a),
                    view.x(b),
                    view.y(b)
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="{color}" stroke-width="1.6"/>"#,
            view.x(axis.anchor),
            view.y(axis.anchor),
            view.x(tip),
            view.y(tip)
        );
        for t in &axis.ticks {
            let fill = if t.value < 0.0 { NEG_TICK } else { POS_TICK };
            let _ = writeln!(
                out,
                r#"<circle cx="{:.3}" cy="{:.3}" r="{:.1}" fill="{fill}"/>"#,
                view.x(t.position),
                view.y(t.position),
                t.size_class.radius()
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.3}" y="{:.3}" font-size="12" fill="{color}">{}</text>"#,
        view.x(tip) + 4.0,
        view.y(tip) - 4.0,
        escape(&axis.label)
    );
}

/// Deterministic SVG 1.1 rendering, 800x800 user units.
pub fn scene_to_svg(scene: &BiplotScene) -> String {
    let view = View::new(scene.clip_radius.max(MIN_AXIS_LENGTH));
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(out, r#"<rect x="0.5" y="0.5" width="799" height="799" fill="white" stroke="black"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="400" y="28" font-size="16" text-anchor="middle">{}</text>"#,
        escape(&scene.title)
    );
    let c = CANVAS / 2.0;
    let _ = writeln!(
        out,
        r##"<line x1="40" y1="{c}" x2="760" y2="{c}" stroke="#bbbbbb" stroke-width="0.5"/>"##
    );
    if !scene.one_dimensional {
        let _ = writeln!(
            out,
            r##"<line x1="{c}" y1="40" x2="{c}" y2="760" stroke="#bbbbbb" stroke-width="0.5"/>"##
        );
    }
    if let Some(points) = &scene.points {
        for p in points {
            let color = p
                .group
                .as_ref()
                .and_then(|g| scene.groups.iter().position(|x| x == g))
                .map_or("black", |k| PALETTE[k % PALETTE.len()]);
            let _ = writeln!(
                out,
                r#"<circle cx="{:.3}" cy="{:.3}" r="2.5" fill="{color}" fill-opacity="0.7"/>"#,
                view.x(p.position),
                view.y(p.position)
            );
        }
    }
    if let Some(projections) = &scene.projections {
        for pr in projections {
            let _ = writeln!(
                out,
                r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="green" stroke-width="0.8" stroke-dasharray="3,2"/>"#,
                view.x(pr.from),
                view.y(pr.from),
                view.x(pr.foot),
                view.y(pr.foot)
            );
        }
    }
    for axis in &scene.x_axes {
        draw_axis(&mut out, &view, axis, X_COLOR, scene.clip_radius);
    }
    for axis in &scene.y_axes {
        draw_axis(&mut out, &view, axis, Y_COLOR, scene.clip_radius);
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Svg,
    Json,
}

pub fn render(scene: &BiplotScene, format: Format, out: &Path) -> Result<()> {
    let body = match format {
        Format::Svg => scene_to_svg(scene),
        Format::Json => scene_to_json(scene)?,
    };
    std::fs::write(out, body).map_err(|e| Error::io(out, e))
}
