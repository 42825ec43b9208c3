//! Text formats: segment CSV, key=value intrinsics and configuration, and the
//! key-sorted registration report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use thiserror::Error;

use crate::geom::{CameraIntrinsics, LineSegment2D, LineSegment3D, Pose};
use crate::pipeline::{Diagnostics, PipelineConfig, Registration, StageTimings};
use crate::scalar::Real;
use crate::sim::{CampaignConfig, Method, SimConfig, SweepParam};
use crate::translation::{Correspondence, CorrespondenceSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}, column {col}: {msg}")]
    Malformed { line: usize, col: usize, msg: String },
    #[error("line {line}: segment endpoints coincide")]
    ZeroLengthSegment { line: usize },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    InvalidValue { line: usize, key: String, value: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
}

/// Non-blank, non-comment lines with their 1-based numbers; CR before LF is
/// dropped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n').enumerate().filter_map(|(i, l)| {
        let l = l.strip_suffix('\r').unwrap_or(l);
        let t = l.trim();
        (!t.is_empty() && !t.starts_with('#')).then_some((i + 1, l))
    })
}

fn parse_row<const N: usize>(line: usize, row: &str) -> Result<[f64; N], ParseError> {
    let mut out = [0.0; N];
    let mut col = 1;
    let mut n = 0;
    for field in row.split(',') {
        if n == N {
            return Err(ParseError::Malformed { line, col, msg: format!("expected {N} fields, found more") });
        }
        let v: f64 = field
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| ParseError::Malformed { line, col, msg: format!("`{}` is not a finite number", field.trim()) })?;
        out[n] = v;
        n += 1;
        col += field.chars().count() + 1;
    }
    if n < N {
        let col = row.chars().count() + 1;
        return Err(ParseError::Malformed { line, col, msg: format!("expected {N} fields, found {n}") });
    }
    Ok(out)
}

fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).unwrap_or_else(T::zero)
}

/// Rows `x1,y1,x2,y2` in pixels; row order defines segment indices.
pub fn parse_segments_2d<T: Real>(text: &str) -> Result<Vec<LineSegment2D<T>>, ParseError> {
    content_lines(text)
        .map(|(line, row)| {
            let [x1, y1, x2, y2] = parse_row::<4>(line, row)?;
            LineSegment2D::new(Point2::new(real(x1), real(y1)), Point2::new(real(x2), real(y2)))
                .map_err(|_| ParseError::ZeroLengthSegment { line })
        })
        .collect()
}

/// Rows `x1,y1,z1,x2,y2,z2` in scene units.
pub fn parse_segments_3d<T: Real>(text: &str) -> Result<Vec<LineSegment3D<T>>, ParseError> {
    content_lines(text)
        .map(|(line, row)| {
            let [x1, y1, z1, x2, y2, z2] = parse_row::<6>(line, row)?;
            LineSegment3D::new(Point3::new(real(x1), real(y1), real(z1)), Point3::new(real(x2), real(y2), real(z2)))
                .map_err(|_| ParseError::ZeroLengthSegment { line })
        })
        .collect()
}

pub fn write_segments_2d<T: Real>(segs: &[LineSegment2D<T>]) -> String {
    segs.iter().fold(String::new(), |mut s, g| {
        let _ = writeln!(s, "{},{},{},{}", g.p.x.as_f64(), g.p.y.as_f64(), g.q.x.as_f64(), g.q.y.as_f64());
        s
    })
}

pub fn write_segments_3d<T: Real>(segs: &[LineSegment3D<T>]) -> String {
    segs.iter().fold(String::new(), |mut s, g| {
        let [a, b] = [g.p, g.q].map(|p| p.coords.map(|c| c.as_f64()));
        let _ = writeln!(s, "{},{},{},{},{},{}", a.x, a.y, a.z, b.x, b.y, b.z);
        s
    })
}

/// `key=value` lines consumed key by key; whatever is left over is an
/// unknown key.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut entries = BTreeMap::new();
        for (line, row) in content_lines(text) {
            let Some((k, v)) = row.split_once('=') else {
                let col = row.chars().count() + 1;
                return Err(ParseError::Malformed { line, col, msg: "expected key=value".into() });
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ParseError::Malformed { line, col: 1, msg: "empty key".into() });
            }
            if entries.insert(key.clone(), (line, v.trim().to_string())).is_some() {
                return Err(ParseError::DuplicateKey { line, key });
            }
        }
        Ok(Self { entries })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Removes `key` and converts its value; `None` when absent.
    pub fn take_with<V>(&mut self, key: &str, f: impl FnOnce(&str) -> Option<V>) -> Result<Option<V>, ParseError> {
        let Some((line, value)) = self.entries.remove(key) else { return Ok(None) };
        f(&value).map(Some).ok_or(ParseError::InvalidValue { line, key: key.into(), value })
    }

    pub fn take<V: FromStr>(&mut self, key: &str) -> Result<Option<V>, ParseError> {
        self.take_with(key, |v| v.parse().ok())
    }

    pub fn require<V>(&mut self, key: &str, f: impl FnOnce(&str) -> Option<V>) -> Result<V, ParseError> {
        self.take_with(key, f)?.ok_or_else(|| ParseError::MissingKey(key.into()))
    }

    /// Fails on the earliest remaining key.
    pub fn finish(self) -> Result<(), ParseError> {
        match self.entries.into_iter().min_by_key(|(_, (line, _))| *line) {
            Some((key, (line, _))) => Err(ParseError::UnknownKey { line, key }),
            None => Ok(()),
        }
    }
}

fn parsed<V: FromStr>(v: &str) -> Option<V> {
    v.parse().ok()
}

fn finite(v: &str) -> Option<f64> {
    v.parse().ok().filter(|x: &f64| x.is_finite())
}

fn positive(v: &str) -> Option<f64> {
    finite(v).filter(|&x| x > 0.0)
}

fn non_negative(v: &str) -> Option<f64> {
    finite(v).filter(|&x| x >= 0.0)
}

fn fraction(v: &str) -> Option<f64> {
    finite(v).filter(|&x| (0.0..=1.0).contains(&x))
}

fn count(v: &str) -> Option<usize> {
    v.parse().ok().filter(|&n| n > 0)
}

fn list<V>(v: &str, f: impl Fn(&str) -> Option<V>) -> Option<Vec<V>> {
    v.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(f).collect()
}

/// `fx`, `fy`, `cx`, `cy`, all required; focal lengths must be positive.
pub fn parse_intrinsics<T: Real>(text: &str) -> Result<CameraIntrinsics<T>, ParseError> {
    let mut kv = KeyValues::parse(text)?;
    let fx = kv.require("fx", positive)?;
    let fy = kv.require("fy", positive)?;
    let cx = kv.require("cx", finite)?;
    let cy = kv.require("cy", finite)?;
    kv.finish()?;
    Ok(CameraIntrinsics { fx: real(fx), fy: real(fy), cx: real(cx), cy: real(cy) })
}

pub fn write_intrinsics<T: Real>(k: &CameraIntrinsics<T>) -> String {
    format!("fx={}\nfy={}\ncx={}\ncy={}\n", k.fx.as_f64(), k.fy.as_f64(), k.cx.as_f64(), k.cy.as_f64())
}

macro_rules! take_into {
    ($kv:expr, $key:literal, $check:expr, $dst:expr) => {
        if let Some(v) = $kv.take_with($key, $check)? {
            $dst = v;
        }
    };
    ($kv:expr, $key:literal, $check:expr, $dst:expr, real) => {
        if let Some(v) = $kv.take_with($key, $check)? {
            $dst = real(v);
        }
    };
}

/// Applies `cluster.*`, `ransac.*`, `refine.*` and `seed` overrides.
pub fn apply_pipeline_keys<T: Real>(kv: &mut KeyValues, cfg: &mut PipelineConfig<T>) -> Result<(), ParseError> {
    let c = &mut cfg.cluster;
    take_into!(kv, "cluster.num_clusters", count, c.num_clusters);
    take_into!(kv, "cluster.inlier_angle_2d", positive, c.inlier_angle_2d, real);
    take_into!(kv, "cluster.inlier_angle_3d", positive, c.inlier_angle_3d, real);
    take_into!(kv, "cluster.merge_angle", non_negative, c.merge_angle, real);
    take_into!(kv, "cluster.ransac_iters", count, c.ransac_iters);
    take_into!(kv, "cluster.keep", |v: &str| count(v).filter(|&n| n >= 2), c.keep);
    let r = &mut cfg.ransac;
    take_into!(kv, "ransac.max_iters", count, r.max_iters);
    take_into!(kv, "ransac.overlap_fraction", fraction, r.overlap_fraction, real);
    take_into!(kv, "ransac.early_exit_fraction", fraction, r.early_exit_fraction, real);
    take_into!(kv, "ransac.coplanarity_angle", positive, r.coplanarity_angle, real);
    take_into!(kv, "ransac.orientation_gate", positive, r.orientation_gate, real);
    take_into!(kv, "ransac.min_2d_length", non_negative, r.min_2d_length, real);
    if let Some(v) = kv.take_with("ransac.min_3d_length", non_negative)? {
        r.min_3d_length = Some(real(v));
    }
    take_into!(kv, "ransac.guided_sampling", parsed, r.guided_sampling);
    let f = &mut cfg.refine;
    take_into!(kv, "refine.max_lm_iters", count, f.max_lm_iters);
    take_into!(kv, "refine.max_outlier_rounds", parsed, f.max_outlier_rounds);
    take_into!(kv, "refine.outlier_px", positive, f.outlier_px, real);
    take_into!(kv, "refine.max_drop_fraction", fraction, f.max_drop_fraction, real);
    take_into!(kv, "refine.lm_init_damping", positive, f.lm_init_damping, real);
    take_into!(kv, "refine.convergence_tol", non_negative, f.convergence_tol, real);
    take_into!(kv, "refine.enabled", parsed, cfg.refine_enabled);
    take_into!(kv, "seed", parsed, cfg.seed);
    Ok(())
}

/// Full pipeline configuration file; unknown keys are rejected.
pub fn parse_pipeline_config<T: Real>(text: &str) -> Result<PipelineConfig<T>, ParseError> {
    let mut kv = KeyValues::parse(text)?;
    let mut cfg = PipelineConfig::default();
    apply_pipeline_keys(&mut kv, &mut cfg)?;
    kv.finish()?;
    Ok(cfg)
}

/// Applies the scene-generator keys.
pub fn apply_sim_keys(kv: &mut KeyValues, cfg: &mut SimConfig) -> Result<(), ParseError> {
    take_into!(kv, "n_lines", parsed, cfg.n_lines);
    take_into!(kv, "n_families", parsed, cfg.n_families);
    take_into!(kv, "outlier_frac_3d", finite, cfg.outlier_frac_3d);
    take_into!(kv, "outlier_frac_2d", finite, cfg.outlier_frac_2d);
    take_into!(kv, "occlusion_frac", finite, cfg.occlusion_frac);
    take_into!(kv, "noise_sigma", finite, cfg.noise_sigma);
    take_into!(kv, "image_w", finite, cfg.image_w);
    take_into!(kv, "image_h", finite, cfg.image_h);
    take_into!(kv, "f", finite, cfg.f);
    take_into!(kv, "scene_box", finite, cfg.scene_box);
    take_into!(kv, "n_trials", parsed, cfg.n_trials);
    take_into!(kv, "rng_seed", parsed, cfg.rng_seed);
    Ok(())
}

pub fn parse_sim_config(text: &str) -> Result<SimConfig, ParseError> {
    let mut kv = KeyValues::parse(text)?;
    let mut cfg = SimConfig::default();
    apply_sim_keys(&mut kv, &mut cfg)?;
    kv.finish()?;
    Ok(cfg)
}

/// Campaign file: `sweep` and `values` required, optional `methods`, plus any
/// scene and pipeline keys.
pub fn parse_campaign_config(text: &str) -> Result<CampaignConfig, ParseError> {
    let mut kv = KeyValues::parse(text)?;
    let sweep = kv.require("sweep", SweepParam::from_name)?;
    let values = kv.require("values", |v| list(v, finite).filter(|l| !l.is_empty()))?;
    let methods = kv.take_with("methods", |v| list(v, Method::from_name).filter(|l| !l.is_empty()))?;
    let mut base = SimConfig::default();
    apply_sim_keys(&mut kv, &mut base)?;
    let mut pipeline = PipelineConfig::default();
    apply_pipeline_keys(&mut kv, &mut pipeline)?;
    kv.finish()?;
    Ok(CampaignConfig { base, sweep, values, pipeline, methods: methods.unwrap_or_else(|| vec![Method::Vp, Method::Baseline]) })
}

fn num<T: Real>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

fn join<I: IntoIterator<Item = String>>(items: I) -> String {
    items.into_iter().collect::<Vec<_>>().join(" ")
}

fn pairs(corrs: &[Correspondence]) -> String {
    join(corrs.iter().map(|c| format!("{}:{}", c.idx2d, c.idx3d)))
}

fn pose_entries<T: Real>(pose: &Pose<T>, corrs: &[Correspondence], out: &mut BTreeMap<String, String>) {
    let r = &pose.rotation;
    out.insert("rotation".into(), join((0..3).flat_map(|i| (0..3).map(move |j| num(r[(i, j)])))));
    out.insert("translation".into(), join(pose.translation.iter().map(|&x| num(x))));
    out.insert("correspondences".into(), pairs(corrs));
}

fn render(entries: &BTreeMap<String, String>) -> String {
    entries.iter().fold(String::new(), |mut s, (k, v)| {
        let _ = writeln!(s, "{}", format!("{k} = {v}").trim_end());
        s
    })
}

/// Deterministic report, one `key = value` line per entry in key order;
/// reals carry 17 significant digits. `timings == false` omits wall-clock
/// entries.
pub fn write_report<T: Real>(reg: &Registration<T>, timings: bool) -> String {
    let mut e = BTreeMap::new();
    pose_entries(&reg.pose, &reg.correspondences, &mut e);
    let d = &reg.diagnostics;
    let ints = |v: &[usize]| join(v.iter().map(|n| n.to_string()));
    let mut put = |k: &str, v: String| {
        e.insert(format!("diagnostics.{k}"), v);
    };
    put("cluster_populations_2d", ints(&d.cluster_populations_2d));
    put("cluster_populations_3d", ints(&d.cluster_populations_3d));
    put("candidate_count", d.candidate_count.to_string());
    put("candidate_scores", ints(&d.candidate_scores));
    put("selected_candidate", d.selected_candidate.to_string());
    put("ransac_score", d.ransac_score.to_string());
    put("refine_cost_history", join(d.refine_cost_history.iter().map(|&c| num(c))));
    put("outlier_rounds", d.outlier_rounds.to_string());
    put("reassociations", d.reassociations.to_string());
    put("converged", d.converged.to_string());
    if timings {
        let t = &d.timings;
        for (k, v) in [
            ("clustering", t.clustering),
            ("rotation", t.rotation),
            ("translation", t.translation),
            ("refinement", t.refinement),
            ("total", t.total),
        ] {
            put(&format!("timings.{k}"), num(v));
        }
    }
    render(&e)
}

fn reals<T: Real>(v: &str) -> Option<Vec<T>> {
    list(v, finite).map(|l| l.into_iter().map(real).collect())
}

fn correspondences(v: &str) -> Option<CorrespondenceSet> {
    list(v, |p| {
        let (a, b) = p.split_once(':')?;
        Some(Correspondence::new(a.parse().ok()?, b.parse().ok()?))
    })
}

fn take_pose<T: Real>(kv: &mut KeyValues) -> Result<(Pose<T>, CorrespondenceSet), ParseError> {
    let r = kv.require("rotation", |v| reals::<T>(v).filter(|l| l.len() == 9))?;
    let t = kv.require("translation", |v| reals::<T>(v).filter(|l| l.len() == 3))?;
    let corrs = kv.require("correspondences", correspondences)?;
    Ok((Pose::new(Matrix3::from_row_slice(&r), Vector3::from_column_slice(&t)), corrs))
}

/// Inverse of [`write_report`]; absent timings read as zero.
pub fn parse_report<T: Real>(text: &str) -> Result<Registration<T>, ParseError> {
    let mut kv = KeyValues::parse(text)?;
    let (pose, correspondences) = take_pose(&mut kv)?;
    let ints = |v: &str| list(v, |n| n.parse().ok());
    let mut timings = StageTimings::default();
    for (k, dst) in [
        ("diagnostics.timings.clustering", &mut timings.clustering),
        ("diagnostics.timings.rotation", &mut timings.rotation),
        ("diagnostics.timings.translation", &mut timings.translation),
        ("diagnostics.timings.refinement", &mut timings.refinement),
        ("diagnostics.timings.total", &mut timings.total),
    ] {
        if let Some(v) = kv.take_with(k, finite)? {
            *dst = v;
        }
    }
    let diagnostics = Diagnostics {
        cluster_populations_2d: kv.require("diagnostics.cluster_populations_2d", ints)?,
        cluster_populations_3d: kv.require("diagnostics.cluster_populations_3d", ints)?,
        candidate_count: kv.require("diagnostics.candidate_count", parsed)?,
        candidate_scores: kv.require("diagnostics.candidate_scores", ints)?,
        selected_candidate: kv.require("diagnostics.selected_candidate", parsed)?,
        ransac_score: kv.require("diagnostics.ransac_score", parsed)?,
        refine_cost_history: kv.require("diagnostics.refine_cost_history", reals)?,
        outlier_rounds: kv.require("diagnostics.outlier_rounds", parsed)?,
        reassociations: kv.require("diagnostics.reassociations", parsed)?,
        converged: kv.require("diagnostics.converged", parsed)?,
        timings,
    };
    kv.finish()?;
    Ok(Registration { pose, correspondences, diagnostics })
}

/// Generator pose and true pairing, in the report's pose format.
pub fn write_ground_truth<T: Real>(pose: &Pose<T>, pairing: &[Correspondence]) -> String {
    let mut e = BTreeMap::new();
    pose_entries(pose, pairing, &mut e);
    render(&e)
}

pub fn parse_ground_truth<T: Real>(text: &str) -> Result<(Pose<T>, CorrespondenceSet), ParseError> {
    let mut kv = KeyValues::parse(text)?;
    let out = take_pose(&mut kv)?;
    kv.finish()?;
    Ok(out)
}
