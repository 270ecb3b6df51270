//! Input-gradient saliency maps (time step x feature), averaging over a
//! cohort, and CSV / SVG export.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Cohort, STEPS};
use crate::exec::Exec;
use crate::hrv::{feature_index, FEATURE_NAMES, N_FEATURES};
use crate::nnet::{input_gradient, ModelParams, NnError, Tensor, HEAD_NAMES};

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("cannot average saliency over an empty cohort")]
    EmptyCohort,
    #[error("non-finite saliency value")]
    NonFinite,
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SaliencyError>;

/// Gradient of one head's pre-sigmoid score with respect to a 24 x 25
/// input window, stored row-major by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub values: Vec<f64>,
    pub feature_names: Vec<String>,
    pub head: String,
}

impl SaliencyMap {
    fn from_values(values: Vec<f64>, head: usize) -> Result<Self> {
        if values.len() != STEPS * N_FEATURES {
            return Err(NnError::ShapeMismatch(format!("saliency of length {}", values.len())).into());
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SaliencyError::NonFinite);
        }
        Ok(SaliencyMap {
            values,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            head: HEAD_NAMES[head].to_string(),
        })
    }

    pub fn get(&self, step: usize, feature: usize) -> f64 {
        self.values[step * N_FEATURES + feature]
    }

    pub fn magnitude(&self) -> SaliencyMap {
        SaliencyMap { values: self.values.iter().map(|v| v.abs()).collect(), ..self.clone() }
    }

    /// Sum of absolute values over the named feature columns.
    pub fn l1_mass(&self, features: &[&str]) -> Result<f64> {
        let cols = features
            .iter()
            .map(|f| feature_index(f).ok_or_else(|| SaliencyError::UnknownFeature(f.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..STEPS).flat_map(|s| cols.iter().map(move |&c| (s, c))).map(|(s, c)| self.get(s, c).abs()).sum())
    }

    /// Share of the total L1 mass that falls on the named columns.
    pub fn l1_share(&self, features: &[&str]) -> Result<f64> {
        let total: f64 = self.values.iter().map(|v| v.abs()).sum();
        Ok(if total > 0.0 { self.l1_mass(features)? / total } else { 0.0 })
    }

    /// 24 rows, one column per feature, header of feature names.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,{}", self.feature_names.join(","))?;
        for s in 0..STEPS {
            let row: Vec<String> = (0..N_FEATURES).map(|f| format!("{:e}", self.get(s, f))).collect();
            writeln!(w, "{s},{}", row.join(","))?;
        }
        Ok(())
    }

    /// Heatmap with features on the x axis and steps on the y axis. Blue is
    /// negative, red positive, white zero; the scale is symmetric about 0.
    pub fn to_svg(&self) -> String {
        const CELL: usize = 24;
        const LEFT: usize = 40;
        const TOP: usize = 110;
        let width = LEFT + N_FEATURES * CELL + 10;
        let height = TOP + STEPS * CELL + 10;
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
        );
        let _ = writeln!(svg, r#"<text x="{LEFT}" y="12">saliency: {} head (max |value| {scale:.3e})</text>"#, self.head);
        for (f, name) in self.feature_names.iter().enumerate() {
            let x = LEFT + f * CELL + CELL / 2;
            let y = TOP - 4;
            let _ = writeln!(svg, r#"<text x="{x}" y="{y}" transform="rotate(-60 {x} {y})">{name}</text>"#);
        }
        for s in 0..STEPS {
            let y = TOP + s * CELL;
            let _ = writeln!(svg, r#"<text x="4" y="{}">{s}</text>"#, y + CELL / 2 + 3);
            for f in 0..N_FEATURES {
                let t = if scale > 0.0 { self.get(s, f) / scale } else { 0.0 };
                let (r, g, b) = diverging(t);
                let _ = writeln!(
                    svg,
                    r#"<rect x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({r},{g},{b})"/>"#,
                    LEFT + f * CELL
                );
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn diverging(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(-1.0, 1.0);
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        (255, fade, fade)
    } else {
        (fade, fade, 255)
    }
}

/// Saliency of one sample for `head`, with dropout off.
pub fn saliency_for_sample(params: &ModelParams, input: &Tensor, head: usize) -> Result<SaliencyMap> {
    SaliencyMap::from_values(input_gradient(params, input, head)?.into_data(), head)
}

/// Element-wise mean of per-sample maps, summed in cohort order with
/// Neumaier compensation.
pub fn average_saliency(params: &ModelParams, cohort: &Cohort, head: usize, exec: Exec) -> Result<SaliencyMap> {
    if cohort.is_empty() {
        return Err(SaliencyError::EmptyCohort);
    }
    let maps = exec.map(cohort.windows(), |_, w| saliency_for_sample(params, &w.input_tensor(), head));
    let maps = maps.into_iter().collect::<Result<Vec<_>>>()?;
    mean_of_maps(&maps, head)
}

pub(crate) fn mean_of_maps(maps: &[SaliencyMap], head: usize) -> Result<SaliencyMap> {
    if maps.is_empty() {
        return Err(SaliencyError::EmptyCohort);
    }
    let n = maps.len() as f64;
    let values = (0..STEPS * N_FEATURES)
        .map(|k| neumaier_sum(maps.iter().map(|m| m.values[k])) / n)
        .collect();
    SaliencyMap::from_values(values, head)
}

fn neumaier_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
