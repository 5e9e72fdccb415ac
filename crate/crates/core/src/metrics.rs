//! Evaluation metrics: Hausdorff distances between grasp rectangles and
//! ROC AUC of affordance scores.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use crate::error::{Error, Result};

pub type Point2 = [f64; 2];

pub const DEFAULT_SAMPLES_PER_SIDE: usize = 64;

#[inline]
fn dist2(a: &Point2, b: &Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// `max_{a∈A} min_{b∈B} ‖a − b‖`.
pub fn directed_hausdorff(a: &[Point2], b: &[Point2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("point set"));
    }
    let mut worst = 0.0f64;
    for p in a {
        let mut best = f64::INFINITY;
        for q in b {
            let d = dist2(p, q);
            if d < best {
                best = d;
                // p cannot raise the maximum any more
                if best <= worst {
                    break;
                }
            }
        }
        worst = worst.max(best);
    }
    Ok(worst.sqrt())
}

/// `max(d_h(A, B), d_h(B, A))`.
pub fn hausdorff(a: &[Point2], b: &[Point2]) -> Result<f64> {
    Ok(directed_hausdorff(a, b)?.max(directed_hausdorff(b, a)?))
}

/// An oriented rectangle in image coordinates divided by the image diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionRect {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Counter-clockwise rotation in radians.
    pub angle: f64,
}

impl RegionRect {
    pub fn new(cx: f64, cy: f64, width: f64, height: f64, angle: f64) -> Self {
        RegionRect {
            cx,
            cy,
            width,
            height,
            angle,
        }
    }

    /// From pixel units with the angle in degrees.
    pub fn from_pixels(
        cx: f64,
        cy: f64,
        w: f64,
        h: f64,
        angle_deg: f64,
        image_w: f64,
        image_h: f64,
    ) -> Result<Self> {
        if !(image_w > 0.0 && image_h > 0.0) {
            return Err(Error::Invalid(format!(
                "image size {image_w}x{image_h} is not positive"
            )));
        }
        let d = image_w.hypot(image_h);
        let r = RegionRect::new(cx / d, cy / d, w / d, h / d, angle_deg.to_radians());
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.width, self.height, self.angle]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.width > 0.0) || !(self.height > 0.0) {
            return Err(Error::Degenerate(format!(
                "rectangle {self:?} is degenerate"
            )));
        }
        Ok(())
    }

    pub fn corners(&self) -> [Point2; 4] {
        let (s, c) = self.angle.sin_cos();
        let (hw, hh) = (0.5 * self.width, 0.5 * self.height);
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
            .map(|(x, y)| [self.cx + c * x - s * y, self.cy + s * x + c * y])
    }

    /// `4 · per_side` points: each side from its first corner (included) to
    /// the next (excluded) at equal steps.
    pub fn perimeter(&self, per_side: usize) -> Vec<Point2> {
        let k = self.corners();
        let mut out = Vec::with_capacity(4 * per_side);
        for i in 0..4 {
            let (a, b) = (k[i], k[(i + 1) % 4]);
            for j in 0..per_side {
                let t = j as f64 / per_side as f64;
                out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        out
    }
}

/// Symmetric Hausdorff distance between the sampled perimeters.
pub fn rect_hausdorff(a: &RegionRect, b: &RegionRect, per_side: usize) -> Result<f64> {
    if per_side < 2 {
        return Err(Error::Invalid(
            "at least 2 samples per side are required".into(),
        ));
    }
    a.validate()?;
    b.validate()?;
    hausdorff(&a.perimeter(per_side), &b.perimeter(per_side))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredLabel {
    pub score: f64,
    pub positive: bool,
}

/// `(2U, 2·P·N)`, where U is the Mann–Whitney statistic of the positives
/// with ties counted as one half. The AUC is their ratio.
pub fn auc_rational(scored: &[ScoredLabel]) -> Result<(u128, u128)> {
    if let Some(s) = scored.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Invalid(format!("score {} is not finite", s.score)));
    }
    let pos = scored.iter().filter(|s| s.positive).count() as u128;
    let neg = scored.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass {
            positives: pos as usize,
            negatives: neg as usize,
        });
    }
    let mut sorted: Vec<&ScoredLabel> = scored.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut two_u = 0u128;
    let mut below = 0u128;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            if sorted[j].positive {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        two_u += p * (2 * below + n);
        below += n;
        i = j;
    }
    Ok((two_u, 2 * pos * neg))
}

pub fn auc(scored: &[ScoredLabel]) -> Result<f64> {
    let (num, den) = auc_rational(scored)?;
    Ok(num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AucReport {
    pub per_affordance: BTreeMap<String, f64>,
    /// Affordances without both classes.
    pub skipped: Vec<String>,
    pub mean: f64,
}

/// AUC of each affordance over `(affordance, score, is_positive)` triples
/// and their unweighted mean.
pub fn mean_auc_per_affordance<S: AsRef<str>>(predictions: &[(S, f64, bool)]) -> Result<AucReport> {
    let mut groups: BTreeMap<&str, Vec<ScoredLabel>> = BTreeMap::new();
    for (a, score, positive) in predictions {
        groups.entry(a.as_ref()).or_default().push(ScoredLabel {
            score: *score,
            positive: *positive,
        });
    }
    let mut per_affordance = BTreeMap::new();
    let mut skipped = Vec::new();
    for (a, scored) in groups {
        match auc(&scored) {
            Ok(v) => {
                per_affordance.insert(a.to_string(), v);
            }
            Err(Error::SingleClass {
                positives,
                negatives,
            }) => {
                log::warn!(
                    "skipping affordance `{a}`: {positives} positives, {negatives} negatives"
                );
                skipped.push(a.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if per_affordance.is_empty() {
        return Err(Error::Empty("evaluable affordances"));
    }
    let mean = per_affordance.values().sum::<f64>() / per_affordance.len() as f64;
    Ok(AucReport {
        per_affordance,
        skipped,
        mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Gt,
    Pred,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RectRecord {
    pub image_id: String,
    pub role: Role,
    pub rect: RegionRect,
}

pub const RECT_HEADER: &str = "image_id,role,cx,cy,w,h,angle,image_width,image_height";

#[derive(Debug, serde::Deserialize)]
struct RectRow {
    image_id: String,
    role: String,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    angle: f64,
    image_width: f64,
    image_height: f64,
}

/// Parses the rectangle CSV (pixels, angle in degrees) and normalises every
/// rectangle by its image diagonal.
pub fn parse_rect_csv(text: &str) -> Result<Vec<RectRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(1, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != RECT_HEADER {
        return Err(Error::parse(
            1,
            1,
            format!("expected header `{RECT_HEADER}`"),
        ));
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<RectRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, 1, e.to_string())
        })?;
        let line = out.len() + 2;
        let role = match row.role.as_str() {
            "gt" => Role::Gt,
            "pred" => Role::Pred,
            other => {
                return Err(Error::parse(
                    line,
                    1,
                    format!("role must be gt or pred, not `{other}`"),
                ))
            }
        };
        let rect = RegionRect::from_pixels(
            row.cx,
            row.cy,
            row.w,
            row.h,
            row.angle,
            row.image_width,
            row.image_height,
        )
        .map_err(|e| Error::parse(line, 1, e.to_string()))?;
        out.push(RectRecord {
            image_id: row.image_id,
            role,
            rect,
        });
    }
    Ok(out)
}

pub const SCORE_HEADER: &str = "affordance,score,label";

#[derive(Debug, serde::Deserialize)]
struct ScoreRow {
    affordance: String,
    score: f64,
    label: String,
}

/// Parses `affordance,score,label` rows; the label is `1`/`0` or
/// `true`/`false`.
pub fn parse_score_csv(text: &str) -> Result<Vec<(String, f64, bool)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse(1, 1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != SCORE_HEADER {
        return Err(Error::parse(
            1,
            1,
            format!("expected header `{SCORE_HEADER}`"),
        ));
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<ScoreRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, 1, e.to_string())
        })?;
        let positive = match row.label.as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(Error::parse(
                    out.len() + 2,
                    1,
                    format!("label must be 0/1 or true/false, not `{other}`"),
                ))
            }
        };
        out.push((row.affordance, row.score, positive));
    }
    Ok(out)
}

impl AucReport {
    /// `affordance,auc` rows followed by the mean, six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("affordance,auc\n");
        for (a, v) in &self.per_affordance {
            writeln!(out, "{a},{v:.6}").unwrap();
        }
        writeln!(out, "mean,{:.6}", self.mean).unwrap();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HausdorffReport {
    /// `(image id, d_h)` in image-id order.
    pub per_image: Vec<(String, f64)>,
    /// `(name, value)`: min, q25, median, q75, max, mean.
    pub summary: Vec<(String, f64)>,
    /// Images with `d_h ≤ 0.1`.
    pub nearby: usize,
    /// Images with `d_h ≥ 0.4`.
    pub far: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Symmetric d_h between the ground-truth and predicted rectangle of each
/// image; every image needs exactly one of each.
pub fn hausdorff_report(records: &[RectRecord], per_side: usize) -> Result<HausdorffReport> {
    let mut by_image: BTreeMap<&str, (Vec<&RegionRect>, Vec<&RegionRect>)> = BTreeMap::new();
    for r in records {
        let e = by_image.entry(&r.image_id).or_default();
        match r.role {
            Role::Gt => e.0.push(&r.rect),
            Role::Pred => e.1.push(&r.rect),
        }
    }
    let bad: Vec<String> = by_image
        .iter()
        .filter(|(_, (g, p))| g.len() != 1 || p.len() != 1)
        .map(|(id, (g, p))| {
            format!(
                "image `{id}` has {} gt and {} pred rectangles",
                g.len(),
                p.len()
            )
        })
        .collect();
    if !bad.is_empty() {
        return Err(Error::Validation(bad));
    }
    if by_image.is_empty() {
        return Err(Error::Empty("rectangles"));
    }
    let mut per_image = Vec::with_capacity(by_image.len());
    for (id, (g, p)) in &by_image {
        per_image.push((id.to_string(), rect_hausdorff(g[0], p[0], per_side)?));
    }
    let mut values: Vec<f64> = per_image.iter().map(|x| x.1).collect();
    values.sort_by(f64::total_cmp);
    let summary = vec![
        ("min".to_string(), values[0]),
        ("q25".to_string(), quantile(&values, 0.25)),
        ("median".to_string(), quantile(&values, 0.5)),
        ("q75".to_string(), quantile(&values, 0.75)),
        ("max".to_string(), values[values.len() - 1]),
        (
            "mean".to_string(),
            values.iter().sum::<f64>() / values.len() as f64,
        ),
    ];
    Ok(HausdorffReport {
        nearby: values.iter().filter(|&&v| v <= 0.1).count(),
        far: values.iter().filter(|&&v| v >= 0.4).count(),
        per_image,
        summary,
    })
}

impl HausdorffReport {
    /// `image_id,d_h` rows followed by `summary:<stat>` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,d_h\n");
        for (id, d) in &self.per_image {
            writeln!(out, "{id},{d:.6}").unwrap();
        }
        for (name, v) in &self.summary {
            writeln!(out, "summary:{name},{v:.6}").unwrap();
        }
        writeln!(out, "summary:nearby_le_0.1,{}", self.nearby).unwrap();
        writeln!(out, "summary:far_ge_0.4,{}", self.far).unwrap();
        out
    }
}
