//! From a region label to a grasp pose: k-means over the object's points,
//! a least-squares plane per patch, and a pose on that plane.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::rng;

pub type Vec3 = Vector3<f64>;

pub const DEFAULT_RESTARTS: usize = 20;
const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Ground-truth region of each point, when known.
    pub labels: Option<Vec<String>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud {
            points,
            labels: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self
            .points
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::Invalid(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.points.len() {
                return Err(Error::Invalid(
                    "label count differs from point count".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        mean(self.points.iter())
    }

    /// Length of the axis-aligned bounding-box diagonal.
    pub fn diagonal(&self) -> f64 {
        let Some(first) = self.points.first() else {
            return 0.0;
        };
        let (lo, hi) = self
            .points
            .iter()
            .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        (hi - lo).norm()
    }

    /// Applies `p ↦ R p + t` to every point.
    pub fn transformed(&self, rotation: &Rotation3<f64>, translation: &Vec3) -> Self {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| rotation * p + translation)
                .collect(),
            labels: self.labels.clone(),
        }
    }

    /// Indices of the points carrying `label`.
    pub fn labelled(&self, label: &str) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| l[i] == label).collect(),
            None => Vec::new(),
        }
    }

    /// Reads either format, recognising PLY by its magic line.
    pub fn read(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(b"ply") {
            Self::read_ply(bytes)
        } else {
            let text = std::str::from_utf8(bytes)
                .map_err(|_| Error::Invalid("point file is neither PLY nor UTF-8 text".into()))?;
            Self::read_xyz(text)
        }
    }

    /// `x y z [label]` per line; `#` starts a comment.
    pub fn read_xyz(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(Error::parse(n + 1, 1, "expected `x y z [label]`"));
            }
            let mut p = [0.0; 3];
            for (k, f) in fields[..3].iter().enumerate() {
                p[k] = f
                    .parse()
                    .map_err(|_| Error::parse(n + 1, 1, format!("bad coordinate `{f}`")))?;
            }
            points.push(Vec3::from(p));
            labels.push(fields.get(3).map(|s| s.to_string()));
        }
        let labels = if labels.iter().all(Option::is_some) && !labels.is_empty() {
            Some(labels.into_iter().map(Option::unwrap).collect())
        } else if labels.iter().all(Option::is_none) {
            None
        } else {
            return Err(Error::Invalid(
                "either every point or no point must carry a label".into(),
            ));
        };
        let cloud = PointCloud { points, labels };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn write_xyz(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.points.iter().enumerate() {
            out.push_str(&format!("{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z));
            if let Some(l) = &self.labels {
                out.push(' ');
                out.push_str(&l[i]);
            }
            out.push('\n');
        }
        out
    }

    /// Binary little-endian PLY with a single `vertex` element. `x`, `y`,
    /// `z` are required and `label` is optional; other scalar properties
    /// are skipped.
    pub fn read_ply(bytes: &[u8]) -> Result<Self> {
        let header_end = find(bytes, b"end_header\n")
            .ok_or_else(|| Error::Invalid("PLY header has no `end_header`".into()))?;
        let header = std::str::from_utf8(&bytes[..header_end])
            .map_err(|_| Error::Invalid("PLY header is not text".into()))?;
        let mut body = &bytes[header_end + b"end_header\n".len()..];
        let mut count = None;
        let mut props: Vec<(String, usize)> = Vec::new();
        for (n, line) in header.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = |m: &str| Error::parse(n + 1, 1, m.to_string());
            match f.as_slice() {
                ["ply"] | [] => {}
                ["comment", ..] | ["obj_info", ..] => {}
                ["format", "binary_little_endian", "1.0"] => {}
                ["format", ..] => {
                    return Err(bad("only binary_little_endian 1.0 PLY is supported"))
                }
                ["element", "vertex", c] => {
                    count = Some(c.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
                }
                ["element", ..] => return Err(bad("only a single vertex element is supported")),
                ["property", "list", ..] => return Err(bad("list properties are not supported")),
                ["property", ty, name] => {
                    let size = match *ty {
                        "char" | "uchar" | "int8" | "uint8" => 1,
                        "short" | "ushort" | "int16" | "uint16" => 2,
                        "int" | "uint" | "float" | "int32" | "uint32" | "float32" => 4,
                        "double" | "float64" => 8,
                        _ => return Err(bad("unknown property type")),
                    };
                    props.push((format!("{ty} {name}"), size));
                }
                _ => return Err(bad("unrecognised header line")),
            }
        }
        let count = count.ok_or_else(|| Error::Invalid("PLY has no vertex element".into()))?;
        let offset = |key: &str| {
            let mut off = 0;
            for (p, size) in &props {
                if p == key {
                    return Some(off);
                }
                off += size;
            }
            None
        };
        let (Some(ox), Some(oy), Some(oz)) =
            (offset("float x"), offset("float y"), offset("float z"))
        else {
            return Err(Error::Invalid(
                "PLY vertices need `float x`, `float y`, `float z`".into(),
            ));
        };
        let olabel = offset("uchar label");
        let stride: usize = props.iter().map(|p| p.1).sum();
        if body.len() < stride * count {
            return Err(Error::Invalid("PLY body is truncated".into()));
        }
        let f32_at =
            |rec: &[u8], o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
        let mut points = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let (rec, rest) = body.split_at(stride);
            points.push(Vec3::new(f32_at(rec, ox), f32_at(rec, oy), f32_at(rec, oz)));
            if let Some(o) = olabel {
                labels.push(rec[o].to_string());
            }
            body = rest;
        }
        let cloud = PointCloud {
            points,
            labels: olabel.map(|_| labels),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    /// Coordinates are stored as `float`; labels, if any, must be integers
    /// in `0..=255`.
    pub fn write_ply(&self) -> Result<Vec<u8>> {
        let labels: Option<Vec<u8>> = match &self.labels {
            Some(l) => Some(
                l.iter()
                    .map(|s| {
                        s.parse::<u8>().map_err(|_| {
                            Error::Invalid(format!("label `{s}` does not fit a PLY uchar"))
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
            None => None,
        };
        let mut out = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
             property float x\nproperty float y\nproperty float z\n",
            self.points.len()
        )
        .into_bytes();
        if labels.is_some() {
            out.extend_from_slice(b"property uchar label\n");
        }
        out.extend_from_slice(b"end_header\n");
        for (i, p) in self.points.iter().enumerate() {
            for c in [p.x, p.y, p.z] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
            if let Some(l) = &labels {
                out.push(l[i]);
            }
        }
        Ok(out)
    }
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn mean<'a>(points: impl Iterator<Item = &'a Vec3>) -> Vec3 {
    let mut sum = Vec3::zeros();
    let mut n = 0usize;
    for p in points {
        sum += p;
        n += 1;
    }
    if n == 0 {
        sum
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster of each point.
    pub assignment: Vec<usize>,
    pub centers: Vec<Vec3>,
    pub inertia: f64,
    /// Restart that produced this solution.
    pub restart: usize,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

fn nearest(p: &Vec3, centers: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec3], k: usize, rng: &mut rng::Rng) -> Vec<Vec3> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| (p - centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap();
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[next]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - points[next]).norm_squared());
        }
    }
    centers
}

fn lloyd(points: &[Vec3], mut centers: Vec<Vec3>) -> (Vec<usize>, Vec<Vec3>, Vec<f64>) {
    let k = centers.len();
    let mut assignment = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        let mut inertia = 0.0;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (j, d) = nearest(p, &centers);
            inertia += d;
            changed |= *a != j;
            *a = j;
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            sums[a] += p;
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j] / counts[j] as f64;
            } else {
                // move an empty centre onto the worst-served point
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = (points[a] - centers[assignment[a]]).norm_squared();
                        let db = (points[b] - centers[assignment[b]]).norm_squared();
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                centers[j] = points[far];
                assignment[far] = j;
            }
        }
    }
    (assignment, centers, history)
}

/// k-means with k-means++ seeding; the restart with the lowest inertia
/// wins, ties going to the lower restart index.
pub fn kmeans(points: &[Vec3], k: usize, restarts: usize, seed: u64) -> Result<Clustering> {
    if k == 0 || restarts == 0 {
        return Err(Error::Invalid("k and restarts must be positive".into()));
    }
    if points.len() < k {
        return Err(Error::Invalid(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let mut distinct: Vec<[u64; 3]> = points
        .iter()
        .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Degenerate(format!(
            "only {} distinct points for {k} clusters",
            distinct.len()
        )));
    }
    let runs = par::map_indexed(restarts, |r| {
        let mut rng = rng::stream(seed, r as u64);
        let centers = plus_plus(points, k, &mut rng);
        lloyd(points, centers)
    });
    let (restart, (assignment, centers, history)) = runs
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            a.2.last()
                .unwrap()
                .total_cmp(b.2.last().unwrap())
                .then(i.cmp(j))
        })
        .unwrap();
    Ok(Clustering {
        inertia: *history.last().unwrap(),
        assignment,
        centers,
        restart,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plane {
    pub centroid: [f64; 3],
    /// Unit normal, oriented away from the reference point.
    pub normal: [f64; 3],
    /// Unit direction of largest spread within the plane.
    pub major_axis: [f64; 3],
    /// Angle of `major_axis` from the projection of world +x onto the
    /// plane, counter-clockwise about `normal`, in `[-π, π)`.
    pub gamma: f64,
    /// Root-mean-square distance of the points from the plane.
    pub residual: f64,
}

/// Picks the sign of `axis` from the data: positive skew of the projections,
/// or failing that the farthest point on the positive side.
fn orient(axis: Vec3, points: &[Vec3], c: &Vec3, scale: f64) -> Vec3 {
    let proj: Vec<f64> = points.iter().map(|p| (p - c).dot(&axis)).collect();
    let skew: f64 = proj.iter().map(|t| t * t * t).sum::<f64>() / proj.len() as f64;
    if skew.abs() > 1e-9 * scale.powi(3) {
        return if skew > 0.0 { axis } else { -axis };
    }
    let far = proj.iter().map(|t| t.abs()).fold(0.0, f64::max);
    match proj.iter().find(|t| t.abs() > far * (1.0 - 1e-9)) {
        Some(t) if *t < 0.0 => -axis,
        _ => axis,
    }
}

/// Least-squares plane through `points`. The normal points away from
/// `exterior_from` (normally the centroid of the whole cloud); when the
/// patch centroid coincides with it the normal takes a non-negative z (then
/// y, then x) component.
pub fn fit_dominant_plane(points: &[Vec3], exterior_from: &Vec3) -> Result<Plane> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "{} points cannot define a plane",
            points.len()
        )));
    }
    let c = mean(points.iter());
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, hi) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(hi > 0.0) || mid <= 1e-12 * hi {
        return Err(Error::Degenerate(
            "points are collinear or coincident".into(),
        ));
    }
    let scale = hi.sqrt();
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).normalize();
    let out = c - exterior_from;
    let side = normal.dot(&out);
    if side.abs() > 1e-9 * scale.max(out.norm()) {
        if side < 0.0 {
            normal = -normal;
        }
    } else {
        let key = [normal.z, normal.y, normal.x];
        if key
            .iter()
            .find(|v| v.abs() > 1e-12)
            .is_some_and(|v| *v < 0.0)
        {
            normal = -normal;
        }
    }
    let major = eig.eigenvectors.column(order[2]).normalize();
    let major = (major - normal * normal.dot(&major)).normalize();
    let major = orient(major, points, &c, scale);

    let mut x_ref = Vec3::x() - normal * normal.x;
    if x_ref.norm() < 1e-9 {
        x_ref = Vec3::y() - normal * normal.y;
    }
    let x_ref = x_ref.normalize();
    let y_ref = normal.cross(&x_ref);
    let mut gamma = major.dot(&y_ref).atan2(major.dot(&x_ref));
    if gamma >= PI {
        gamma -= 2.0 * PI;
    }
    let residual = (points
        .iter()
        .map(|p| (p - c).dot(&normal).powi(2))
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    Ok(Plane {
        centroid: c.into(),
        normal: normal.into(),
        major_axis: major.into(),
        gamma,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraspPatch {
    pub label: String,
    pub members: Vec<usize>,
    pub plane: Plane,
}

/// Splits `cloud` into one patch per entry of `regions`. Clusters are named
/// by the ground-truth label they overlap most when the cloud is labelled,
/// otherwise by ascending centroid height in `regions` order.
pub fn cluster_patches(
    cloud: &PointCloud,
    regions: &[String],
    seed: u64,
) -> Result<Vec<GraspPatch>> {
    cloud.validate()?;
    let k = regions.len();
    if k == 0 {
        return Err(Error::Invalid("at least one region is required".into()));
    }
    let clustering = kmeans(&cloud.points, k, DEFAULT_RESTARTS, seed)?;
    let mut members = vec![Vec::new(); k];
    for (i, &a) in clustering.assignment.iter().enumerate() {
        members[a].push(i);
    }
    let mut names: Vec<Option<usize>> = vec![None; k];
    let mut taken = vec![false; k];
    if let Some(labels) = &cloud.labels {
        let mut overlap = Vec::new();
        for (c, m) in members.iter().enumerate() {
            for (r, name) in regions.iter().enumerate() {
                let n = m.iter().filter(|&&i| labels[i] == *name).count();
                if n > 0 {
                    overlap.push((n, c, r));
                }
            }
        }
        overlap.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (_, c, r) in overlap {
            if names[c].is_none() && !taken[r] {
                names[c] = Some(r);
                taken[r] = true;
            }
        }
    }
    let mut rest: Vec<usize> = (0..k).filter(|&c| names[c].is_none()).collect();
    rest.sort_by(|&a, &b| {
        clustering.centers[a]
            .z
            .total_cmp(&clustering.centers[b].z)
            .then(a.cmp(&b))
    });
    let mut free_regions = (0..k).filter(|&r| !taken[r]);
    for c in rest {
        names[c] = free_regions.next();
    }
    let exterior = cloud.centroid();
    let mut patches = Vec::with_capacity(k);
    for (c, m) in members.into_iter().enumerate() {
        let pts: Vec<Vec3> = m.iter().map(|&i| cloud.points[i]).collect();
        let plane = fit_dominant_plane(&pts, &exterior)?;
        patches.push(GraspPatch {
            label: regions[names[c].unwrap()].clone(),
            members: m,
            plane,
        });
    }
    patches.sort_by_key(|p| regions.iter().position(|r| *r == p.label));
    Ok(patches)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraspPose {
    pub label: String,
    pub position: [f64; 3],
    /// Unit quaternion `(w, x, y, z)` with `w ≥ 0`.
    pub quaternion: [f64; 4],
    pub normal: [f64; 3],
    pub gamma: f64,
    pub residual: f64,
}

impl GraspPose {
    pub fn rotation(&self) -> Rotation3<f64> {
        let [w, x, y, z] = self.quaternion;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z)).to_rotation_matrix()
    }
}

/// Tool frame at the patch centroid: z approaches along `-normal`, x runs
/// along the patch's major axis.
pub fn extract_grasp_pose(patch: &GraspPatch) -> GraspPose {
    let plane = &patch.plane;
    let z = -Vec3::from(plane.normal);
    let x = Vec3::from(plane.major_axis);
    let y = z.cross(&x);
    let r = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    let q = UnitQuaternion::from_rotation_matrix(&r);
    let mut quaternion = [q.w, q.i, q.j, q.k];
    let lead = quaternion
        .iter()
        .find(|v| v.abs() > 1e-12)
        .copied()
        .unwrap_or(1.0);
    if lead < 0.0 {
        quaternion.iter_mut().for_each(|v| *v = -*v);
    }
    GraspPose {
        label: patch.label.clone(),
        position: plane.centroid,
        quaternion,
        normal: plane.normal,
        gamma: plane.gamma,
        residual: plane.residual,
    }
}

/// Pose of the patch labelled `region`.
pub fn pose_for_region(
    cloud: &PointCloud,
    regions: &[String],
    region: &str,
    seed: u64,
) -> Result<(GraspPatch, GraspPose)> {
    if !regions.iter().any(|r| r == region) {
        return Err(Error::Invalid(format!(
            "region `{region}` is not one of {regions:?}"
        )));
    }
    let patches = cluster_patches(cloud, regions, seed)?;
    let patch = patches.into_iter().find(|p| p.label == region).unwrap();
    let pose = extract_grasp_pose(&patch);
    Ok((patch, pose))
}

/// Labels of the synthetic mug parts.
pub const MUG_BODY: &str = "1";
pub const MUG_RIM: &str = "2";
pub const MUG_HANDLE: &str = "3";

/// A mug-like cloud in metres: a cylindrical body (label 1), a flat lip
/// ring above it (label 2) and a half-torus handle on the +x side
/// (label 3), each with 1 mm Gaussian noise.
pub fn synthetic_mug(points_per_part: usize, seed: u64) -> PointCloud {
    let mut r = rng::rng(seed);
    let noise = Normal::new(0.0, 0.001).unwrap();
    let mut points = Vec::with_capacity(3 * points_per_part);
    let mut labels = Vec::with_capacity(3 * points_per_part);
    let jitter = |p: Vec3, r: &mut rng::Rng| {
        p + Vec3::new(noise.sample(r), noise.sample(r), noise.sample(r))
    };
    for _ in 0..points_per_part {
        let t = r.random_range(-PI..PI);
        let h = r.random_range(0.0..0.07);
        points.push(jitter(Vec3::new(0.04 * t.cos(), 0.04 * t.sin(), h), &mut r));
        labels.push(MUG_BODY.to_string());
    }
    for _ in 0..points_per_part {
        let t = r.random_range(-PI..PI);
        let rad = r.random_range(0.045..0.06);
        points.push(jitter(
            Vec3::new(rad * t.cos(), rad * t.sin(), 0.115),
            &mut r,
        ));
        labels.push(MUG_RIM.to_string());
    }
    for _ in 0..points_per_part {
        let t = r.random_range(-PI / 2.0..PI / 2.0);
        let s = r.random_range(-PI..PI);
        let (big, small) = (0.025, 0.006);
        let ring = big + small * s.cos();
        let p = Vec3::new(
            0.08 + ring * t.cos(),
            small * s.sin(),
            0.035 + ring * t.sin(),
        );
        points.push(jitter(p, &mut r));
        labels.push(MUG_HANDLE.to_string());
    }
    PointCloud {
        points,
        labels: Some(labels),
    }
}
