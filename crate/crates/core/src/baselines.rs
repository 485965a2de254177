//! Grid-based comparison interpolators: vector base amplitude panning over a
//! spherical triangulation, and four-neighbour bilinear interpolation over
//! constant-elevation rings.
//!
//! Both work on dB fields and by default blend in the linear-magnitude
//! domain, returning dB. Targets the measured grid does not cover are
//! answered anyway and flagged.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1};

use crate::data::{Direction, MagnitudeField};
use crate::error::{Error, Result};

/// Nonnegativity slack for gains of targets on a triangle edge.
pub const GAIN_EPS: f64 = 1e-9;
/// Elevations closer than this (degrees) belong to the same ring.
pub const RING_TOL_DEG: f64 = 1e-6;
const JITTER: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterpolationDomain {
    /// Blend `10^(dB/20)` and convert back.
    #[default]
    Linear,
    /// Blend dB values directly.
    Db,
}

/// Predictions for a list of targets plus a per-target coverage flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated {
    pub values_db: Array2<f64>,
    /// True where the target fell outside what the measured grid covers.
    pub out_of_coverage: Vec<bool>,
}

impl Interpolated {
    pub fn n_flagged(&self) -> usize {
        self.out_of_coverage.iter().filter(|&&f| f).count()
    }
}

/// `x = cos(el) cos(az)`, `y = cos(el) sin(az)`, `z = sin(el)`.
pub fn direction_to_unit_vector(d: &Direction) -> [f64; 3] {
    let (az, el) = (d.azimuth_deg.to_radians(), d.elevation_deg.to_radians());
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Tiny perturbation keyed on the point's own coordinates, so the hull of
/// co-circular grids is unique and does not depend on input order.
fn jittered(p: V3) -> V3 {
    let mut h = 0u64;
    for c in p {
        h = splitmix(h ^ (c + 0.0).to_bits());
    }
    let mut q = p;
    for c in q.iter_mut() {
        h = splitmix(h);
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        *c += JITTER * (2.0 * u - 1.0);
    }
    let n = norm(q);
    [q[0] / n, q[1] / n, q[2] / n]
}

/// Faces of the convex hull of the measured unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalTriangulation {
    pub vectors: Vec<V3>,
    /// Vertex triples, counter-clockwise seen from outside.
    pub triangles: Vec<[usize; 3]>,
    /// Indices of faces sharing an edge with each face.
    pub adjacency: Vec<Vec<usize>>,
    /// Per face, the inverse of the matrix whose rows are its vertex vectors.
    inverses: Vec<Option<[V3; 3]>>,
    elevation_range: (f64, f64),
}

impl SphericalTriangulation {
    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Vertices referenced by at least one face.
    pub fn hull_vertices(&self) -> usize {
        self.triangles.iter().flatten().collect::<HashSet<_>>().len()
    }
}

fn invert_rows(m: [V3; 3]) -> Option<[V3; 3]> {
    // inverse of the matrix with rows m[0], m[1], m[2]
    let c0 = cross(m[1], m[2]);
    let c1 = cross(m[2], m[0]);
    let c2 = cross(m[0], m[1]);
    let det = dot(m[0], c0);
    if det.abs() < 1e-300 {
        return None;
    }
    // columns of the inverse are c_i / det
    Some([
        [c0[0] / det, c1[0] / det, c2[0] / det],
        [c0[1] / det, c1[1] / det, c2[1] / det],
        [c0[2] / det, c1[2] / det, c2[2] / det],
    ])
}

/// Builds the triangulation as the 3D convex hull of the directions' unit
/// vectors (incremental construction).
pub fn build_triangulation(directions: &[Direction]) -> Result<SphericalTriangulation> {
    let n = directions.len();
    if n < 4 {
        return Err(Error::Degenerate(format!("need at least 4 directions, got {n}")));
    }
    let vectors: Vec<V3> = directions.iter().map(direction_to_unit_vector).collect();
    let mut seen = HashSet::new();
    for (i, d) in directions.iter().enumerate() {
        if !seen.insert(d.key()) {
            return Err(Error::Degenerate(format!("direction {i} is repeated")));
        }
    }
    let pts: Vec<V3> = vectors.iter().map(|&v| jittered(v)).collect();
    let triangles = convex_hull(&pts)?;

    let mut edge_face = std::collections::HashMap::new();
    for (f, t) in triangles.iter().enumerate() {
        for e in 0..3 {
            edge_face.insert((t[e], t[(e + 1) % 3]), f);
        }
    }
    let adjacency = triangles
        .iter()
        .map(|t| {
            (0..3)
                .filter_map(|e| edge_face.get(&(t[(e + 1) % 3], t[e])).copied())
                .collect()
        })
        .collect();
    let inverses = triangles
        .iter()
        .map(|t| invert_rows([vectors[t[0]], vectors[t[1]], vectors[t[2]]]))
        .collect();
    let lo = directions.iter().map(|d| d.elevation_deg).fold(f64::INFINITY, f64::min);
    let hi = directions.iter().map(|d| d.elevation_deg).fold(f64::NEG_INFINITY, f64::max);
    Ok(SphericalTriangulation {
        vectors,
        triangles,
        adjacency,
        inverses,
        elevation_range: (lo, hi),
    })
}

fn convex_hull(p: &[V3]) -> Result<Vec<[usize; 3]>> {
    let n = p.len();
    // seed tetrahedron from extreme points
    let i0 = 0;
    let i1 = (1..n)
        .max_by(|&a, &b| norm(sub(p[a], p[i0])).total_cmp(&norm(sub(p[b], p[i0]))))
        .unwrap();
    let line = sub(p[i1], p[i0]);
    let i2 = (0..n)
        .max_by(|&a, &b| {
            norm(cross(line, sub(p[a], p[i0]))).total_cmp(&norm(cross(line, sub(p[b], p[i0]))))
        })
        .unwrap();
    let normal = cross(line, sub(p[i2], p[i0]));
    if norm(normal) < 1e-12 {
        return Err(Error::Degenerate("directions are collinear".into()));
    }
    let i3 = (0..n)
        .max_by(|&a, &b| dot(normal, sub(p[a], p[i0])).abs().total_cmp(&dot(normal, sub(p[b], p[i0])).abs()))
        .unwrap();
    if dot(normal, sub(p[i3], p[i0])).abs() < 1e-12 {
        return Err(Error::Degenerate("directions are coplanar".into()));
    }

    let mut faces: Vec<[usize; 3]> = Vec::new();
    let centroid = {
        let s = [i0, i1, i2, i3].iter().fold([0.0; 3], |acc, &i| {
            [acc[0] + p[i][0], acc[1] + p[i][1], acc[2] + p[i][2]]
        });
        [s[0] / 4.0, s[1] / 4.0, s[2] / 4.0]
    };
    let outward = |t: [usize; 3]| -> [usize; 3] {
        let nrm = cross(sub(p[t[1]], p[t[0]]), sub(p[t[2]], p[t[0]]));
        if dot(nrm, sub(p[t[0]], centroid)) < 0.0 {
            [t[0], t[2], t[1]]
        } else {
            t
        }
    };
    for t in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        faces.push(outward(t));
    }

    let seeded = [i0, i1, i2, i3];
    for (i, &pt) in p.iter().enumerate() {
        if seeded.contains(&i) {
            continue;
        }
        let visible: Vec<bool> = faces
            .iter()
            .map(|t| {
                let nrm = cross(sub(p[t[1]], p[t[0]]), sub(p[t[2]], p[t[0]]));
                dot(nrm, sub(pt, p[t[0]])) > 1e-18
            })
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let vis_edges: HashSet<(usize, usize)> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, &v)| v)
            .flat_map(|(t, _)| (0..3).map(move |e| (t[e], t[(e + 1) % 3])))
            .collect();
        let mut next: Vec<[usize; 3]> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, &v)| !v)
            .map(|(t, _)| *t)
            .collect();
        let mut horizon: Vec<(usize, usize)> = vis_edges
            .iter()
            .filter(|&&(a, b)| !vis_edges.contains(&(b, a)))
            .copied()
            .collect();
        horizon.sort_unstable();
        for (a, b) in horizon {
            next.push([a, b, i]);
        }
        faces = next;
    }
    Ok(faces)
}

/// Triangle and normalized gains used for one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbapGains {
    pub vertices: [usize; 3],
    pub gains: [f64; 3],
    /// False when no triangle contained the target.
    pub inside: bool,
}

fn raw_gains(tri: &SphericalTriangulation, f: usize, p: V3) -> Option<[f64; 3]> {
    let inv = tri.inverses[f]?;
    // g = p L^{-1}
    Some([
        p[0] * inv[0][0] + p[1] * inv[1][0] + p[2] * inv[2][0],
        p[0] * inv[0][1] + p[1] * inv[1][1] + p[2] * inv[2][1],
        p[0] * inv[0][2] + p[1] * inv[1][2] + p[2] * inv[2][2],
    ])
}

/// Finds the enclosing triangle of `target` and its gains, normalized to sum 1.
pub fn vbap_gains(tri: &SphericalTriangulation, target: &Direction) -> VbapGains {
    let p = direction_to_unit_vector(target);
    let mut best: Option<(f64, usize, [f64; 3])> = None;
    for f in 0..tri.triangles.len() {
        let Some(g) = raw_gains(tri, f, p) else { continue };
        if g.iter().sum::<f64>() <= 0.0 {
            continue;
        }
        let min = g.iter().copied().fold(f64::INFINITY, f64::min);
        if best.is_none_or(|(m, _, _)| min > m) {
            best = Some((min, f, g));
        }
    }
    // A hull that does not enclose the origin has no face towards some
    // directions; fall back to the face whose centroid is angularly closest.
    let (min, f, mut g) = match best {
        Some(b) => b,
        None => {
            let f = nearest_face(tri, p);
            (f64::NEG_INFINITY, f, raw_gains(tri, f, p).unwrap_or([0.0; 3]))
        }
    };
    let inside = min >= -GAIN_EPS;
    if !inside {
        for v in g.iter_mut() {
            *v = v.max(0.0);
        }
    }
    if g.iter().sum::<f64>() <= 0.0 {
        let verts = tri.triangles[f];
        let dots = verts.map(|i| dot(tri.vectors[i], p));
        let j = (0..3).fold(0, |j, k| if dots[k] > dots[j] { k } else { j });
        g = [0.0; 3];
        g[j] = 1.0;
    }
    let s: f64 = g.iter().sum();
    for v in g.iter_mut() {
        *v /= s;
    }
    VbapGains {
        vertices: tri.triangles[f],
        gains: g,
        inside,
    }
}

fn nearest_face(tri: &SphericalTriangulation, p: V3) -> usize {
    let score = |f: usize| {
        let [a, b, c] = tri.triangles[f].map(|i| tri.vectors[i]);
        let m = [a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]];
        dot(m, p) / dot(m, m).sqrt().max(f64::MIN_POSITIVE)
    };
    (0..tri.triangles.len())
        .max_by(|&x, &y| score(x).total_cmp(&score(y)))
        .expect("a triangulation has faces")
}

fn blend(rows: &[(ArrayView1<f64>, f64)], domain: InterpolationDomain) -> Vec<f64> {
    let k = rows[0].0.len();
    (0..k)
        .map(|j| match domain {
            InterpolationDomain::Db => rows.iter().map(|(r, w)| w * r[j]).sum(),
            InterpolationDomain::Linear => {
                let lin: f64 = rows.iter().map(|(r, w)| w * 10f64.powf(r[j] / 20.0)).sum();
                20.0 * lin.log10()
            }
        })
        .collect()
}

fn exact_match(field: &MagnitudeField, target: &Direction) -> Option<usize> {
    let key = target.key();
    field.directions.iter().position(|d| d.key() == key)
}

fn outside_elevation(range: (f64, f64), el: f64) -> bool {
    el < range.0 - RING_TOL_DEG || el > range.1 + RING_TOL_DEG
}

/// VBAP over a triangulation built from `field.directions`.
pub fn vbap_interpolate(
    field: &MagnitudeField,
    tri: &SphericalTriangulation,
    targets: &[Direction],
    domain: InterpolationDomain,
) -> Result<Interpolated> {
    if tri.vectors.len() != field.n_locations() {
        return Err(Error::Shape(format!(
            "triangulation over {} directions, field has {}",
            tri.vectors.len(),
            field.n_locations()
        )));
    }
    let k = field.n_bins();
    let mut out = Array2::zeros((targets.len(), k));
    let mut flags = vec![false; targets.len()];
    for (t, target) in targets.iter().enumerate() {
        if let Some(i) = exact_match(field, target) {
            out.row_mut(t).assign(&field.values_db.row(i));
            continue;
        }
        let g = vbap_gains(tri, target);
        flags[t] = !g.inside || outside_elevation(tri.elevation_range, target.elevation_deg);
        let rows: Vec<_> = (0..3)
            .map(|v| (field.values_db.row(g.vertices[v]), g.gains[v]))
            .collect();
        let row = blend(&rows, domain);
        out.row_mut(t).assign(&ArrayView1::from(&row));
    }
    if flags.iter().any(|&f| f) {
        log::warn!(
            "vbap: {} of {} targets outside grid coverage",
            flags.iter().filter(|&&f| f).count(),
            targets.len()
        );
    }
    Ok(Interpolated {
        values_db: out,
        out_of_coverage: flags,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct Ring {
    elevation_deg: f64,
    /// `(canonical azimuth, field row)`, sorted by azimuth.
    members: Vec<(f64, usize)>,
}

/// Directions grouped into rings of constant elevation.
#[derive(Debug, Clone, PartialEq)]
pub struct RingGrid {
    rings: Vec<Ring>,
}

/// The four weighted neighbours of one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearStencil {
    pub rows: [usize; 4],
    pub weights: [f64; 4],
    /// Target elevation was clamped to the outermost ring.
    pub clamped: bool,
}

impl RingGrid {
    /// Groups directions by elevation. Fails when fewer than half of the
    /// directions share their ring with another direction.
    pub fn new(directions: &[Direction]) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::NotRingStructured("no directions".into()));
        }
        let mut order: Vec<usize> = (0..directions.len()).collect();
        order.sort_by(|&a, &b| directions[a].elevation_deg.total_cmp(&directions[b].elevation_deg));
        let mut rings: Vec<Ring> = Vec::new();
        for i in order {
            let d = directions[i].canonical();
            match rings.last_mut() {
                Some(r) if (d.elevation_deg - r.elevation_deg).abs() <= RING_TOL_DEG => {
                    r.members.push((d.azimuth_deg, i))
                }
                _ => rings.push(Ring {
                    elevation_deg: d.elevation_deg,
                    members: vec![(d.azimuth_deg, i)],
                }),
            }
        }
        let on_shared: usize = rings.iter().filter(|r| r.members.len() >= 2).map(|r| r.members.len()).sum();
        if 2 * on_shared < directions.len() {
            let lonely: Vec<String> = rings
                .iter()
                .filter(|r| r.members.len() == 1)
                .map(|r| {
                    let (az, i) = r.members[0];
                    format!("#{i} ({az}, {})", r.elevation_deg)
                })
                .collect();
            let shown = lonely.iter().take(12).cloned().collect::<Vec<_>>().join(", ");
            let more = if lonely.len() > 12 {
                format!(" and {} more", lonely.len() - 12)
            } else {
                String::new()
            };
            return Err(Error::NotRingStructured(format!(
                "{} of {} directions have no other direction at their elevation: {shown}{more}",
                lonely.len(),
                directions.len()
            )));
        }
        for r in &mut rings {
            r.members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        Ok(Self { rings })
    }

    pub fn n_rings(&self) -> usize {
        self.rings.len()
    }

    /// Bounding azimuths on a ring and the fractional offset toward the upper one.
    fn on_ring(ring: &Ring, az: f64) -> (usize, usize, f64) {
        let m = &ring.members;
        if m.len() == 1 {
            return (m[0].1, m[0].1, 0.0);
        }
        let pos = m.partition_point(|&(a, _)| a <= az);
        let (lo, hi) = if pos == 0 {
            (m.len() - 1, 0)
        } else {
            (pos - 1, pos % m.len())
        };
        let span = (m[hi].0 - m[lo].0).rem_euclid(360.0);
        let span = if span == 0.0 { 360.0 } else { span };
        let c = (az - m[lo].0).rem_euclid(360.0) / span;
        (m[lo].1, m[hi].1, c)
    }

    pub fn stencil(&self, target: &Direction) -> BilinearStencil {
        let t = target.canonical();
        let el = t.elevation_deg;
        let first = &self.rings[0];
        let last = &self.rings[self.rings.len() - 1];
        let (lo, hi, c_phi, clamped) = if el <= first.elevation_deg {
            (0, 0, 0.0, el < first.elevation_deg - RING_TOL_DEG)
        } else if el >= last.elevation_deg {
            let j = self.rings.len() - 1;
            (j, j, 0.0, el > last.elevation_deg + RING_TOL_DEG)
        } else {
            let pos = self.rings.partition_point(|r| r.elevation_deg <= el);
            let (a, b) = (pos - 1, pos);
            let (ea, eb) = (self.rings[a].elevation_deg, self.rings[b].elevation_deg);
            (a, b, (el - ea) / (eb - ea), false)
        };
        let (l0, l1, c_lo) = Self::on_ring(&self.rings[lo], t.azimuth_deg);
        let (h0, h1, c_hi) = Self::on_ring(&self.rings[hi], t.azimuth_deg);
        BilinearStencil {
            rows: [l0, l1, h0, h1],
            weights: [
                (1.0 - c_lo) * (1.0 - c_phi),
                c_lo * (1.0 - c_phi),
                (1.0 - c_hi) * c_phi,
                c_hi * c_phi,
            ],
            clamped,
        }
    }
}

/// Four-neighbour interpolation between the bounding elevation rings and,
/// on each ring, the bounding azimuths.
pub fn bilinear_interpolate(
    field: &MagnitudeField,
    targets: &[Direction],
    domain: InterpolationDomain,
) -> Result<Interpolated> {
    let grid = RingGrid::new(&field.directions)?;
    let k = field.n_bins();
    let mut out = Array2::zeros((targets.len(), k));
    let mut flags = vec![false; targets.len()];
    for (t, target) in targets.iter().enumerate() {
        if let Some(i) = exact_match(field, target) {
            out.row_mut(t).assign(&field.values_db.row(i));
            continue;
        }
        let s = grid.stencil(target);
        flags[t] = s.clamped;
        if let Some(j) = s.weights.iter().position(|&w| w == 1.0) {
            out.row_mut(t).assign(&field.values_db.row(s.rows[j]));
            continue;
        }
        let rows: Vec<_> = (0..4)
            .filter(|&j| s.weights[j] != 0.0)
            .map(|j| (field.values_db.row(s.rows[j]), s.weights[j]))
            .collect();
        let row = blend(&rows, domain);
        out.row_mut(t).assign(&ArrayView1::from(&row));
    }
    if flags.iter().any(|&f| f) {
        log::warn!(
            "bilinear: {} of {} targets clamped to the outermost ring",
            flags.iter().filter(|&&f| f).count(),
            targets.len()
        );
    }
    Ok(Interpolated {
        values_db: out,
        out_of_coverage: flags,
    })
}

/// Interpolates the held-out directions of `field` from the rows in `observed`.
pub fn interpolate_subset(
    field: &MagnitudeField,
    observed: &[usize],
    targets: &[Direction],
    method: BaselineMethod,
    domain: InterpolationDomain,
) -> Result<Interpolated> {
    let sub = field.select_rows(observed);
    match method {
        BaselineMethod::Vbap => {
            let tri = build_triangulation(&sub.directions)?;
            vbap_interpolate(&sub, &tri, targets, domain)
        }
        BaselineMethod::Bilinear => bilinear_interpolate(&sub, targets, domain),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Vbap,
    Bilinear,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Vbap => "vbap",
            BaselineMethod::Bilinear => "bilinear",
        }
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vbap" => Ok(BaselineMethod::Vbap),
            "bilinear" => Ok(BaselineMethod::Bilinear),
            other => Err(Error::Config(format!("unknown baseline method {other:?}"))),
        }
    }
}
