//! Point/mesh ingestion, surface sampling, query generation and writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::FieldResult;
use crate::geom::{self, Vec3};
use crate::kernels::KernelKind;
use crate::rng::{derive_key, CounterRng};
use crate::types::{QuerySet, SourceSet};

// ---------------------------------------------------------------------------
// Points files

/// Parses whitespace separated `x y z m` (one channel) or `x y z mx my mz`
/// (three channels) lines. `#` starts a comment.
pub fn parse_points(text: &str, label: &str) -> Result<SourceSet> {
    let mut columns = None;
    let mut positions = Vec::new();
    let mut masses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: label.to_string(),
            line: lineno + 1,
            msg,
        };
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad number {t:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != 4 && vals.len() != 6 {
            return Err(err(format!("expected 4 or 6 columns, found {}", vals.len())));
        }
        match columns {
            None => columns = Some(vals.len()),
            Some(c) if c != vals.len() => {
                return Err(err(format!(
                    "inconsistent column count: {} after {c}",
                    vals.len()
                )))
            }
            _ => {}
        }
        if let Some(bad) = vals.iter().position(|v| !v.is_finite()) {
            return Err(err(format!("non-finite value in column {}", bad + 1)));
        }
        positions.push([vals[0], vals[1], vals[2]]);
        masses.extend_from_slice(&vals[3..]);
    }
    let c = columns.map(|n| n - 3).ok_or(Error::EmptyPointSet)?;
    SourceSet::new(positions, masses, c, None)
}

pub fn parse_points_file(path: impl AsRef<Path>) -> Result<SourceSet> {
    let path = path.as_ref();
    parse_points(&fs::read_to_string(path)?, &path.display().to_string())
}

/// Formats sources as a points file. Values use the shortest representation
/// that parses back to the same `f64`. Weights are not stored; re-parsing
/// applies the default weight rule.
pub fn format_points(sources: &SourceSet) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# x y z mass ({} channel(s))", sources.channel_count());
    for i in 0..sources.len() {
        let p = sources.position(i);
        let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
        for m in sources.mass(i) {
            let _ = write!(s, " {m}");
        }
        s.push('\n');
    }
    s
}

pub fn write_points_file(path: impl AsRef<Path>, sources: &SourceSet) -> Result<()> {
    fs::write(path, format_points(sources))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Triangle meshes

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Area-scaled normal (half the cross product), oriented by winding.
    pub fn area_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle(t);
        geom::scale(geom::cross(geom::sub(b, a), geom::sub(c, a)), 0.5)
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        geom::norm(self.area_normal(t))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Isotropically rescales vertices into `[-1, 1]^3`.
    pub fn normalized(&self) -> Result<Mesh> {
        let n = crate::types::normalize_to_unit_cube(&self.vertices)?;
        Ok(Mesh {
            vertices: n.points,
            triangles: self.triangles.clone(),
        })
    }
}

/// Reads the `v` and `f` records of a Wavefront OBJ file; everything else is
/// ignored. Faces with more than three vertices are fan-triangulated and
/// negative (relative) indices are resolved.
pub fn parse_obj(text: &str, label: &str) -> Result<Mesh> {
    let mut mesh = Mesh::default();
    for (lineno, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Parse {
            path: label.to_string(),
            line: lineno + 1,
            msg,
        };
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let v = toks
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad vertex {t:?}: {e}"))))
                    .collect::<Result<Vec<f64>>>()?;
                if v.len() != 3 || !v.iter().all(|x| x.is_finite()) {
                    return Err(err("vertex needs three finite coordinates".into()));
                }
                mesh.vertices.push([v[0], v[1], v[2]]);
            }
            Some("f") => {
                let n = mesh.vertices.len() as i64;
                let idx = toks
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first
                            .parse()
                            .map_err(|e| err(format!("bad face index {t:?}: {e}")))?;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        if resolved < 0 || resolved >= n {
                            return Err(err(format!("face index {i} out of range")));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<Vec<u32>>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs at least three vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    parse_obj(&fs::read_to_string(path)?, &path.display().to_string())
}

/// Unit icosphere with `subdivisions` rounds of 4-way splitting, outward
/// winding.
pub fn icosphere(subdivisions: usize) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&v| geom::normalize(v))
    .collect();
    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache = std::collections::HashMap::new();
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let m = geom::scale(geom::add(vertices[a as usize], vertices[b as usize]), 0.5);
                vertices.push(geom::normalize(m));
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for [a, b, c] in triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    Mesh {
        vertices,
        triangles,
    }
}

/// Closed torus around the z axis with outward winding.
pub fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> Mesh {
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * std::f64::consts::PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * std::f64::consts::PI * j as f64 / nv as f64;
            let r = major + minor * v.cos();
            vertices.push([r * u.cos(), r * u.sin(), minor * v.sin()]);
        }
    }
    let id = |i: usize, j: usize| ((i % nu) * nv + (j % nv)) as u32;
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Mesh {
        vertices,
        triangles,
    }
}

/// Icosphere with smooth radial bumps: closed, star-shaped and without the
/// symmetries of a sphere.
pub fn blob(subdivisions: usize) -> Mesh {
    let mut m = icosphere(subdivisions);
    for v in &mut m.vertices {
        let r = 1.0 + 0.25 * (3.0 * v[0]).sin() * (2.0 * v[1]).cos() + 0.15 * (4.0 * v[2]).sin();
        *v = geom::scale(*v, r);
    }
    m
}

/// Resolves `builtin:<name>` mesh names.
pub fn builtin_mesh(name: &str) -> Option<Mesh> {
    match name {
        "icosphere" | "sphere" => Some(icosphere(4)),
        "torus" => Some(torus(0.65, 0.3, 96, 48)),
        "blob" => Some(blob(4)),
        _ => None,
    }
}

/// Loads `builtin:<name>` or an OBJ file path.
pub fn load_mesh(spec: &str) -> Result<Mesh> {
    match spec.strip_prefix("builtin:") {
        Some(name) => builtin_mesh(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown builtin mesh {name:?}"))),
        None => load_obj(spec),
    }
}

/// Draws `m` points uniformly over the surface area of `mesh`.
///
/// Winding kernels get mass `(A / m) * n` and weight `A / m` where `A` is
/// the total area and `n` the unit normal of the sampled triangle. Scalar
/// kernels get mass `scalar_mass` (default `1 / m`).
pub fn sample_mesh_surface(
    mesh: &Mesh,
    m: usize,
    seed: u64,
    kind: KernelKind,
    scalar_mass: Option<f64>,
) -> Result<SourceSet> {
    if m == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for t in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(t);
        cdf.push(acc);
    }
    let total = acc;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateMesh("total surface area is zero".into()));
    }
    let mut rng = CounterRng::from_key(derive_key(&[seed, 0x6d65_7368]));
    let c = kind.channel_count();
    let mut positions = Vec::with_capacity(m);
    let mut masses = Vec::with_capacity(m * c);
    let mut weights = Vec::with_capacity(m);
    let share = total / m as f64;
    for _ in 0..m {
        let u = rng.next_f64() * total;
        let t = cdf.partition_point(|&x| x <= u).min(cdf.len() - 1);
        let [a, b, cc] = mesh.triangle(t);
        let (r1, r2) = (rng.next_f64(), rng.next_f64());
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        positions.push([
            wa * a[0] + wb * b[0] + wc * cc[0],
            wa * a[1] + wb * b[1] + wc * cc[1],
            wa * a[2] + wb * b[2] + wc * cc[2],
        ]);
        match kind {
            KernelKind::WindingDipole => {
                let n = geom::normalize(mesh.area_normal(t));
                masses.extend_from_slice(&geom::scale(n, share));
                weights.push(share);
            }
            KernelKind::Coulomb | KernelKind::SmoothExp => {
                let mass = scalar_mass.unwrap_or(1.0 / m as f64);
                masses.push(mass);
                weights.push(crate::types::default_weight(&[mass]));
            }
        }
    }
    SourceSet::new(positions, masses, c, Some(weights))
}

// ---------------------------------------------------------------------------
// Query sets

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    /// Lattice including the bound corners; index `(ix * ny + iy) * nz + iz`.
    Grid3d {
        resolution: [usize; 3],
        bounds: [Vec3; 2],
    },
    /// Square lattice `origin + s * u_axis + t * v_axis` with `s, t` in
    /// `[-extent, extent]`. Row 0 is the top (`t = +extent`); rows are
    /// stored top to bottom, columns left to right.
    SlicePlane {
        resolution: [usize; 2],
        origin: Vec3,
        u_axis: Vec3,
        v_axis: Vec3,
        extent: f64,
    },
    Random {
        count: usize,
        bounds: [Vec3; 2],
        seed: u64,
    },
}

pub const UNIT_BOUNDS: [Vec3; 2] = [[-1.0; 3], [1.0; 3]];

impl GridSpec {
    pub fn grid3d(n: usize) -> Self {
        GridSpec::Grid3d {
            resolution: [n; 3],
            bounds: UNIT_BOUNDS,
        }
    }

    /// Axis-aligned slice perpendicular to `axis` (0, 1, 2) at `offset`.
    pub fn axis_slice(axis: usize, offset: f64, width: usize, height: usize, extent: f64) -> Self {
        let unit = |k: usize| {
            let mut v = [0.0; 3];
            v[k] = 1.0;
            v
        };
        let (u, v) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut origin = [0.0; 3];
        origin[axis.min(2)] = offset;
        GridSpec::SlicePlane {
            resolution: [width, height],
            origin,
            u_axis: unit(u),
            v_axis: unit(v),
            extent,
        }
    }

    pub fn random(count: usize, seed: u64) -> Self {
        GridSpec::Random {
            count,
            bounds: UNIT_BOUNDS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        match self {
            GridSpec::Grid3d { resolution, bounds } => {
                if resolution.contains(&0) {
                    return bad("grid resolution must be >= 1");
                }
                if (0..3).any(|k| bounds[0][k] > bounds[1][k]) {
                    return bad("grid bounds are inverted");
                }
            }
            GridSpec::SlicePlane {
                resolution,
                u_axis,
                v_axis,
                extent,
                ..
            } => {
                if resolution.contains(&0) {
                    return bad("slice resolution must be >= 1");
                }
                let ortho = (geom::norm(*u_axis) - 1.0).abs() < 1e-9
                    && (geom::norm(*v_axis) - 1.0).abs() < 1e-9
                    && geom::dot(*u_axis, *v_axis).abs() < 1e-9;
                if !ortho {
                    return bad("slice axes must be orthonormal");
                }
                if !(*extent > 0.0) {
                    return bad("slice extent must be positive");
                }
            }
            GridSpec::Random { bounds, .. } => {
                if (0..3).any(|k| bounds[0][k] > bounds[1][k]) {
                    return bad("random bounds are inverted");
                }
            }
        }
        Ok(())
    }

    /// Image dimensions `(width, height)` for slices.
    pub fn image_dims(&self) -> Option<(usize, usize)> {
        match self {
            GridSpec::SlicePlane { resolution, .. } => Some((resolution[0], resolution[1])),
            _ => None,
        }
    }

    pub fn point_count(&self) -> usize {
        match self {
            GridSpec::Grid3d { resolution, .. } => resolution.iter().product(),
            GridSpec::SlicePlane { resolution, .. } => resolution[0] * resolution[1],
            GridSpec::Random { count, .. } => *count,
        }
    }
}

fn lattice(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if n == 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

pub fn make_queries(spec: &GridSpec) -> Result<QuerySet> {
    spec.validate()?;
    let mut pts = Vec::with_capacity(spec.point_count());
    match spec {
        GridSpec::Grid3d { resolution, bounds } => {
            let [nx, ny, nz] = *resolution;
            for ix in 0..nx {
                for iy in 0..ny {
                    for iz in 0..nz {
                        pts.push([
                            lattice(bounds[0][0], bounds[1][0], nx, ix),
                            lattice(bounds[0][1], bounds[1][1], ny, iy),
                            lattice(bounds[0][2], bounds[1][2], nz, iz),
                        ]);
                    }
                }
            }
        }
        GridSpec::SlicePlane {
            resolution,
            origin,
            u_axis,
            v_axis,
            extent,
        } => {
            let [nu, nv] = *resolution;
            for j in 0..nv {
                let t = lattice(*extent, -*extent, nv, j);
                for i in 0..nu {
                    let s = lattice(-*extent, *extent, nu, i);
                    pts.push(geom::add(
                        *origin,
                        geom::add(geom::scale(*u_axis, s), geom::scale(*v_axis, t)),
                    ));
                }
            }
        }
        GridSpec::Random {
            count,
            bounds,
            seed,
        } => {
            let mut rng = CounterRng::from_key(derive_key(&[*seed, 0x7175_6572]));
            for _ in 0..*count {
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = bounds[0][k] + (bounds[1][k] - bounds[0][k]) * rng.next_f64();
                }
                pts.push(p);
            }
        }
    }
    QuerySet::new(pts)
}

// ---------------------------------------------------------------------------
// Writers

/// `index,x,y,z,value,flag` rows with shortest round-trip float formatting.
pub fn format_csv(queries: &QuerySet, field: &FieldResult) -> Result<String> {
    if queries.len() != field.len() {
        return Err(Error::LengthMismatch {
            left: field.len(),
            right: queries.len(),
        });
    }
    let mut s = String::with_capacity(64 * queries.len() + 32);
    s.push_str("index,x,y,z,value,flag\n");
    for (i, p) in queries.points().iter().enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{}",
            p[0],
            p[1],
            p[2],
            field.values[i],
            field.flagged[i] as u8
        );
    }
    Ok(s)
}

/// Reads back the `value` column of a CSV written by [`format_csv`].
pub fn parse_csv_values(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .nth(4)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    path: "csv".into(),
                    line: i + 2,
                    msg: "missing value column".into(),
                })
        })
        .collect()
}

/// Little-endian grayscale PFM, rows written bottom-up. `values` are in
/// image order (top row first).
pub fn pfm_bytes(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: width * height,
        });
    }
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(4 * values.len());
    for row in values.chunks(width).rev() {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Result of mapping a field to 8-bit gray.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub pixels: Vec<u8>,
    pub min: f64,
    pub max: f64,
    pub sentinels: usize,
}

/// Maps `[min, max]` (auto or given) affinely onto `[0, 255]`. Flagged or
/// non-finite entries become 0 and are counted; a degenerate range renders
/// mid gray.
pub fn to_gray(values: &[f64], flagged: &[bool], range: Option<(f64, f64)>) -> GrayImage {
    let ok = |i: usize| !flagged.get(i).copied().unwrap_or(false) && values[i].is_finite();
    let (min, max) = range.unwrap_or_else(|| {
        (0..values.len())
            .filter(|&i| ok(i))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                (lo.min(values[i]), hi.max(values[i]))
            })
    });
    let mut sentinels = 0;
    let pixels = (0..values.len())
        .map(|i| {
            if !ok(i) {
                sentinels += 1;
                return 0;
            }
            if !(max > min) {
                return 128;
            }
            let t = ((values[i] - min) / (max - min)).clamp(0.0, 1.0);
            (t * 255.0).round() as u8
        })
        .collect();
    GrayImage {
        pixels,
        min,
        max,
        sentinels,
    }
}

pub fn pgm_bytes(image: &GrayImage, width: usize, height: usize) -> Result<Vec<u8>> {
    if image.pixels.len() != width * height {
        return Err(Error::LengthMismatch {
            left: image.pixels.len(),
            right: width * height,
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&image.pixels);
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct OutputOptions {
    /// Fixed gray-map range; `None` uses the finite min/max.
    pub range: Option<(f64, f64)>,
    pub csv: bool,
    pub images: bool,
}

#[derive(Serialize)]
struct SliceSidecar {
    width: usize,
    height: usize,
    range_min: f64,
    range_max: f64,
    sentinel_count: usize,
    flagged_count: usize,
}

/// Writes `<prefix>.csv` and, for slices, `<prefix>.pfm`, `<prefix>.pgm`
/// and `<prefix>.json`. Returns the paths written.
pub fn write_outputs(
    field: &FieldResult,
    spec: &GridSpec,
    queries: &QuerySet,
    prefix: &Path,
    opts: &OutputOptions,
) -> Result<Vec<PathBuf>> {
    if field.len() != spec.point_count() || field.len() != queries.len() {
        return Err(Error::LengthMismatch {
            left: field.len(),
            right: spec.point_count(),
        });
    }
    let with_ext = |ext: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(".");
        p.push(ext);
        PathBuf::from(p)
    };
    let mut written = Vec::new();
    if opts.csv {
        let path = with_ext("csv");
        fs::write(&path, format_csv(queries, field)?)?;
        written.push(path);
    }
    if let (true, Some((w, h))) = (opts.images, spec.image_dims()) {
        let path = with_ext("pfm");
        fs::write(&path, pfm_bytes(&field.values, w, h)?)?;
        written.push(path);

        let gray = to_gray(&field.values, &field.flagged, opts.range);
        let path = with_ext("pgm");
        fs::write(&path, pgm_bytes(&gray, w, h)?)?;
        written.push(path);

        let sidecar = SliceSidecar {
            width: w,
            height: h,
            range_min: gray.min,
            range_max: gray.max,
            sentinel_count: gray.sentinels,
            flagged_count: field.flagged_count(),
        };
        let path = with_ext("json");
        fs::write(&path, serde_json::to_string_pretty(&sidecar)?)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_single_line() {
        let s = parse_points("0 0 0 1\n", "t").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.mass(0), &[1.0]);
        assert_eq!(s.weight(0), 1.0);
    }

    #[test]
    fn parse_comments_and_three_channels() {
        let s = parse_points("# hi\n\n1 2 3 0 0 1 # tail\n4 5 6 0 2 0\n", "t").unwrap();
        assert_eq!(s.channel_count(), 3);
        assert_eq!(s.weight(1), 2.0);
    }

    #[test]
    fn parse_mixed_columns_reports_line() {
        match parse_points("0 0 0 1\n\n1 1 1 0 0 1\n", "f.txt") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse_points("0 0 0 1\n1 nan 1 1\n", "f.txt") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn obj_fan_triangulation() {
        let m = parse_obj(
            "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3 4\n",
            "q",
        )
        .unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
        let rel = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n", "r").unwrap();
        assert_eq!(rel.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn unit_triangle_samples() {
        let mesh = Mesh {
            vertices: vec![[0.0; 3], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        let s = sample_mesh_surface(&mesh, 100, 3, KernelKind::WindingDipole, None).unwrap();
        for i in 0..100 {
            let p = s.position(i);
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] / 2.0 + p[1] <= 1.0 + 1e-12);
            assert_eq!(p[2], 0.0);
            assert!((s.weight(i) - 0.01).abs() < 1e-15);
            assert!((s.mass(i)[2] - 0.01).abs() < 1e-15);
        }
        let scalar = sample_mesh_surface(&mesh, 100, 3, KernelKind::Coulomb, None).unwrap();
        assert!((scalar.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_mesh_rejected() {
        let mesh = Mesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        assert!(matches!(
            sample_mesh_surface(&mesh, 10, 0, KernelKind::Coulomb, None),
            Err(Error::DegenerateMesh(_))
        ));
    }

    #[test]
    fn builtin_meshes_are_closed() {
        for name in ["icosphere", "torus", "blob"] {
            let m = builtin_mesh(name).unwrap();
            let mut n = [0.0; 3];
            for t in 0..m.triangles.len() {
                n = geom::add(n, m.area_normal(t));
            }
            assert!(geom::norm(n) < 1e-10 * m.total_area(), "{name}");
        }
    }

    #[test]
    fn grid_corners_row_major() {
        let q = make_queries(&GridSpec::grid3d(2)).unwrap();
        let expect: Vec<Vec3> = vec![
            [-1.0, -1.0, -1.0],
            [-1.0, -1.0, 1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [1.0, -1.0, 1.0],
            [1.0, 1.0, -1.0],
            [1.0, 1.0, 1.0],
        ];
        assert_eq!(q.points(), &expect[..]);
    }

    #[test]
    fn slice_points_coplanar() {
        let q = make_queries(&GridSpec::axis_slice(2, 0.0, 2, 2, 1.0)).unwrap();
        assert_eq!(
            q.points(),
            &[[-1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [-1.0, -1.0, 0.0], [1.0, -1.0, 0.0]]
        );
        let bad = GridSpec::SlicePlane {
            resolution: [2, 2],
            origin: [0.0; 3],
            u_axis: [1.0, 0.0, 0.0],
            v_axis: [1.0, 0.0, 0.0],
            extent: 1.0,
        };
        assert!(make_queries(&bad).is_err());
    }

    #[test]
    fn random_queries_deterministic() {
        let a = make_queries(&GridSpec::random(10_000, 4)).unwrap();
        let b = make_queries(&GridSpec::random(10_000, 4)).unwrap();
        assert_eq!(a, b);
        assert!(a
            .points()
            .iter()
            .all(|p| p.iter().all(|v| (-1.0..=1.0).contains(v))));
        assert_ne!(a, make_queries(&GridSpec::random(10_000, 5)).unwrap());
    }

    #[test]
    fn gray_mapping_rules() {
        let g = to_gray(&[0.0, 1.0, 2.0, 3.0], &[false; 4], None);
        assert_eq!(g.pixels, vec![0, 85, 170, 255]);
        let flat = to_gray(&[2.0; 4], &[false; 4], None);
        assert_eq!(flat.pixels, vec![128; 4]);
        let s = to_gray(&[0.0, f64::INFINITY, 1.0], &[false, true, false], None);
        assert_eq!(s.pixels, vec![0, 0, 255]);
        assert_eq!(s.sentinels, 1);
        let pgm = pgm_bytes(&g, 2, 2).unwrap();
        assert!(pgm.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 4..], &[0, 85, 170, 255]);
    }

    #[test]
    fn pfm_is_bottom_up() {
        let bytes = pfm_bytes(&[0.0, 1.0, 2.0, 3.0], 2, 2).unwrap();
        let header = b"Pf\n2 2\n-1.0\n";
        assert!(bytes.starts_with(header));
        let body: Vec<f32> = bytes[header.len()..]
            .chunks(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        assert_eq!(body, vec![2.0, 3.0, 0.0, 1.0]);
        assert!(pfm_bytes(&[0.0; 3], 2, 2).is_err());
    }

    #[test]
    fn csv_length_mismatch() {
        let q = QuerySet::new(vec![[0.0; 3]]).unwrap();
        assert!(format_csv(&q, &FieldResult::default()).is_err());
    }
}
