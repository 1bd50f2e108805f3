//! Colored triangle meshes: Marching Cubes extraction and binary PLY I/O.

pub mod table;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scalar::Real;
use crate::volume::{unit_to_u8, TsdfVolume};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColoredMesh<T> {
    /// World-space positions in meters.
    pub vertices: Vec<Vec3<T>>,
    /// RGB in [0, 1], one per vertex.
    pub vertex_colors: Vec<[T; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl<T: Real> ColoredMesh<T> {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertex_colors.len() != self.vertices.len() {
            return Err(Error::Format("vertex and color counts differ".into()));
        }
        let n = self.vertices.len() as u32;
        for t in &self.triangles {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::Format(format!("triangle {t:?} indexes past {n} vertices")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::Format(format!("degenerate triangle {t:?}")));
            }
        }
        Ok(())
    }

    /// Undirected edges with the number of triangles using each.
    pub fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut m = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// V − E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|u| **u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_closed_manifold(&self) -> bool {
        !self.triangles.is_empty() && self.edge_counts().values().all(|&n| n == 2)
    }

    pub fn triangle_corners(&self, t: usize) -> [Vec3<T>; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: usize) -> T {
        let [a, b, c] = self.triangle_corners(t);
        (b - a).cross(c - a).norm() * T::lit(0.5)
    }

    pub fn surface_area(&self) -> T {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn write_ply<W: Write>(&self, w: W) -> Result<()> {
        self.validate()?;
        let mut w = BufWriter::new(w);
        write!(
            w,
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\n\
             property list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        )?;
        for (p, c) in self.vertices.iter().zip(&self.vertex_colors) {
            for a in 0..3 {
                w.write_f32::<LittleEndian>(p[a].to_f32().unwrap_or(f32::NAN))?;
            }
            for ch in c {
                w.write_u8(unit_to_u8(ch.to_f64_lossy()))?;
            }
        }
        for t in &self.triangles {
            w.write_u8(3)?;
            for &i in t {
                w.write_i32::<LittleEndian>(i as i32)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the layout produced by [`ColoredMesh::write_ply`].
    pub fn read_ply<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let bad = |m: &str| Error::Format(format!("PLY: {m}"));
        let mut header = Vec::new();
        loop {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("missing end_header"));
            }
            let line = line.trim_end().to_string();
            if line == "end_header" {
                break;
            }
            if !line.starts_with("comment") {
                header.push(line);
            }
        }
        let expected_props = [
            "property float x",
            "property float y",
            "property float z",
            "property uchar red",
            "property uchar green",
            "property uchar blue",
        ];
        if header.len() != 11
            || header[0] != "ply"
            || header[1] != "format binary_little_endian 1.0"
            || header[3..9] != expected_props
            || header[10] != "property list uchar int vertex_indices"
        {
            return Err(bad("unsupported header"));
        }
        let count = |line: &str, name: &str| -> Result<usize> {
            line.strip_prefix(name).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad(line))
        };
        let nv = count(&header[2], "element vertex")?;
        let nf = count(&header[9], "element face")?;
        let mut mesh = ColoredMesh::default();
        for _ in 0..nv {
            let mut p = [T::zero(); 3];
            for x in &mut p {
                *x = T::lit(r.read_f32::<LittleEndian>()? as f64);
            }
            let c = [r.read_u8()?, r.read_u8()?, r.read_u8()?].map(|b| T::lit(b as f64 / 255.0));
            mesh.vertices.push(Vec3::from_array(p));
            mesh.vertex_colors.push(c);
        }
        for _ in 0..nf {
            if r.read_u8()? != 3 {
                return Err(bad("non-triangle face"));
            }
            let mut t = [0u32; 3];
            for i in &mut t {
                let v = r.read_i32::<LittleEndian>()?;
                *i = u32::try_from(v).map_err(|_| bad("negative index"))?;
            }
            mesh.triangles.push(t);
        }
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn save_ply(&self, path: &Path) -> Result<()> {
        self.write_ply(File::create(path)?)
    }

    pub fn load_ply(path: &Path) -> Result<Self> {
        Self::read_ply(File::open(path)?)
    }
}

/// Global identity of a lattice edge: lower corner voxel index and axis.
type EdgeKey = (usize, u8);

struct SlabOutput<T> {
    verts: Vec<(EdgeKey, Vec3<T>, [T; 3])>,
    tris: Vec<[EdgeKey; 3]>,
}

/// Extracts the `iso` level set over cells whose eight corners are observed.
///
/// Corners with `tsdf < iso` are inside; triangles wind counter-clockwise
/// seen from the `tsdf > iso` side.
pub fn marching_cubes<T: Real>(vol: &TsdfVolume<T>, iso: T) -> ColoredMesh<T> {
    let [dx, dy, dz] = vol.dims();
    if dx < 2 || dy < 2 || dz < 2 {
        return ColoredMesh::default();
    }
    let slabs: Vec<SlabOutput<T>> = (0..dz - 1).into_par_iter().map(|k| slab(vol, iso, k)).collect();
    let mut mesh = ColoredMesh::default();
    let mut ids: HashMap<EdgeKey, u32> = HashMap::new();
    for s in slabs {
        for (key, p, c) in s.verts {
            ids.entry(key).or_insert_with(|| {
                mesh.vertices.push(p);
                mesh.vertex_colors.push(c);
                (mesh.vertices.len() - 1) as u32
            });
        }
        for t in s.tris {
            mesh.triangles.push(t.map(|k| ids[&k]));
        }
    }
    mesh
}

fn slab<T: Real>(vol: &TsdfVolume<T>, iso: T, k: usize) -> SlabOutput<T> {
    let [dx, dy, _] = vol.dims();
    let mut out = SlabOutput { verts: Vec::new(), tris: Vec::new() };
    let mut seen: HashMap<EdgeKey, ()> = HashMap::new();
    for j in 0..dy - 1 {
        for i in 0..dx - 1 {
            let corner_idx = table::CORNERS.map(|o| vol.index(i + o[0], j + o[1], k + o[2]));
            if corner_idx.iter().any(|&c| !vol.is_observed(c)) {
                continue;
            }
            let mut case = 0;
            for (c, &idx) in corner_idx.iter().enumerate() {
                if vol.tsdf[idx] < iso {
                    case |= 1 << c;
                }
            }
            let tris = table::triangles(case);
            if tris.is_empty() {
                continue;
            }
            let mut keys = [(0usize, 0u8); 12];
            for (e, &[a, b]) in table::EDGES.iter().enumerate() {
                if (case >> a & 1) == (case >> b & 1) {
                    continue;
                }
                let (lo, hi) = if corner_idx[a] < corner_idx[b] { (a, b) } else { (b, a) };
                let axis = (0..3).find(|&ax| table::CORNERS[lo][ax] != table::CORNERS[hi][ax]).unwrap_or(0) as u8;
                let key = (corner_idx[lo], axis);
                keys[e] = key;
                if seen.insert(key, ()).is_none() {
                    let (ia, ib) = (corner_idx[lo], corner_idx[hi]);
                    let (va, vb) = (vol.tsdf[ia], vol.tsdf[ib]);
                    let s = (iso - va) / (vb - va);
                    let pa = vol.grid.voxel_center(i + table::CORNERS[lo][0], j + table::CORNERS[lo][1], k + table::CORNERS[lo][2]);
                    let pb = vol.grid.voxel_center(i + table::CORNERS[hi][0], j + table::CORNERS[hi][1], k + table::CORNERS[hi][2]);
                    let p = pa + (pb - pa) * s;
                    // trilinear color restricted to a lattice edge is linear
                    let (ca, cb) = (vol.rgb(ia), vol.rgb(ib));
                    let c = [0, 1, 2].map(|ch| ca[ch] + (cb[ch] - ca[ch]) * s);
                    out.verts.push((key, p, c));
                }
            }
            for t in tris {
                out.tris.push(t.map(|e| keys[e as usize]));
            }
        }
    }
    out
}
