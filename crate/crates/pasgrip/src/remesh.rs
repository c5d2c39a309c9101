//! Isotropic remeshing: split long edges, collapse short ones, flip for
//! valence, tangentially relax with projection back to the input surface.
//! Thresholds are the usual 4/3 and 4/5 of the target length.

use nalgebra::Point3;
use std::collections::{HashMap, HashSet};

use crate::mesh::{MeshError, TriMesh};

struct WorkMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<Option<[usize; 3]>>,
}

impl WorkMesh {
    fn live_faces(&self) -> impl Iterator<Item = (usize, [usize; 3])> + '_ {
        self.faces
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.map(|f| (i, f)))
    }

    /// undirected edge -> adjacent live face ids
    fn edge_faces(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, f) in self.live_faces() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        map
    }

    fn vertex_neighbors(&self) -> Vec<HashSet<usize>> {
        let mut nbrs = vec![HashSet::new(); self.vertices.len()];
        for (_, f) in self.live_faces() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                nbrs[a].insert(b);
                nbrs[b].insert(a);
            }
        }
        nbrs
    }
}

fn edge_len(m: &WorkMesh, a: usize, b: usize) -> f64 {
    (m.vertices[a] - m.vertices[b]).norm()
}

fn split_long_edges(m: &mut WorkMesh, max_len: f64) {
    loop {
        let edge_faces = m.edge_faces();
        let mut dirty: HashSet<usize> = HashSet::new();
        let mut any = false;
        let mut edges: Vec<((usize, usize), f64)> = edge_faces
            .keys()
            .map(|&(a, b)| ((a, b), edge_len(m, a, b)))
            .filter(|&(_, l)| l > max_len)
            .collect();
        edges.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        for ((a, b), _) in edges {
            let fs = &edge_faces[&(a, b)];
            if fs.len() != 2 || fs.iter().any(|f| dirty.contains(f)) {
                continue;
            }
            let mid = Point3::from((m.vertices[a].coords + m.vertices[b].coords) / 2.0);
            m.vertices.push(mid);
            let mv = m.vertices.len() - 1;
            for &fi in fs {
                let f = m.faces[fi].unwrap();
                // rotate so the edge is (f0, f1)
                let rot = (0..3)
                    .find(|&k| {
                        (f[k] == a && f[(k + 1) % 3] == b) || (f[k] == b && f[(k + 1) % 3] == a)
                    })
                    .unwrap();
                let (p, q, r) = (f[rot], f[(rot + 1) % 3], f[(rot + 2) % 3]);
                m.faces[fi] = Some([p, mv, r]);
                m.faces.push(Some([mv, q, r]));
                dirty.insert(fi);
                dirty.insert(m.faces.len() - 1);
            }
            any = true;
        }
        if !any {
            break;
        }
    }
}

fn collapse_short_edges(m: &mut WorkMesh, min_len: f64, max_len: f64) {
    let edge_faces = m.edge_faces();
    let nbrs = m.vertex_neighbors();
    let mut removed_vertex: HashSet<usize> = HashSet::new();
    let mut edges: Vec<((usize, usize), f64)> = edge_faces
        .keys()
        .map(|&(a, b)| ((a, b), edge_len(m, a, b)))
        .filter(|&(_, l)| l < min_len)
        .collect();
    edges.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    for ((a, b), _) in edges {
        if removed_vertex.contains(&a) || removed_vertex.contains(&b) {
            continue;
        }
        let fs = match edge_faces.get(&(a, b)) {
            Some(fs) if fs.len() == 2 => fs,
            _ => continue,
        };
        if fs.iter().any(|&fi| m.faces[fi].is_none()) {
            continue;
        }
        // link condition: shared neighbors must be exactly the two opposite verts
        let shared: HashSet<usize> = nbrs[a].intersection(&nbrs[b]).copied().collect();
        let mut opposite = HashSet::new();
        for &fi in fs {
            let f = m.faces[fi].unwrap();
            for &v in &f {
                if v != a && v != b {
                    opposite.insert(v);
                }
            }
        }
        if shared != opposite || opposite.len() != 2 {
            continue;
        }
        let mid = Point3::from((m.vertices[a].coords + m.vertices[b].coords) / 2.0);
        // no resulting edge may exceed the split threshold
        let too_long = nbrs[a]
            .union(&nbrs[b])
            .filter(|&&v| v != a && v != b && !removed_vertex.contains(&v))
            .any(|&v| (m.vertices[v] - mid).norm() > max_len);
        if too_long {
            continue;
        }
        // collapse b into a at the midpoint
        m.vertices[a] = mid;
        for fi in 0..m.faces.len() {
            if let Some(mut f) = m.faces[fi] {
                let mut has_a = false;
                let mut has_b = false;
                for v in &mut f {
                    if *v == b {
                        *v = a;
                        has_b = true;
                    } else if *v == a {
                        has_a = true;
                    }
                }
                if has_b {
                    if has_a || f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                        m.faces[fi] = None;
                    } else {
                        m.faces[fi] = Some(f);
                    }
                }
            }
        }
        removed_vertex.insert(a); // freeze the region this pass
        removed_vertex.insert(b);
        for &v in &opposite {
            removed_vertex.insert(v);
        }
    }
}

fn flip_for_valence(m: &mut WorkMesh) {
    let mut valence: Vec<i64> = vec![0; m.vertices.len()];
    for v in m.vertex_neighbors().iter().enumerate() {
        valence[v.0] = v.1.len() as i64;
    }
    let edge_faces = m.edge_faces();
    let nbrs = m.vertex_neighbors();
    let mut dirty: HashSet<usize> = HashSet::new();
    let mut keys: Vec<(usize, usize)> = edge_faces.keys().copied().collect();
    keys.sort();
    for (a, b) in keys {
        let fs = &edge_faces[&(a, b)];
        if fs.len() != 2 || fs.iter().any(|f| dirty.contains(f)) {
            continue;
        }
        let (f1, f2) = (m.faces[fs[0]].unwrap(), m.faces[fs[1]].unwrap());
        let c = *f1.iter().find(|&&v| v != a && v != b).unwrap();
        let d = *f2.iter().find(|&&v| v != a && v != b).unwrap();
        if c == d || nbrs[c].contains(&d) {
            continue;
        }
        let dev = |v: usize, delta: i64| (valence[v] + delta - 6).pow(2);
        let before = dev(a, 0) + dev(b, 0) + dev(c, 0) + dev(d, 0);
        let after = dev(a, -1) + dev(b, -1) + dev(c, 1) + dev(d, 1);
        if after >= before {
            continue;
        }
        // geometric sanity: reject flips that would produce a degenerate pair
        let area = |p: usize, q: usize, r: usize| {
            (m.vertices[q] - m.vertices[p])
                .cross(&(m.vertices[r] - m.vertices[p]))
                .norm()
        };
        if area(c, d, a) < 1e-14 || area(d, c, b) < 1e-14 {
            continue;
        }
        // rotate f1 so edge (a,b) appears in its winding order
        let f = f1;
        let rot = (0..3)
            .find(|&k| {
                (f[k] == a && f[(k + 1) % 3] == b) || (f[k] == b && f[(k + 1) % 3] == a)
            })
            .unwrap();
        let (p, q) = (f[rot], f[(rot + 1) % 3]);
        // faces (p,q,c) and (q,p,d) become (c,d,q) and (d,c,p)
        m.faces[fs[0]] = Some([c, d, q]);
        m.faces[fs[1]] = Some([d, c, p]);
        dirty.insert(fs[0]);
        dirty.insert(fs[1]);
        valence[a] -= 1;
        valence[b] -= 1;
        valence[c] += 1;
        valence[d] += 1;
    }
}

fn tangential_relax(m: &mut WorkMesh, original: &TriMesh) {
    let nbrs = m.vertex_neighbors();
    // area-free vertex normals from incident faces
    let mut vnormals = vec![nalgebra::Vector3::zeros(); m.vertices.len()];
    for (_, f) in m.live_faces() {
        let n = (m.vertices[f[1]] - m.vertices[f[0]])
            .cross(&(m.vertices[f[2]] - m.vertices[f[0]]));
        for &v in &f {
            vnormals[v] += n;
        }
    }
    let new_pos: Vec<Point3<f64>> = (0..m.vertices.len())
        .map(|v| {
            if nbrs[v].is_empty() {
                return m.vertices[v];
            }
            let centroid = nbrs[v]
                .iter()
                .fold(nalgebra::Vector3::zeros(), |acc, &u| acc + m.vertices[u].coords)
                / nbrs[v].len() as f64;
            let n = vnormals[v];
            let mut delta = centroid - m.vertices[v].coords;
            if n.norm() > 1e-14 {
                let nn = n.normalize();
                delta -= nn * delta.dot(&nn);
            }
            let moved = Point3::from(m.vertices[v].coords + 0.5 * delta);
            original.closest_point(&moved).0
        })
        .collect();
    m.vertices = new_pos;
}

/// Remesh toward uniform edge length. The output is watertight whenever the
/// input is.
pub fn isotropic_remesh(
    mesh: &TriMesh,
    target_edge_length: f64,
    iterations: usize,
) -> Result<TriMesh, MeshError> {
    if target_edge_length <= 0.0 {
        return Err(MeshError::Degenerate("target edge length must be > 0".into()));
    }
    if target_edge_length > mesh.bbox_diagonal() {
        return Err(MeshError::Degenerate(
            "target edge length exceeds bounding-box diagonal".into(),
        ));
    }
    let mut work = WorkMesh {
        vertices: mesh.vertices.clone(),
        faces: mesh.faces.iter().map(|f| Some(*f)).collect(),
    };
    let max_len = 4.0 / 3.0 * target_edge_length;
    let min_len = 4.0 / 5.0 * target_edge_length;
    for _ in 0..iterations {
        split_long_edges(&mut work, max_len);
        collapse_short_edges(&mut work, min_len, max_len);
        flip_for_valence(&mut work);
        tangential_relax(&mut work, mesh);
    }
    // compact
    let mut remap = vec![usize::MAX; work.vertices.len()];
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (_, f) in work.live_faces() {
        let mut nf = [0usize; 3];
        for (k, &v) in f.iter().enumerate() {
            if remap[v] == usize::MAX {
                remap[v] = vertices.len();
                vertices.push(work.vertices[v]);
            }
            nf[k] = remap[v];
        }
        faces.push(nf);
    }
    let out = TriMesh::new(vertices, faces)?;
    out.check_watertight()?;
    Ok(out)
}

/// Mean and coefficient of variation of edge lengths.
pub fn edge_length_stats(mesh: &TriMesh) -> (f64, f64) {
    let mut seen = HashSet::new();
    let mut lens = Vec::new();
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            if seen.insert((a.min(b), a.max(b))) {
                lens.push((mesh.vertices[a] - mesh.vertices[b]).norm());
            }
        }
    }
    let mean = lens.iter().sum::<f64>() / lens.len() as f64;
    let var = lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / lens.len() as f64;
    (mean, var.sqrt() / mean)
}
