//! Marching Cubes case table, built once by tracing the iso-contour on the
//! six cube faces.
//!
//! On each face the crossings are visited counter-clockwise (seen from
//! outside the cube). Every run of inside corners is cut off by one segment
//! from the crossing that enters the run to the crossing that leaves it. The
//! rule depends on the face alone, so neighbouring cells agree on shared faces
//! and the resulting mesh is watertight. Each shared cube edge is entered on
//! one face and left on the other, so segments chain into closed loops.
//!
//! A loop is triangulated without chords between two crossings of the same
//! face. Such a chord lies in the shared face, and if the neighbouring cell
//! chose it too the edge would carry four triangles.

use std::sync::OnceLock;

/// Unit-cube corner offsets.
pub const CORNERS: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];

/// Corner pairs of the 12 cube edges.
pub const EDGES: [[usize; 2]; 12] =
    [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

/// Faces as corner cycles, counter-clockwise seen from outside.
pub const FACES: [[usize; 4]; 6] =
    [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [3, 7, 6, 2], [0, 4, 7, 3], [1, 2, 6, 5]];

/// Triangles (as edge indices) for each of the 256 inside/outside patterns.
/// Bit `c` of the case index is set when corner `c` is inside.
pub fn triangles(case: usize) -> &'static [[u8; 3]] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    &TABLE.get_or_init(|| (0..256).map(build_case).collect())[case]
}

fn edge_between(a: usize, b: usize) -> usize {
    EDGES.iter().position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a)).expect("adjacent corners")
}

fn build_case(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| case >> c & 1 == 1;
    // next[e] = edge reached after the segment that starts at edge e
    let mut next = [usize::MAX; 12];
    for face in FACES {
        let crossing = |i: usize| edge_between(face[i], face[(i + 1) % 4]);
        for i in 0..4 {
            // enters an inside run between face[i] (out) and face[i+1] (in)
            if inside(face[i]) || !inside(face[(i + 1) % 4]) {
                continue;
            }
            let mut j = (i + 1) % 4;
            while inside(face[(j + 1) % 4]) {
                j = (j + 1) % 4;
            }
            next[crossing(i)] = crossing(j);
        }
    }
    let mut used = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || used[start] {
            continue;
        }
        let mut lp = vec![start];
        used[start] = true;
        let mut e = next[start];
        while e != start {
            used[e] = true;
            lp.push(e);
            e = next[e];
        }
        triangulate(&lp, 0, lp.len() - 1, &mut tris).expect("every loop has a face-chord-free triangulation");
    }
    tris
}

fn share_face(a: usize, b: usize) -> bool {
    let on = |f: &[usize; 4], e: usize| EDGES[e].iter().all(|c| f.contains(c));
    FACES.iter().any(|f| on(f, a) && on(f, b))
}

/// Triangulates the polygon `lp[i..=j]` closed by the side `(i, j)`, keeping
/// the loop orientation. Prefers the fan from `lp[i]`.
fn triangulate(lp: &[usize], i: usize, j: usize, out: &mut Vec<[u8; 3]>) -> Option<()> {
    if j - i < 2 {
        return Some(());
    }
    let closing = i == 0 && j == lp.len() - 1;
    let side_ok = |a: usize, b: usize| b == a + 1 || (closing && a == i && b == j) || !share_face(lp[a], lp[b]);
    for m in (i + 1..j).rev() {
        if !(side_ok(i, m) && side_ok(m, j)) {
            continue;
        }
        let mark = out.len();
        out.push([lp[i] as u8, lp[m] as u8, lp[j] as u8]);
        if triangulate(lp, i, m, out).is_some() && triangulate(lp, m, j, out).is_some() {
            return Some(());
        }
        out.truncate(mark);
    }
    None
}
