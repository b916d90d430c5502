use std::io::Write;

use crate::error::{Error, Result};

/// Linear-triangle mesh of a 2D domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub node_coordinates: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub left_edge_nodes: Vec<usize>,
    pub right_edge_nodes: Vec<usize>,
}

impl Mesh {
    /// Structured triangulation of the rectangle `[0, length] x [0, height]`.
    ///
    /// Each cell is split along a diagonal. Cells in the lower half use the
    /// `/` diagonal and cells in the upper half the `\` diagonal, so the mesh is
    /// mirror-symmetric about `y = height / 2` whenever `ny` is even.
    /// Nodes are numbered column by column (`i * (ny + 1) + j`), which keeps the
    /// stiffness bandwidth proportional to `ny`.
    pub fn cantilever(nx: usize, ny: usize, length: f64, height: f64) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidInput(format!(
                "element counts must be positive, got nx={nx}, ny={ny}"
            )));
        }
        if !(length > 0.0 && length.is_finite() && height > 0.0 && height.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "dimensions must be positive, got length={length}, height={height}"
            )));
        }
        let node = |i: usize, j: usize| i * (ny + 1) + j;
        let mut node_coordinates = Vec::with_capacity((nx + 1) * (ny + 1));
        for i in 0..=nx {
            for j in 0..=ny {
                node_coordinates.push([
                    length * i as f64 / nx as f64,
                    height * j as f64 / ny as f64,
                ]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                let (a, b, c, d) = (node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1));
                if 2 * j + 1 < ny {
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                } else {
                    triangles.push([a, b, d]);
                    triangles.push([b, c, d]);
                }
            }
        }
        let mesh = Mesh {
            node_coordinates,
            triangles,
            left_edge_nodes: (0..=ny).map(|j| node(0, j)).collect(),
            right_edge_nodes: (0..=ny).map(|j| node(nx, j)).collect(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn node_count(&self) -> usize {
        self.node_coordinates.len()
    }

    pub fn signed_area(&self, triangle: usize) -> f64 {
        let [a, b, c] = self.triangles[triangle];
        let (pa, pb, pc) = (
            self.node_coordinates[a],
            self.node_coordinates[b],
            self.node_coordinates[c],
        );
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// Checks orientation, node coverage and edge-set invariants.
    pub fn validate(&self) -> Result<()> {
        let mut used = vec![false; self.node_count()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                if v >= self.node_count() {
                    return Err(Error::InvalidInput(format!("triangle {t} references node {v}")));
                }
                used[v] = true;
            }
            if self.signed_area(t) <= 0.0 {
                return Err(Error::InvalidInput(format!("triangle {t} has nonpositive area")));
            }
        }
        if let Some(orphan) = used.iter().position(|&u| !u) {
            return Err(Error::InvalidInput(format!("node {orphan} belongs to no triangle")));
        }
        if self.left_edge_nodes.is_empty() || self.right_edge_nodes.is_empty() {
            return Err(Error::InvalidInput("edge node sets must be nonempty".into()));
        }
        if self.left_edge_nodes.iter().any(|n| self.right_edge_nodes.contains(n)) {
            return Err(Error::InvalidInput("left and right edge sets overlap".into()));
        }
        Ok(())
    }

    /// Plain-text listing: `id x y` per node, then `id n1 n2 n3` per triangle.
    pub fn write_listing<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# nodes {}", self.node_count())?;
        for (id, [x, y]) in self.node_coordinates.iter().enumerate() {
            writeln!(w, "{id} {x} {y}")?;
        }
        writeln!(w, "# triangles {}", self.triangles.len())?;
        for (id, [a, b, c]) in self.triangles.iter().enumerate() {
            writeln!(w, "{id} {a} {b} {c}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_split() {
        let m = Mesh::cantilever(1, 1, 1.0, 1.0).unwrap();
        assert_eq!(m.node_count(), 4);
        assert_eq!(m.triangles.len(), 2);
        for t in 0..2 {
            assert_eq!(m.signed_area(t), 0.5);
        }
    }

    #[test]
    fn desk_mesh_counts() {
        let m = Mesh::cantilever(40, 10, 2.0, 0.5).unwrap();
        assert_eq!(m.node_count(), 451);
        assert_eq!(m.triangles.len(), 800);
        let total: f64 = (0..800).map(|t| m.signed_area(t)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edge_sets() {
        let m = Mesh::cantilever(2, 1, 2.0, 0.5).unwrap();
        assert_eq!(m.left_edge_nodes.len(), 2);
        assert_eq!(m.right_edge_nodes.len(), 2);
        assert!(m.left_edge_nodes.iter().all(|&n| m.node_coordinates[n][0] == 0.0));
        assert!(m.right_edge_nodes.iter().all(|&n| m.node_coordinates[n][0] == 2.0));
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(Mesh::cantilever(0, 1, 1.0, 1.0).is_err());
        assert!(Mesh::cantilever(1, 1, -1.0, 1.0).is_err());
        assert!(Mesh::cantilever(1, 1, 1.0, 0.0).is_err());
    }

    #[test]
    fn mirror_symmetric_for_even_ny() {
        let (ny, h) = (4, 0.5);
        let m = Mesh::cantilever(3, ny, 1.0, h).unwrap();
        let mirror = |v: usize| (v / (ny + 1)) * (ny + 1) + (ny - v % (ny + 1));
        let mut tris: Vec<Vec<usize>> = m
            .triangles
            .iter()
            .map(|t| {
                let mut s = t.to_vec();
                s.sort();
                s
            })
            .collect();
        tris.sort();
        let mut mirrored: Vec<Vec<usize>> = m
            .triangles
            .iter()
            .map(|t| {
                let mut s: Vec<usize> = t.iter().map(|&v| mirror(v)).collect();
                s.sort();
                s
            })
            .collect();
        mirrored.sort();
        assert_eq!(tris, mirrored);
    }

    #[test]
    fn listing_format() {
        let m = Mesh::cantilever(1, 1, 1.0, 1.0).unwrap();
        let mut buf = Vec::new();
        m.write_listing(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\n0 0 0\n"));
        assert!(text.contains("\n1 2 3 1\n"));
    }
}
