use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::bigraph::BipartiteGraph;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{embeddings, ModelParams, NormalizedAdjacency};
use crate::numerics::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Student,
    Course,
}

impl NodeKind {
    pub fn of(node: usize, m: usize) -> Self {
        if node < m {
            NodeKind::Student
        } else {
            NodeKind::Course
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Student => "student",
            NodeKind::Course => "course",
        }
    }
}

/// Principal axes of a point cloud.
///
/// Each component is oriented so that its largest-magnitude loading is
/// positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm components, strongest first.
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn fit(points: &DenseMatrix, n_components: usize) -> Result<Self> {
        let (n, d) = points.shape();
        if n == 0 {
            return Err(Error::InvalidArgument("PCA of an empty point set".into()));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(points.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let row = points.row(i);
            for a in 0..d {
                let da = row[a] - mean[a];
                for b in a..d {
                    cov[(a, b)] += da * (row[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / n as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Vec::new();
        let mut variances = Vec::new();
        for &k in order.iter().take(n_components.min(d)) {
            let mut c: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = c
                .iter()
                .copied()
                .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
            if lead < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            components.push(c);
            variances.push(eig.eigenvalues[k].max(0.0));
        }
        Ok(Self {
            mean,
            components,
            variances,
        })
    }

    pub fn project(&self, point: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(point)
                    .zip(&self.mean)
                    .map(|((c, x), m)| c * (x - m))
                    .sum()
            })
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(coords) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += w * v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDump {
    pub ids: Vec<String>,
    pub kinds: Vec<NodeKind>,
    /// Posterior means, N×E.
    pub vectors: DenseMatrix,
    /// Per node, coordinates on the two leading student principal axes.
    pub pca: Option<Vec<[f64; 2]>>,
}

impl EmbeddingDump {
    pub fn student_vectors(&self) -> DenseMatrix {
        let rows: Vec<Vec<f64>> = (0..self.ids.len())
            .filter(|&n| self.kinds[n] == NodeKind::Student)
            .map(|n| self.vectors.row(n).to_vec())
            .collect();
        DenseMatrix::from_rows(&rows).expect("equal-width rows")
    }

    /// `node_id,kind,z_1..z_E,pca_x,pca_y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            let mut header = vec!["node_id".to_string(), "kind".to_string()];
            header.extend((1..=self.vectors.cols()).map(|k| format!("z_{k}")));
            header.extend(["pca_x".to_string(), "pca_y".to_string()]);
            out.write_record(&header)?;
            for n in 0..self.ids.len() {
                let mut row = vec![self.ids[n].clone(), self.kinds[n].as_str().to_string()];
                row.extend(self.vectors.row(n).iter().map(f64::to_string));
                match &self.pca {
                    Some(p) => row.extend(p[n].iter().map(f64::to_string)),
                    None => row.extend([String::new(), String::new()]),
                }
                out.write_record(&row)?;
            }
            out.flush().map_err(|e| Error::io(path, e))?;
            Ok(())
        })
    }
}

/// Latent means of every node, with a PCA fitted on the student rows.
pub fn export_embeddings(
    params: &ModelParams,
    ctx: &NormalizedAdjacency,
    graph: &BipartiteGraph,
) -> Result<EmbeddingDump> {
    let vectors = embeddings(ctx, params)?;
    let n = graph.node_count();
    let ids = (0..n).map(|v| graph.node_id(v).to_string()).collect();
    let kinds: Vec<NodeKind> = (0..n).map(|v| NodeKind::of(v, graph.m())).collect();
    let mut dump = EmbeddingDump {
        ids,
        kinds,
        vectors,
        pca: None,
    };
    if graph.m() > 0 {
        let pca = Pca::fit(&dump.student_vectors(), 2)?;
        dump.pca = Some(
            (0..n)
                .map(|v| {
                    let p = pca.project(dump.vectors.row(v));
                    [p[0], p.get(1).copied().unwrap_or(0.0)]
                })
                .collect(),
        );
    }
    Ok(dump)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn planar_points_reconstruct_exactly() {
        let mut rng = Rng::new(8);
        let d = 6;
        // Two orthonormal directions plus an offset.
        let u: Vec<f64> = vec![1.0, 2.0, 0.0, -1.0, 0.5, 0.0];
        let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u: Vec<f64> = u.iter().map(|v| v / nu).collect();
        let mut v = vec![0.0, 1.0, 3.0, 1.0, -2.0, 1.0];
        let proj = v.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        v.iter_mut().zip(&u).for_each(|(a, b)| *a -= proj * b);
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v: Vec<f64> = v.iter().map(|x| x / nv).collect();
        let offset = [3.0, -1.0, 0.5, 2.0, 0.0, 1.0];

        let n = 50;
        let planted: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.normal() * 3.0, rng.normal()])
            .collect();
        let points = DenseMatrix::from_fn(n, d, |i, k| offset[k] + planted[i][0] * u[k] + planted[i][1] * v[k]);
        let pca = Pca::fit(&points, 2).unwrap();
        let coords: Vec<Vec<f64>> = (0..n).map(|i| pca.project(points.row(i))).collect();
        for i in 0..n {
            let back = pca.reconstruct(&coords[i]);
            let err = back.iter().zip(points.row(i)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "{err}");
        }

        // Orthogonal Procrustes between centred planted and recovered 2-D
        // coordinates: the residual after the best rotation/reflection
        // must vanish.
        let mean_p = [
            planted.iter().map(|p| p[0]).sum::<f64>() / n as f64,
            planted.iter().map(|p| p[1]).sum::<f64>() / n as f64,
        ];
        let a = DMatrix::from_fn(n, 2, |i, k| planted[i][k] - mean_p[k]);
        let b = DMatrix::from_fn(n, 2, |i, k| coords[i][k]);
        let svd = (a.transpose() * &b).svd(true, true);
        let rot = svd.u.unwrap() * svd.v_t.unwrap();
        let residual = (&a * rot - &b).abs().max();
        assert!(residual < 1e-9, "{residual}");
    }

    #[test]
    fn sign_convention() {
        let points = DenseMatrix::from_rows(&[
            vec![-2.0, 0.1],
            vec![-1.0, -0.1],
            vec![1.0, 0.1],
            vec![2.0, -0.1],
        ])
        .unwrap();
        let pca = Pca::fit(&points, 2).unwrap();
        for c in &pca.components {
            let lead = c.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(lead > 0.0);
        }
        assert!(pca.variances[0] >= pca.variances[1]);
    }
}
