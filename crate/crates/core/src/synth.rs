//! Cluster-structured synthetic grades.
//!
//! Students and courses are assigned uniformly to clusters; the grade
//! level of a pair is the block's base level plus rounded Gaussian noise,
//! clamped to `1..=10`. Each pair is observed independently.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bigraph::{BipartiteGraph, Edge, LEVELS};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::Rng;

/// Default 4 × 3 base-level table. Rows and columns are pairwise
/// distinct and the table is far from additive, so neither student means
/// nor course means alone recover it.
pub const DEFAULT_BASE_LEVELS: [[u8; 3]; 4] = [[9, 4, 6], [4, 9, 6], [6, 6, 2], [2, 7, 9]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub students: usize,
    pub courses: usize,
    /// `student_clusters × course_clusters` levels in `1..=10`.
    pub base_levels: Vec<Vec<u8>>,
    pub noise: f64,
    pub density: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            students: 369,
            courses: 142,
            base_levels: DEFAULT_BASE_LEVELS.iter().map(|r| r.to_vec()).collect(),
            noise: 0.7,
            density: 0.15,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn student_clusters(&self) -> usize {
        self.base_levels.len()
    }

    pub fn course_clusters(&self) -> usize {
        self.base_levels.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.students == 0 || self.courses == 0 {
            return Err(Error::InvalidArgument(
                "synthetic spec needs at least one student and one course".into(),
            ));
        }
        if self.student_clusters() == 0 || self.course_clusters() == 0 {
            return Err(Error::InvalidArgument("empty base-level table".into()));
        }
        if self.base_levels.iter().any(|r| r.len() != self.course_clusters()) {
            return Err(Error::InvalidArgument("ragged base-level table".into()));
        }
        if self
            .base_levels
            .iter()
            .flatten()
            .any(|&b| !(1..=LEVELS as u8).contains(&b))
        {
            return Err(Error::InvalidArgument("base levels must lie in 1..=10".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "density {} outside (0, 1]",
                self.density
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise {} < 0", self.noise)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub student_cluster: Vec<usize>,
    pub course_cluster: Vec<usize>,
    /// Noiseless level for every pair, `students × courses`, row-major.
    pub levels: Vec<Vec<u8>>,
}

impl SyntheticTruth {
    /// `node_kind,id,cluster` rows for every student then every course.
    pub fn write_csv(&self, path: &Path, graph: &BipartiteGraph) -> Result<()> {
        write_atomic(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["node_kind", "id", "cluster"])?;
            for (id, c) in graph.students().iter().zip(&self.student_cluster) {
                out.write_record(["student", id.as_str(), c.to_string().as_str()])?;
            }
            for (id, c) in graph.courses().iter().zip(&self.course_cluster) {
                out.write_record(["course", id.as_str(), c.to_string().as_str()])?;
            }
            out.flush().map_err(|e| Error::io(path, e))?;
            Ok(())
        })
    }

    /// Read student labels back from a truth CSV, ordered by `graph`.
    pub fn read_student_labels(path: &Path, graph: &BipartiteGraph) -> Result<Vec<usize>> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut labels = vec![None; graph.m()];
        for row in reader.records() {
            let row = row?;
            if &row[0] != "student" {
                continue;
            }
            let idx = graph.student_idx(&row[1])?;
            let cluster = row[2]
                .parse()
                .map_err(|_| Error::Data(format!("bad cluster label `{}`", &row[2])))?;
            labels[idx] = Some(cluster);
        }
        labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or_else(|| {
                    Error::Data(format!("no cluster label for student `{}`", graph.students()[i]))
                })
            })
            .collect()
    }
}

pub fn student_id(i: usize) -> String {
    format!("S{i:04}")
}

pub fn course_id(j: usize) -> String {
    format!("C{j:04}")
}

/// Draw a graph and its ground truth. Deterministic in `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<(BipartiteGraph, SyntheticTruth)> {
    spec.validate()?;
    let mut rng = Rng::stream(spec.seed, "synth");
    let student_cluster: Vec<usize> = (0..spec.students)
        .map(|_| rng.below(spec.student_clusters()))
        .collect();
    let course_cluster: Vec<usize> = (0..spec.courses)
        .map(|_| rng.below(spec.course_clusters()))
        .collect();
    let levels: Vec<Vec<u8>> = student_cluster
        .iter()
        .map(|&s| {
            course_cluster
                .iter()
                .map(|&c| spec.base_levels[s][c])
                .collect()
        })
        .collect();

    let mut edges = Vec::new();
    for (i, row) in levels.iter().enumerate() {
        for (j, &base) in row.iter().enumerate() {
            if rng.uniform() >= spec.density {
                continue;
            }
            let noisy = f64::from(base) + spec.noise * rng.normal();
            let level = noisy.round().clamp(1.0, LEVELS as f64) as u8;
            edges.push(Edge {
                student: i,
                course: j,
                level,
            });
        }
    }
    let graph = BipartiteGraph::new(
        (0..spec.students).map(student_id).collect(),
        (0..spec.courses).map(course_id).collect(),
        edges,
    )?;
    Ok((
        graph,
        SyntheticTruth {
            student_cluster,
            course_cluster,
            levels,
        },
    ))
}
