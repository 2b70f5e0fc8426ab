//! Student–course grade graph: ingestion, level mapping, per-level
//! adjacency decomposition, node degrees and edge splits.
//!
//! Node numbering follows the stacked `[students; courses]` layout used
//! by the encoder: student `i` is node `i`, course `j` is node `m + j`.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{Rng, SparseLevelMatrix};

/// Number of discrete grade levels.
pub const LEVELS: usize = 10;

/// Default train/test/validation fractions.
pub const DEFAULT_FRACTIONS: SplitFractions = SplitFractions {
    train: 0.75,
    test: 0.10,
    valid: 0.05,
};

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct GradeRecord {
    pub student_id: String,
    pub course_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub student: usize,
    pub course: usize,
    /// Grade level in `1..=10`.
    pub level: u8,
}

/// Map a score in `[0, 100]` to its level `min(⌊score/10⌋ + 1, 10)`.
pub fn score_to_level(score: f64) -> Result<u8> {
    if !score.is_finite() || !(0.0..=100.0).contains(&score) {
        return Err(Error::InvalidArgument(format!(
            "score {score} outside [0, 100]"
        )));
    }
    Ok(((score / 10.0).floor() as u8 + 1).min(LEVELS as u8))
}

/// A representative score inside `level`'s bucket.
pub fn level_to_score(level: u8) -> f64 {
    f64::from(level - 1) * 10.0 + 5.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    students: Vec<String>,
    courses: Vec<String>,
    student_index: HashMap<String, usize>,
    course_index: HashMap<String, usize>,
    edges: Vec<Edge>,
}

impl BipartiteGraph {
    pub fn new(students: Vec<String>, courses: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let student_index = index_of(&students, "student")?;
        let course_index = index_of(&courses, "course")?;
        let mut seen = std::collections::HashSet::new();
        for e in &edges {
            if e.student >= students.len() || e.course >= courses.len() {
                return Err(Error::Data(format!("edge {e:?} out of range")));
            }
            if !(1..=LEVELS as u8).contains(&e.level) {
                return Err(Error::Data(format!("edge {e:?} has invalid level")));
            }
            if !seen.insert((e.student, e.course)) {
                return Err(Error::Data(format!(
                    "duplicate edge ({}, {})",
                    e.student, e.course
                )));
            }
        }
        Ok(Self {
            students,
            courses,
            student_index,
            course_index,
            edges,
        })
    }

    /// Build from records, assigning dense indices in first-appearance
    /// order. A repeated `(student, course)` pair overwrites the earlier
    /// level in place. Returns the graph and the number of overwrites.
    pub fn from_records<I>(records: I) -> Result<(Self, usize)>
    where
        I: IntoIterator<Item = (usize, GradeRecord)>,
    {
        let mut students = Vec::new();
        let mut courses = Vec::new();
        let mut student_index = HashMap::new();
        let mut course_index = HashMap::new();
        let mut edge_pos: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut duplicates = 0;
        for (row, rec) in records {
            let level = score_to_level(rec.score).map_err(|e| Error::Record {
                path: String::new(),
                row,
                message: e.to_string(),
            })?;
            let s = intern(&mut students, &mut student_index, rec.student_id);
            let c = intern(&mut courses, &mut course_index, rec.course_id);
            match edge_pos.get(&(s, c)) {
                Some(&pos) => {
                    edges[pos] = Edge {
                        student: s,
                        course: c,
                        level,
                    };
                    duplicates += 1;
                }
                None => {
                    edge_pos.insert((s, c), edges.len());
                    edges.push(Edge {
                        student: s,
                        course: c,
                        level,
                    });
                }
            }
        }
        let graph = Self {
            students,
            courses,
            student_index,
            course_index,
            edges,
        };
        Ok((graph, duplicates))
    }

    /// Students.
    pub fn m(&self) -> usize {
        self.students.len()
    }

    /// Courses.
    pub fn n(&self) -> usize {
        self.courses.len()
    }

    pub fn node_count(&self) -> usize {
        self.m() + self.n()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn students(&self) -> &[String] {
        &self.students
    }

    pub fn courses(&self) -> &[String] {
        &self.courses
    }

    pub fn student_idx(&self, id: &str) -> Result<usize> {
        self.student_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId {
                kind: "student",
                id: id.to_string(),
            })
    }

    pub fn course_idx(&self, id: &str) -> Result<usize> {
        self.course_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId {
                kind: "course",
                id: id.to_string(),
            })
    }

    /// External id of a node in the stacked numbering.
    pub fn node_id(&self, node: usize) -> &str {
        if node < self.m() {
            &self.students[node]
        } else {
            &self.courses[node - self.m()]
        }
    }

    /// Same nodes, only the edges at `indices`.
    pub fn with_edges(&self, indices: &[usize]) -> Self {
        Self {
            students: self.students.clone(),
            courses: self.courses.clone(),
            student_index: self.student_index.clone(),
            course_index: self.course_index.clone(),
            edges: indices.iter().map(|&i| self.edges[i]).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["student_id", "course_id", "score"])?;
            for e in &self.edges {
                out.write_record([
                    self.students[e.student].as_str(),
                    self.courses[e.course].as_str(),
                    &level_to_score(e.level).to_string(),
                ])?;
            }
            out.flush().map_err(|e| Error::io(path, e))?;
            Ok(())
        })
    }
}

fn intern(names: &mut Vec<String>, index: &mut HashMap<String, usize>, id: String) -> usize {
    if let Some(&i) = index.get(&id) {
        return i;
    }
    index.insert(id.clone(), names.len());
    names.push(id);
    names.len() - 1
}

fn index_of(names: &[String], kind: &str) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        if map.insert(name.clone(), i).is_some() {
            return Err(Error::Data(format!("duplicate {kind} id `{name}`")));
        }
    }
    Ok(map)
}

/// Load a `student_id,course_id,score` CSV.
pub fn load_csv(path: &Path) -> Result<BipartiteGraph> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Data(format!("{display}: empty file")));
    }
    if headers.iter().collect::<Vec<_>>() != ["student_id", "course_id", "score"] {
        return Err(Error::Record {
            path: display,
            row: 1,
            message: format!("expected header `student_id,course_id,score`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let row = row.map_err(|e| Error::Record {
            path: display.clone(),
            row: line,
            message: e.to_string(),
        })?;
        if row.len() != 3 {
            return Err(Error::Record {
                path: display,
                row: line,
                message: format!("expected 3 fields, found {}", row.len()),
            });
        }
        let score: f64 = row[2].parse().map_err(|_| Error::Record {
            path: display.clone(),
            row: line,
            message: format!("unparseable score `{}`", &row[2]),
        })?;
        records.push((
            line,
            GradeRecord {
                student_id: row[0].to_string(),
                course_id: row[1].to_string(),
                score,
            },
        ));
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{display}: no grade rows")));
    }
    let (graph, duplicates) = BipartiteGraph::from_records(records).map_err(|e| match e {
        Error::Record { row, message, .. } => Error::Record {
            path: display.clone(),
            row,
            message,
        },
        other => other,
    })?;
    if duplicates > 0 {
        log::warn!("{display}: {duplicates} duplicate (student, course) rows, kept last");
    }
    Ok(graph)
}

/// The ten 0-1 level matrices `A_r` (m×n) and their symmetric N×N
/// embeddings `M_r = [[0, A_rᵀ], [A_r, 0]]`.
///
/// In the stacked numbering the student block of `M_r` holds `A_r` and
/// the course block holds `A_rᵀ`; row `i` of `M_r` lists the level-r
/// neighbours of node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelAdjacency {
    m: usize,
    n: usize,
    bipartite: Vec<SparseLevelMatrix>,
    symmetric: Vec<SparseLevelMatrix>,
}

impl LevelAdjacency {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node_count(&self) -> usize {
        self.m + self.n
    }

    /// `A_r`, `level` in `1..=10`.
    pub fn level(&self, level: u8) -> &SparseLevelMatrix {
        &self.bipartite[usize::from(level) - 1]
    }

    /// `M_r`, `level` in `1..=10`.
    pub fn symmetric(&self, level: u8) -> &SparseLevelMatrix {
        &self.symmetric[usize::from(level) - 1]
    }

    pub fn symmetric_all(&self) -> &[SparseLevelMatrix] {
        &self.symmetric
    }

    pub fn edge_count(&self) -> usize {
        self.bipartite.iter().map(SparseLevelMatrix::nnz).sum()
    }

    /// Neighbours of `node` across all levels, ascending.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .symmetric
            .iter()
            .flat_map(|s| s.row_entries(node).iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Breadth-first hop distance from a seed set; `None` if unreachable.
    pub fn hop_distances(&self, sources: &[usize]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count()];
        let mut frontier = Vec::new();
        for &s in sources {
            if dist[s].is_none() {
                dist[s] = Some(0);
                frontier.push(s);
            }
        }
        let mut hop = 0;
        while !frontier.is_empty() {
            hop += 1;
            let mut next = Vec::new();
            for node in frontier {
                for nb in self.neighbors(node) {
                    if dist[nb].is_none() {
                        dist[nb] = Some(hop);
                        next.push(nb);
                    }
                }
            }
            frontier = next;
        }
        dist
    }
}

/// Split the graph's edges into the ten level matrices.
pub fn decompose(g: &BipartiteGraph) -> LevelAdjacency {
    let (m, n) = (g.m(), g.n());
    let mut per_level: Vec<Vec<(usize, usize)>> = vec![Vec::new(); LEVELS];
    for e in g.edges() {
        per_level[usize::from(e.level) - 1].push((e.student, e.course));
    }
    let mut bipartite = Vec::with_capacity(LEVELS);
    let mut symmetric = Vec::with_capacity(LEVELS);
    for entries in &per_level {
        bipartite.push(
            SparseLevelMatrix::from_entries(m, n, entries).expect("graph edges are unique"),
        );
        let both: Vec<_> = entries
            .iter()
            .flat_map(|&(i, j)| [(i, m + j), (m + j, i)])
            .collect();
        symmetric.push(
            SparseLevelMatrix::from_entries(m + n, m + n, &both).expect("graph edges are unique"),
        );
    }
    LevelAdjacency {
        m,
        n,
        bipartite,
        symmetric,
    }
}

/// Per-node count of observed edges over all levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeVector(Vec<usize>);

impl DegreeVector {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn get(&self, node: usize) -> usize {
        self.0[node]
    }

    /// `1/d` per node, zero for isolated nodes.
    pub fn inverse(&self) -> Vec<f64> {
        self.0
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 })
            .collect()
    }
}

pub fn degrees(adj: &LevelAdjacency) -> DegreeVector {
    let mut deg = vec![0; adj.node_count()];
    for s in adj.symmetric_all() {
        for (node, d) in deg.iter_mut().enumerate() {
            *d += s.row_entries(node).len();
        }
    }
    DegreeVector(deg)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
    pub valid: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        DEFAULT_FRACTIONS
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.test, self.valid];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "split fractions must be nonnegative: {self:?}"
            )));
        }
        if parts.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "split fractions sum to more than 1: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Test,
    Valid,
    Unused,
}

impl SplitRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Test => "test",
            SplitRole::Valid => "valid",
            SplitRole::Unused => "unused",
        }
    }
}

impl std::str::FromStr for SplitRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => SplitRole::Train,
            "test" => SplitRole::Test,
            "valid" => SplitRole::Valid,
            "unused" => SplitRole::Unused,
            other => return Err(Error::Data(format!("unknown split role `{other}`"))),
        })
    }
}

/// Edge indices per role, each list in permutation order.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub valid: Vec<usize>,
    pub unused: Vec<usize>,
    pub fractions: SplitFractions,
    pub seed: u64,
}

impl DataSplit {
    pub fn edges(&self, role: SplitRole) -> &[usize] {
        match role {
            SplitRole::Train => &self.train,
            SplitRole::Test => &self.test,
            SplitRole::Valid => &self.valid,
            SplitRole::Unused => &self.unused,
        }
    }

    /// Role of every edge index, in edge order.
    pub fn roles(&self, edge_count: usize) -> Vec<SplitRole> {
        let mut roles = vec![SplitRole::Unused; edge_count];
        for (role, idx) in [
            (SplitRole::Train, &self.train),
            (SplitRole::Test, &self.test),
            (SplitRole::Valid, &self.valid),
        ] {
            for &i in idx {
                roles[i] = role;
            }
        }
        roles
    }

    pub fn write_manifest(&self, path: &Path, edge_count: usize) -> Result<()> {
        write_atomic(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["edge_index", "role"])?;
            for (i, role) in self.roles(edge_count).into_iter().enumerate() {
                out.write_record([i.to_string().as_str(), role.as_str()])?;
            }
            out.flush().map_err(|e| Error::io(path, e))?;
            Ok(())
        })
    }
}

/// Shuffle edges with `seed`, then cut consecutive train/test/valid runs.
pub fn split(g: &BipartiteGraph, fractions: SplitFractions, seed: u64) -> Result<DataSplit> {
    fractions.validate()?;
    let total = g.edges().len();
    let mut order: Vec<usize> = (0..total).collect();
    Rng::stream(seed, "split").shuffle(&mut order);
    let cut = |f: f64| ((f * total as f64).round() as usize).min(total);
    let b1 = cut(fractions.train);
    let b2 = cut(fractions.train + fractions.test).max(b1);
    let b3 = cut(fractions.train + fractions.test + fractions.valid).max(b2);
    Ok(DataSplit {
        train: order[..b1].to_vec(),
        test: order[b1..b2].to_vec(),
        valid: order[b2..b3].to_vec(),
        unused: order[b3..].to_vec(),
        fractions,
        seed,
    })
}
