//! Clique-based clustering of face embeddings collected for one identity.
//!
//! Faces are nodes; two faces from different photographs are joined when their
//! embedding distance is at most `epsilon`, and each pair of photographs
//! contributes at most a matching. Maximal cliques are enumerated with
//! Bron-Kerbosch, selected greedily into disjoint clusters, and each cluster is
//! purified once with a median-absolute-deviation test.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::EmbeddingVector;

#[derive(Debug, Clone, PartialEq)]
pub struct FaceNode {
    pub face_id: String,
    pub image_id: String,
    pub embedding: EmbeddingVector,
}

pub fn embedding_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedEdge {
    pub face_a: String,
    pub face_b: String,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct FaceGraph {
    pub nodes: Vec<FaceNode>,
    /// Keyed by `(lo, hi)` node index.
    pub edges: BTreeMap<(usize, usize), f64>,
    /// Candidate edges within `epsilon` dropped because an endpoint was already matched
    /// to the other photograph.
    pub rejected: Vec<RejectedEdge>,
}

impl FaceGraph {
    pub fn adjacency(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.nodes.len()];
        for &(a, b) in self.edges.keys() {
            adj[a].insert(b);
            adj[b].insert(a);
        }
        adj
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        embedding_distance(&self.nodes[a].embedding, &self.nodes[b].embedding)
    }
}

/// Build the constrained face graph. Photograph pairs are visited in lexicographic
/// image-id order; within a pair, candidates are added by ascending distance.
pub fn build_face_graph(faces: Vec<FaceNode>, epsilon: f64) -> FaceGraph {
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, f) in faces.iter().enumerate() {
        by_image.entry(f.image_id.as_str()).or_default().push(i);
    }
    let groups: Vec<&Vec<usize>> = by_image.values().collect();
    let mut edges = BTreeMap::new();
    let mut rejected = Vec::new();
    for gi in 0..groups.len() {
        for gj in gi + 1..groups.len() {
            let mut cands: Vec<(f64, usize, usize)> = Vec::new();
            for &p in groups[gi] {
                for &q in groups[gj] {
                    let d = embedding_distance(&faces[p].embedding, &faces[q].embedding);
                    if d <= epsilon {
                        cands.push((d, p, q));
                    }
                }
            }
            cands.sort_by(|x, y| {
                x.0.total_cmp(&y.0)
                    .then_with(|| faces[x.1].face_id.cmp(&faces[y.1].face_id))
                    .then_with(|| faces[x.2].face_id.cmp(&faces[y.2].face_id))
            });
            let mut used = BTreeSet::new();
            for (d, p, q) in cands {
                if used.contains(&p) || used.contains(&q) {
                    rejected.push(RejectedEdge {
                        face_a: faces[p].face_id.clone(),
                        face_b: faces[q].face_id.clone(),
                        distance: d,
                    });
                    continue;
                }
                used.insert(p);
                used.insert(q);
                edges.insert((p.min(q), p.max(q)), d);
            }
        }
    }
    FaceGraph {
        nodes: faces,
        edges,
        rejected,
    }
}

/// All maximal cliques of an undirected graph given as adjacency sets, each sorted
/// ascending. Worst-case exponential; callers cap the node count.
pub fn maximal_cliques(adj: &[BTreeSet<usize>]) -> Vec<Vec<usize>> {
    fn bk(
        adj: &[BTreeSet<usize>],
        r: &mut Vec<usize>,
        p: BTreeSet<usize>,
        mut x: BTreeSet<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if p.is_empty() {
            if x.is_empty() {
                let mut c = r.clone();
                c.sort_unstable();
                out.push(c);
            }
            return;
        }
        let pivot = p
            .union(&x)
            .max_by_key(|u| adj[**u].intersection(&p).count())
            .copied()
            .expect("p is nonempty");
        let cands: Vec<usize> = p.difference(&adj[pivot]).copied().collect();
        let mut p = p;
        for v in cands {
            let np = p.intersection(&adj[v]).copied().collect();
            let nx = x.intersection(&adj[v]).copied().collect();
            r.push(v);
            bk(adj, r, np, nx, out);
            r.pop();
            p.remove(&v);
            x.insert(v);
        }
    }
    let mut out = Vec::new();
    bk(adj, &mut Vec::new(), (0..adj.len()).collect(), BTreeSet::new(), &mut out);
    out.sort();
    out
}

pub fn enumerate_maximal_cliques(g: &FaceGraph) -> Vec<Vec<usize>> {
    maximal_cliques(&g.adjacency())
}

fn mean_pairwise(g: &FaceGraph, c: &[usize]) -> f64 {
    if c.len() < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            s += g.distance(c[i], c[j]);
        }
    }
    s / (c.len() * (c.len() - 1) / 2) as f64
}

fn face_ids(g: &FaceGraph, c: &[usize]) -> Vec<String> {
    let mut ids: Vec<String> = c.iter().map(|i| g.nodes[*i].face_id.clone()).collect();
    ids.sort();
    ids
}

/// Tie rule shared by selection and assignment: larger first, then tighter, then by
/// sorted face ids.
fn tie_order(a: (usize, f64, &[String]), b: (usize, f64, &[String])) -> Ordering {
    b.0.cmp(&a.0)
        .then_with(|| a.1.total_cmp(&b.1))
        .then_with(|| a.2.cmp(b.2))
}

/// Greedily keep cliques that share no node with an already kept one.
pub fn select_disjoint_clusters(g: &FaceGraph, cliques: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut keyed: Vec<(f64, Vec<String>, &Vec<usize>)> = cliques
        .iter()
        .map(|c| (mean_pairwise(g, c), face_ids(g, c), c))
        .collect();
    keyed.sort_by(|a, b| tie_order((a.2.len(), a.0, &a.1), (b.2.len(), b.0, &b.1)));
    let mut taken = BTreeSet::new();
    let mut out = Vec::new();
    for (_, _, c) in keyed {
        if c.iter().all(|v| !taken.contains(v)) {
            taken.extend(c.iter().copied());
            out.push(c.clone());
        }
    }
    out
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Flags `i` when `|v_i - median(v)| / MAD(v) > alpha`. Nothing is flagged when the
/// MAD is zero or `v` is empty.
pub fn mad_outliers(v: &[f64], alpha: f64) -> Vec<bool> {
    if v.is_empty() {
        return Vec::new();
    }
    let m = median(v);
    let dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
    let mad = median(&dev);
    if mad == 0.0 {
        return vec![false; v.len()];
    }
    dev.iter().map(|d| d / mad > alpha).collect()
}

/// Single-pass purification. Returns `(kept, removed)`.
pub fn purify_cluster(g: &FaceGraph, cluster: &[usize], alpha: f64) -> (Vec<usize>, Vec<usize>) {
    if cluster.len() < 2 {
        return (cluster.to_vec(), Vec::new());
    }
    let v: Vec<f64> = cluster
        .iter()
        .map(|&i| {
            cluster
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| g.distance(i, j))
                .sum::<f64>()
                / (cluster.len() - 1) as f64
        })
        .collect();
    let flags = mad_outliers(&v, alpha);
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for (i, f) in cluster.iter().zip(flags) {
        if f {
            removed.push(*i);
        } else {
            kept.push(*i);
        }
    }
    (kept, removed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Sorted face ids.
    pub faces: Vec<String>,
    pub mean_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub clusters: Vec<Cluster>,
    /// Index into `clusters`.
    pub assigned: Option<usize>,
    pub removed_outliers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub rejected_edges: Vec<RejectedEdge>,
    pub removed_outliers: Vec<String>,
    /// Connected components clustered separately because the node cap was exceeded.
    pub component_splits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub max_nodes: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            alpha: 3.0,
            max_nodes: 300,
        }
    }
}

fn components(adj: &[BTreeSet<usize>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adj.len()];
    let mut out = Vec::new();
    for s in 0..adj.len() {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut k = 0;
        while k < comp.len() {
            for &u in &adj[comp[k]] {
                if !seen[u] {
                    seen[u] = true;
                    comp.push(u);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Index of the cluster holding the most reference faces (matched by face id), or the
/// largest cluster if no reference lands anywhere. Ties follow the selection rule.
pub fn assign_identity(result: &ClusterResult, references: &[FaceNode]) -> Option<usize> {
    let refs: BTreeSet<&str> = references.iter().map(|r| r.face_id.as_str()).collect();
    (0..result.clusters.len()).min_by(|&a, &b| {
        let count = |c: &Cluster| c.faces.iter().filter(|f| refs.contains(f.as_str())).count();
        let (ca, cb) = (&result.clusters[a], &result.clusters[b]);
        count(cb).cmp(&count(ca)).then_with(|| {
            tie_order(
                (ca.faces.len(), ca.mean_distance, &ca.faces),
                (cb.faces.len(), cb.mean_distance, &cb.faces),
            )
        })
    })
}

/// Full pipeline for one identity's face set.
pub fn cluster_faces(
    faces: Vec<FaceNode>,
    references: &[FaceNode],
    cfg: &ClusterConfig,
) -> Result<(ClusterResult, AuditLog)> {
    let mut ids = BTreeSet::new();
    for f in &faces {
        if !ids.insert(f.face_id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate face id `{}`", f.face_id)));
        }
    }
    let g = build_face_graph(faces, cfg.epsilon);
    let adj = g.adjacency();
    let mut cliques = Vec::new();
    let mut splits = 0;
    if g.nodes.len() <= cfg.max_nodes {
        cliques = maximal_cliques(&adj);
    } else {
        for comp in components(&adj) {
            if comp.len() > cfg.max_nodes {
                return Err(Error::InvalidInput(format!(
                    "connected component of {} faces exceeds the cap of {}",
                    comp.len(),
                    cfg.max_nodes
                )));
            }
            splits += 1;
            let local: BTreeMap<usize, usize> =
                comp.iter().enumerate().map(|(i, v)| (*v, i)).collect();
            let sub: Vec<BTreeSet<usize>> = comp
                .iter()
                .map(|v| adj[*v].iter().map(|u| local[u]).collect())
                .collect();
            for c in maximal_cliques(&sub) {
                cliques.push(c.into_iter().map(|i| comp[i]).collect());
            }
        }
        tracing::warn!(nodes = g.nodes.len(), components = splits, "node cap exceeded; clustered per component");
    }
    let selected = select_disjoint_clusters(&g, &cliques);
    let mut clusters = Vec::new();
    let mut removed = Vec::new();
    for c in selected {
        let (kept, out) = purify_cluster(&g, &c, cfg.alpha);
        removed.extend(out.iter().map(|i| g.nodes[*i].face_id.clone()));
        clusters.push(Cluster {
            mean_distance: mean_pairwise(&g, &kept),
            faces: face_ids(&g, &kept),
        });
    }
    removed.sort();
    let mut result = ClusterResult {
        clusters,
        assigned: None,
        removed_outliers: removed.clone(),
    };
    result.assigned = assign_identity(&result, references);
    Ok((
        result,
        AuditLog {
            rejected_edges: g.rejected,
            removed_outliers: removed,
            component_splits: splits,
        },
    ))
}

/// Reads a face table with columns `face_id,image_id,e0,e1,...`.
pub fn read_face_table(path: &Path) -> Result<Vec<FaceNode>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidInput(format!("face table row {}: {e}", line + 1)))?;
        if rec.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "face table row {} has {} columns",
                line + 1,
                rec.len()
            )));
        }
        let raw: std::result::Result<Vec<f32>, _> = rec.iter().skip(2).map(|s| s.trim().parse()).collect();
        let raw = raw.map_err(|e| Error::InvalidInput(format!("face table row {}: {e}", line + 1)))?;
        out.push(FaceNode {
            face_id: rec[0].to_string(),
            image_id: rec[1].to_string(),
            embedding: EmbeddingVector::from_raw(raw)?,
        });
    }
    Ok(out)
}

pub fn write_face_table(path: &Path, faces: &[FaceNode]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let dim = faces.first().map_or(0, |f| f.embedding.dim());
    let mut header = vec!["face_id".to_string(), "image_id".to_string()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for f in faces {
        let mut row = vec![f.face_id.clone(), f.image_id.clone()];
        row.extend(f.embedding.values().iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
