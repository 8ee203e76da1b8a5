//! Role-aware object/text scene graph: k-nearest connectivity within and
//! across roles, with 5-d relative-geometry edge features.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundingBox {
    pub x_tl: f64,
    pub y_tl: f64,
    pub x_br: f64,
    pub y_br: f64,
}

impl BoundingBox {
    pub fn new(x_tl: f64, y_tl: f64, x_br: f64, y_br: f64) -> Result<Self> {
        let b = Self { x_tl, y_tl, x_br, y_br };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_tl, self.y_tl, self.x_br, self.y_br].iter().all(|v| v.is_finite());
        if !finite || self.x_br < self.x_tl || self.y_br < self.y_tl {
            return Err(Error::Invalid(alloc::format!("malformed box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_br - self.x_tl
    }

    pub fn height(&self) -> f64 {
        self.y_br - self.y_tl
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_tl + self.x_br) * 0.5, (self.y_tl + self.y_br) * 0.5)
    }

    pub fn is_degenerate(&self) -> bool {
        self.width() <= 0.0 || self.height() <= 0.0
    }

    /// True when `other` lies entirely within `self` (edges may touch).
    pub fn contains(&self, other: &BoundingBox) -> bool {
        other.x_tl >= self.x_tl && other.y_tl >= self.y_tl && other.x_br <= self.x_br && other.y_br <= self.y_br
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self { x_tl: self.x_tl + dx, y_tl: self.y_tl + dy, x_br: self.x_br + dx, y_br: self.y_br + dy }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { x_tl: self.x_tl * s, y_tl: self.y_tl * s, x_br: self.x_br * s, y_br: self.y_br * s }
    }
}

/// Box coordinates relative to the image extent.
pub fn normalize_box(b: &BoundingBox, width: f64, height: f64) -> [f64; 4] {
    [b.x_tl / width, b.y_tl / height, b.x_br / width, b.y_br / height]
}

/// Geometry of `target` seen from `source`: the target's corners relative to
/// the source center in units of the source extent, then the area ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeFeature(pub [f64; 5]);

pub fn edge_feature(source: &BoundingBox, target: &BoundingBox) -> Result<EdgeFeature> {
    if source.is_degenerate() {
        return Err(Error::DegenerateBox);
    }
    let (cx, cy) = source.center();
    let (w, h) = (source.width(), source.height());
    Ok(EdgeFeature([
        (target.x_tl - cx) / w,
        (target.y_tl - cy) / h,
        (target.x_br - cx) / w,
        (target.y_br - cy) / h,
        (target.width() * target.height()) / (w * h),
    ]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum NodeRole {
    Object,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EdgeRole {
    ObjObj,
    ObjText,
    TextText,
    TextObj,
}

impl EdgeRole {
    pub const ALL: [EdgeRole; 4] = [EdgeRole::ObjObj, EdgeRole::ObjText, EdgeRole::TextText, EdgeRole::TextObj];

    pub fn source(self) -> NodeRole {
        match self {
            EdgeRole::ObjObj | EdgeRole::ObjText => NodeRole::Object,
            EdgeRole::TextText | EdgeRole::TextObj => NodeRole::Text,
        }
    }

    pub fn target(self) -> NodeRole {
        match self {
            EdgeRole::ObjObj | EdgeRole::TextObj => NodeRole::Object,
            EdgeRole::ObjText | EdgeRole::TextText => NodeRole::Text,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            EdgeRole::ObjObj => "oo",
            EdgeRole::ObjText => "ot",
            EdgeRole::TextText => "tt",
            EdgeRole::TextObj => "to",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub feature: EdgeFeature,
}

/// Directed edges of one role, grouped by source node in ascending order and
/// by ascending distance within a source.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeSet {
    pub edges: Vec<Edge>,
}

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edge indices leaving each of `num_sources` nodes.
    pub fn neighborhoods(&self, num_sources: usize) -> Vec<Vec<usize>> {
        let mut out = alloc::vec![Vec::new(); num_sources];
        for (e, edge) in self.edges.iter().enumerate() {
            out[edge.source].push(e);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub width: f64,
    pub height: f64,
    pub objects: Vec<BoundingBox>,
    pub texts: Vec<BoundingBox>,
    pub tokens: Vec<String>,
    pub k: usize,
    /// Indexed by [`EdgeRole::index`].
    pub edges: [EdgeSet; 4],
}

impl SceneGraph {
    pub fn edge_set(&self, role: EdgeRole) -> &EdgeSet {
        &self.edges[role.index()]
    }

    pub fn count(&self, role: NodeRole) -> usize {
        match role {
            NodeRole::Object => self.objects.len(),
            NodeRole::Text => self.texts.len(),
        }
    }

    fn boxes(&self, role: NodeRole) -> &[BoundingBox] {
        match role {
            NodeRole::Object => &self.objects,
            NodeRole::Text => &self.texts,
        }
    }
}

fn dist2(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx) * (ax - bx) + (ay - by) * (ay - by)
}

/// The `k` nearest candidates to `source` by center distance, ties broken by
/// ascending index, skipping `exclude`.
fn nearest(source: &BoundingBox, candidates: &[BoundingBox], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != exclude)
        .map(|(j, b)| (dist2(source, b), j))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.truncate(k);
    order.into_iter().map(|(_, j)| j).collect()
}

/// Connects every node to its `k` nearest object nodes and `k` nearest text
/// nodes. Roles with fewer than `k` candidates are fully connected.
pub fn build_graph(
    objects: &[BoundingBox],
    texts: &[BoundingBox],
    tokens: &[String],
    k: usize,
    width: f64,
    height: f64,
) -> Result<SceneGraph> {
    if objects.is_empty() && texts.is_empty() {
        return Err(Error::Invalid("scene graph needs at least one node".into()));
    }
    if tokens.len() != texts.len() {
        return Err(Error::Invalid(alloc::format!("{} text boxes but {} tokens", texts.len(), tokens.len())));
    }
    let mut graph = SceneGraph {
        width,
        height,
        objects: objects.to_vec(),
        texts: texts.to_vec(),
        tokens: tokens.to_vec(),
        k,
        edges: Default::default(),
    };
    for role in EdgeRole::ALL {
        let sources = graph.boxes(role.source());
        let targets = graph.boxes(role.target());
        let same = role.source() == role.target();
        let mut set = EdgeSet::default();
        for (i, src) in sources.iter().enumerate() {
            for j in nearest(src, targets, k, same.then_some(i)) {
                set.edges.push(Edge { source: i, target: j, feature: edge_feature(src, &targets[j])? });
            }
        }
        graph.edges[role.index()] = set;
    }
    Ok(graph)
}
