//! Octree belief over the location of one target object.
//!
//! Every node stores an unnormalized mass; a branch's mass is the sum of its eight children and
//! the normalizer is the root's mass. A leaf at level `l` spreads its mass uniformly over the
//! `8^l` ground cells beneath it, which is how cells that were never materialized get their
//! default value: the fresh belief is a single root leaf holding `m^3`, i.e. one unit per cell.
//!
//! Queries, sampling and single-voxel updates all walk one root-to-leaf path, so they cost
//! `O(log |G|)`; a volumetric update over `V` voxels costs `O(|V| log |G|)`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Label, ObjectId, VolumetricObservation};
use crate::occupancy::CellMask;
use crate::spatial::{CellBox, GridCell, LevelCell};

/// Prior mass assigned to octree nodes at any level.
pub type PriorValMap = BTreeMap<LevelCell, f64>;

const RESCALE_HIGH: f64 = 1e150;
const RESCALE_LOW: f64 = 1e-150;

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf(f64),
    Branch(f64, Box<[Node; 8]>),
}

impl Node {
    #[inline]
    fn val(&self) -> f64 {
        match self {
            Node::Leaf(v) | Node::Branch(v, _) => *v,
        }
    }

    fn split(&mut self) {
        if let Node::Leaf(v) = *self {
            let c = v / 8.0;
            *self = Node::Branch(v, Box::new(std::array::from_fn(|_| Node::Leaf(c))));
        }
    }

    /// Re-sum a branch from its children and collapse it when all children are equal leaves.
    fn refresh(&mut self) {
        if let Node::Branch(v, ch) = self {
            *v = ch.iter().map(Node::val).sum();
            if let Node::Leaf(first) = ch[0] {
                if ch.iter().all(|c| matches!(c, Node::Leaf(x) if *x == first)) {
                    *self = Node::Leaf(first * 8.0);
                }
            }
        }
    }

    fn scale(&mut self, f: f64) {
        match self {
            Node::Leaf(v) => *v *= f,
            Node::Branch(v, ch) => {
                *v *= f;
                ch.iter_mut().for_each(|c| c.scale(f));
            }
        }
    }

    fn count(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Branch(_, ch) => 1 + ch.iter().map(Node::count).sum::<usize>(),
        }
    }
}

/// Parameters of the sample-based initialization over an irregular search region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitParams {
    /// Number of ground cells drawn from the sampling box.
    pub num_samples: usize,
    /// Box the samples are drawn from; defaults to the bounding box of the search region.
    pub sample_box: Option<CellBox>,
    /// Draw one extra sample inside every prior key so no prior mass is lost to sampling gaps.
    pub seed_prior_keys: bool,
}

impl Default for InitParams {
    fn default() -> Self {
        Self { num_samples: 3000, sample_box: None, seed_prior_keys: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OctreeBelief {
    object_id: ObjectId,
    size: u32,
    depth: u8,
    root: Node,
}

fn morton(c: GridCell, depth: u8) -> u64 {
    let mut key = 0u64;
    for b in (0..depth).rev() {
        let bit = |v: i32| ((v >> b) & 1) as u64;
        key = (key << 3) | (bit(c.x) << 2) | (bit(c.y) << 1) | bit(c.z);
    }
    key
}

fn octant_at(c: GridCell, shift: u8) -> usize {
    let bit = |v: i32| ((v >> shift) & 1) as usize;
    (bit(c.x) << 2) | (bit(c.y) << 1) | bit(c.z)
}

struct InitContext<'a> {
    depth: u8,
    /// `counts[l]` maps a level-`l` node to the number of search-region cells beneath it.
    counts: Vec<BTreeMap<LevelCell, u32>>,
    prior: &'a PriorValMap,
    /// Nodes that have a prior key strictly beneath them.
    shadowed: BTreeSet<LevelCell>,
}

impl InitContext<'_> {
    fn count(&self, c: LevelCell) -> u32 {
        self.counts[c.level as usize].get(&c).copied().unwrap_or(0)
    }

    /// The largest block around `g` that lies entirely in the search region and carries a single
    /// per-cell prior weight, together with the mass that block holds.
    fn block_for(&self, g: GridCell) -> (LevelCell, f64) {
        let mut top = 0u8;
        for l in 1..=self.depth {
            let a = g.ancestor(l);
            if self.count(a) == 8u32.pow(l as u32) && !self.shadowed.contains(&a) {
                top = l;
            } else {
                break;
            }
        }
        let weight = (0..=self.depth)
            .find_map(|l| {
                let a = g.ancestor(l);
                self.prior.get(&a).map(|v| v / self.count(a) as f64)
            })
            .unwrap_or(1.0);
        (g.ancestor(top), weight * 8f64.powi(top as i32))
    }
}

impl OctreeBelief {
    /// Belief with default value 1 at every ground cell.
    pub fn uniform(object_id: ObjectId, size: u32) -> Result<Self> {
        if size < 1 || !size.is_power_of_two() {
            return Err(Error::Config(format!("octree size {size} is not a power of two")));
        }
        Ok(Self {
            object_id,
            size,
            depth: size.trailing_zeros() as u8,
            root: Node::Leaf((size as f64).powi(3)),
        })
    }

    /// Belief holding the given unnormalized value at every ground cell (index `(x*m + y)*m + z`).
    pub fn from_dense(object_id: ObjectId, size: u32, values: &[f64]) -> Result<Self> {
        let mut b = Self::uniform(object_id, size)?;
        if values.len() != (size as usize).pow(3) {
            return Err(Error::Parameter("dense value count does not match octree size".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter("dense values must be finite and nonnegative".into()));
        }
        fn build(level: u8, cell: LevelCell, size: u32, values: &[f64]) -> Node {
            if level == 0 {
                let n = size as usize;
                return Node::Leaf(values[(cell.x as usize * n + cell.y as usize) * n + cell.z as usize]);
            }
            let ch: [Node; 8] = std::array::from_fn(|o| build(level - 1, cell.child(o), size, values));
            let mut node = Node::Branch(0.0, Box::new(ch));
            node.refresh();
            node
        }
        b.root = build(b.depth, LevelCell::new(0, 0, 0, b.depth), size, values);
        Ok(b)
    }

    /// Initialize a belief over an irregular search region by sampling.
    ///
    /// Ground defaults start at zero everywhere. Each of `num_samples` cells drawn uniformly from
    /// the sampling box that falls inside `search_region` activates the largest octree block around
    /// it that is fully inside the region and has uniform prior weight; activated blocks hold one
    /// unit per cell, or the prior mass where a prior key covers them. A prior value set on a node
    /// is spread evenly over the search-region cells beneath it, and the deepest prior key above a
    /// cell wins. Blocks never reached by a sample keep zero mass.
    pub fn init<R: Rng + ?Sized>(
        object_id: ObjectId,
        size: u32,
        search_region: &CellMask,
        prior: &PriorValMap,
        params: &InitParams,
        rng: &mut R,
    ) -> Result<Self> {
        let mut belief = Self::uniform(object_id, size)?;
        belief.root = Node::Leaf(0.0);
        if params.num_samples == 0 {
            return Err(Error::DegenerateBelief("number of samples must be at least 1".into()));
        }
        if search_region.size() != size {
            return Err(Error::Config("search region size does not match the octree".into()));
        }
        let Some(region_box) = search_region.bounding_box() else {
            return Err(Error::DegenerateBelief("search region is empty".into()));
        };
        let depth = belief.depth;

        let mut counts: Vec<BTreeMap<LevelCell, u32>> = vec![BTreeMap::new(); depth as usize + 1];
        for g in search_region.iter() {
            for l in 0..=depth {
                *counts[l as usize].entry(g.ancestor(l)).or_default() += 1;
            }
        }
        for (key, v) in prior {
            if key.level > depth || counts[key.level as usize].get(key).is_none() {
                return Err(Error::Config(format!("prior key {key} lies outside the search region")));
            }
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Config(format!("prior value {v} at {key} must be finite and nonnegative")));
            }
        }
        let mut shadowed = BTreeSet::new();
        for key in prior.keys() {
            let mut a = *key;
            while a.level < depth {
                a = a.parent();
                shadowed.insert(a);
            }
        }
        let sample_box = params.sample_box.unwrap_or(region_box);
        if !(sample_box.contains(region_box.min) && sample_box.contains(region_box.max)) {
            return Err(Error::Config("sampling box must contain the search region".into()));
        }
        let ctx = InitContext { depth, counts, prior, shadowed };

        if params.seed_prior_keys {
            for key in prior.keys() {
                let inside: Vec<GridCell> = key.ground_cells().filter(|g| search_region.contains(*g)).collect();
                let g = inside[rng.gen_range(0..inside.len())];
                belief.activate(g, &ctx);
            }
        }
        let (lo, hi) = (sample_box.min, sample_box.max);
        for _ in 0..params.num_samples {
            let g = GridCell::new(
                rng.gen_range(lo.x..=hi.x),
                rng.gen_range(lo.y..=hi.y),
                rng.gen_range(lo.z..=hi.z),
            );
            if search_region.contains(g) {
                belief.activate(g, &ctx);
            }
        }
        if !(belief.norm() > 0.0) {
            return Err(Error::DegenerateBelief("initialized belief has zero mass".into()));
        }
        Ok(belief)
    }

    fn activate(&mut self, g: GridCell, ctx: &InitContext<'_>) {
        let (block, value) = ctx.block_for(g);
        fn place(node: &mut Node, level: u8, target: LevelCell, value: f64) {
            if level == target.level {
                *node = Node::Leaf(value);
                return;
            }
            node.split();
            if let Node::Branch(_, ch) = node {
                let shift = level - 1 - target.level;
                let o = (((target.x >> shift) & 1) << 2 | ((target.y >> shift) & 1) << 1 | ((target.z >> shift) & 1)) as usize;
                place(&mut ch[o], level - 1, target, value);
            }
            node.refresh();
        }
        if self.value(block) == 0.0 {
            place(&mut self.root, self.depth, block, value);
        }
    }

    pub fn object_id(&self) -> ObjectId {
        self.object_id
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    /// The normalizer: total unnormalized mass, read from the root.
    pub fn norm(&self) -> f64 {
        self.root.val()
    }

    /// Number of materialized nodes.
    pub fn node_count(&self) -> usize {
        self.root.count()
    }

    fn in_bounds(&self, c: LevelCell) -> bool {
        if c.level > self.depth {
            return false;
        }
        let n = (self.size >> c.level) as i32;
        (0..n).contains(&c.x) && (0..n).contains(&c.y) && (0..n).contains(&c.z)
    }

    /// Unnormalized mass of a node at any level; absent nodes report their default value.
    pub fn value(&self, cell: LevelCell) -> f64 {
        if !self.in_bounds(cell) {
            return 0.0;
        }
        let mut node = &self.root;
        let mut level = self.depth;
        while level > cell.level {
            match node {
                Node::Leaf(v) => return v / 8f64.powi((level - cell.level) as i32),
                Node::Branch(_, ch) => {
                    let shift = level - 1 - cell.level;
                    let o = (((cell.x >> shift) & 1) << 2 | ((cell.y >> shift) & 1) << 1 | ((cell.z >> shift) & 1)) as usize;
                    node = &ch[o];
                    level -= 1;
                }
            }
        }
        node.val()
    }

    /// Normalized probability that the object lies in `cell`.
    pub fn prob(&self, cell: LevelCell) -> f64 {
        let norm = self.norm();
        if norm > 0.0 {
            self.value(cell) / norm
        } else {
            0.0
        }
    }

    pub fn prob_ground(&self, cell: GridCell) -> f64 {
        self.prob(cell.as_level())
    }

    /// Draw a ground cell with probability equal to its belief.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GridCell> {
        if !(self.norm() > 0.0) {
            return Err(Error::EmptyBelief);
        }
        let mut node = &self.root;
        let mut cell = LevelCell::new(0, 0, 0, self.depth);
        loop {
            match node {
                Node::Leaf(_) => {
                    let min = cell.ground_min();
                    let n = cell.span();
                    return Ok(GridCell::new(
                        min.x + rng.gen_range(0..n),
                        min.y + rng.gen_range(0..n),
                        min.z + rng.gen_range(0..n),
                    ));
                }
                Node::Branch(v, ch) => {
                    let r = rng.gen::<f64>() * v;
                    let mut acc = 0.0;
                    let mut pick = None;
                    for (o, c) in ch.iter().enumerate() {
                        let cv = c.val();
                        if cv <= 0.0 {
                            continue;
                        }
                        acc += cv;
                        pick = Some(o);
                        if r < acc {
                            break;
                        }
                    }
                    let o = pick.ok_or(Error::EmptyBelief)?;
                    node = &ch[o];
                    cell = cell.child(o);
                }
            }
        }
    }

    /// Bayesian update from a volumetric observation.
    ///
    /// Voxels labeled with this object are scaled by `alpha`; voxels labeled free, or labeled with
    /// a different object, are scaled by `beta`; unknown (occluded) voxels are untouched.
    pub fn update(&mut self, obs: &VolumetricObservation, alpha: f64, beta: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
            return Err(Error::Parameter(format!("update factors must be positive (alpha {alpha}, beta {beta})")));
        }
        let mut items: Vec<(GridCell, f64)> = Vec::with_capacity(obs.voxels.len());
        for (cell, label) in &obs.voxels {
            if !self.in_bounds(cell.as_level()) {
                return Err(Error::OutOfBounds(cell.to_string()));
            }
            let f = match label {
                Label::Unknown => continue,
                Label::Object(id) if *id == self.object_id => alpha,
                Label::Object(_) | Label::Free => beta,
            };
            items.push((*cell, f));
        }
        self.apply_factors(items);
        Ok(())
    }

    /// Multiply the mass of individual ground cells by the given factors.
    pub fn apply_factors(&mut self, mut items: Vec<(GridCell, f64)>) {
        let depth = self.depth;
        items.sort_by_key(|(c, _)| morton(*c, depth));
        fn apply(node: &mut Node, level: u8, items: &[(GridCell, f64)]) {
            if items.is_empty() || node.val() == 0.0 {
                return;
            }
            if level == 0 {
                if let Node::Leaf(v) = node {
                    for (_, f) in items {
                        *v *= f;
                    }
                }
                return;
            }
            node.split();
            if let Node::Branch(_, ch) = node {
                let shift = level - 1;
                let mut start = 0;
                for (o, child) in ch.iter_mut().enumerate() {
                    let end = start + items[start..].partition_point(|(c, _)| octant_at(*c, shift) <= o);
                    apply(child, level - 1, &items[start..end]);
                    start = end;
                }
            }
            node.refresh();
        }
        apply(&mut self.root, depth, &items);
        self.rescale();
    }

    /// Keep the root mass in a safe floating range by an exact power-of-two scaling.
    fn rescale(&mut self) {
        let n = self.norm();
        if n > 0.0 && !(RESCALE_LOW..=RESCALE_HIGH).contains(&n) {
            let k = -n.log2().round() as i32;
            self.root.scale(2f64.powi(k));
        }
    }

    /// The most probable ground cell; ties go to the lexicographically smallest `(x, y, z)`.
    pub fn max_cell(&self) -> Result<GridCell> {
        if !(self.norm() > 0.0) {
            return Err(Error::EmptyBelief);
        }
        let mut best: Option<(f64, GridCell)> = None;
        fn walk(node: &Node, cell: LevelCell, best: &mut Option<(f64, GridCell)>) {
            match node {
                Node::Leaf(v) => {
                    let density = v / 8f64.powi(cell.level as i32);
                    let corner = cell.ground_min();
                    let better = match best {
                        None => true,
                        Some((d, c)) => density > *d || (density == *d && corner < *c),
                    };
                    if better {
                        *best = Some((density, corner));
                    }
                }
                Node::Branch(_, ch) => {
                    for (o, c) in ch.iter().enumerate() {
                        walk(c, cell.child(o), best);
                    }
                }
            }
        }
        walk(&self.root, LevelCell::new(0, 0, 0, self.depth), &mut best);
        Ok(best.expect("nonempty tree").1)
    }

    /// Normalized probabilities of every ground cell, indexed `(x*m + y)*m + z`.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.size as usize;
        let mut out = vec![0.0; n * n * n];
        let norm = self.norm();
        if !(norm > 0.0) {
            return out;
        }
        fn walk(node: &Node, cell: LevelCell, n: usize, norm: f64, out: &mut [f64]) {
            match node {
                Node::Leaf(v) => {
                    let p = v / 8f64.powi(cell.level as i32) / norm;
                    for g in cell.ground_cells() {
                        out[(g.x as usize * n + g.y as usize) * n + g.z as usize] = p;
                    }
                }
                Node::Branch(_, ch) => {
                    for (o, c) in ch.iter().enumerate() {
                        walk(c, cell.child(o), n, norm, out);
                    }
                }
            }
        }
        walk(&self.root, LevelCell::new(0, 0, 0, self.depth), n, norm, &mut out);
        out
    }

    /// Check that every branch equals the sum of its children and no mass is negative.
    pub fn check_invariants(&self) -> bool {
        fn ok(node: &Node) -> bool {
            match node {
                Node::Leaf(v) => *v >= 0.0 && v.is_finite(),
                Node::Branch(v, ch) => {
                    let s: f64 = ch.iter().map(Node::val).sum();
                    *v == s && ch.iter().all(ok)
                }
            }
        }
        ok(&self.root)
    }

    /// Write the materialized nodes in pre-order, one `level x y z value` record per line.
    pub fn write_records<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# octree-belief object={} size={}", self.object_id, self.size)?;
        fn walk<W: Write>(node: &Node, cell: LevelCell, w: &mut W) -> std::io::Result<()> {
            writeln!(w, "{} {} {} {} {}", cell.level, cell.x, cell.y, cell.z, node.val())?;
            if let Node::Branch(_, ch) = node {
                for (o, c) in ch.iter().enumerate() {
                    walk(c, cell.child(o), w)?;
                }
            }
            Ok(())
        }
        walk(&self.root, LevelCell::new(0, 0, 0, self.depth), &mut w)?;
        Ok(())
    }

    /// Parse the output of [`write_records`](Self::write_records).
    pub fn read_records<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty belief stream".into()))??;
        let field = |name: &str| -> Result<u64> {
            header
                .split_whitespace()
                .find_map(|t| t.strip_prefix(&format!("{name}=")))
                .ok_or_else(|| Error::Parse(format!("missing {name} in header")))?
                .parse()
                .map_err(|e| Error::Parse(format!("{name}: {e}")))
        };
        let mut b = Self::uniform(field("object")? as ObjectId, field("size")? as u32)?;
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 5 {
                return Err(Error::Parse(format!("bad record '{line}'")));
            }
            let p = |s: &str| s.parse::<i32>().map_err(|e| Error::Parse(e.to_string()));
            let level = p(t[0])? as u8;
            let v: f64 = t[4].parse().map_err(|e: std::num::ParseFloatError| Error::Parse(e.to_string()))?;
            records.push((LevelCell::new(p(t[1])?, p(t[2])?, p(t[3])?, level), v));
        }
        let mut it = records.into_iter().peekable();
        fn build(it: &mut std::iter::Peekable<std::vec::IntoIter<(LevelCell, f64)>>, expect: LevelCell) -> Result<Node> {
            let (cell, v) = it.next().ok_or_else(|| Error::Parse("truncated belief stream".into()))?;
            if cell != expect {
                return Err(Error::Parse(format!("expected node {expect}, found {cell}")));
            }
            let has_children = cell.level > 0 && it.peek().is_some_and(|(c, _)| *c == cell.child(0));
            if !has_children {
                return Ok(Node::Leaf(v));
            }
            let mut ch = Vec::with_capacity(8);
            for o in 0..8 {
                ch.push(build(it, cell.child(o))?);
            }
            let ch: [Node; 8] = ch.try_into().map_err(|_| Error::Parse("bad branch".into()))?;
            Ok(Node::Branch(v, Box::new(ch)))
        }
        b.root = build(&mut it, LevelCell::new(0, 0, 0, b.depth))?;
        if it.next().is_some() {
            return Err(Error::Parse("trailing records".into()));
        }
        Ok(b)
    }
}
