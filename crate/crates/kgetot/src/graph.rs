//! Dataset ingestion: string interning, the relational graph, the type
//! graph, and per-entity neighbor indexes.
//!
//! Input files are UTF-8, one record per line, tab-separated:
//! triples as `head<TAB>relation<TAB>tail`, type tuples as
//! `entity<TAB>type`. Lines are trimmed, blank lines skipped, and duplicate
//! records deduplicated. Ids are dense, 0-based, and assigned in first
//! appearance order, so identical input bytes always produce identical ids.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::views::ViewSet;

/// What a vocabulary's ids refer to.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, Serialize, Deserialize)]
pub enum VocabKind {
    Entity,
    Relation,
    Type,
    Cluster,
}

impl fmt::Display for VocabKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VocabKind::Entity => "entity",
            VocabKind::Relation => "relation",
            VocabKind::Type => "type",
            VocabKind::Cluster => "cluster",
        };
        f.write_str(s)
    }
}

/// Bidirectional map between names and dense 0-based ids.
#[derive(Clone, Debug)]
pub struct Vocab {
    kind: VocabKind,
    name_to_id: HashMap<String, usize>,
    id_to_name: Vec<String>,
}

impl Vocab {
    pub fn new(kind: VocabKind) -> Self {
        Vocab {
            kind,
            name_to_id: HashMap::new(),
            id_to_name: Vec::new(),
        }
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    /// Returns the id for `name`, interning it on first appearance.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.name_to_id.get(name) {
            return id;
        }
        let id = self.id_to_name.len();
        self.id_to_name.push(name.to_string());
        self.name_to_id.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.name_to_id.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.id_to_name[id]
    }

    pub fn len(&self) -> usize {
        self.id_to_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_name.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.id_to_name.iter().map(|s| s.as_str())
    }

    /// Hex digest of the id → name mapping, used for checkpoint/dataset
    /// consistency checks.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.id_to_name {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// The four vocabularies of a dataset. The cluster vocabulary starts empty
/// and is filled by the view builder.
#[derive(Clone, Debug)]
pub struct Vocabs {
    pub entities: Vocab,
    pub relations: Vocab,
    pub types: Vocab,
    pub clusters: Vocab,
}

impl Vocabs {
    fn new() -> Self {
        Vocabs {
            entities: Vocab::new(VocabKind::Entity),
            relations: Vocab::new(VocabKind::Relation),
            types: Vocab::new(VocabKind::Type),
            clusters: Vocab::new(VocabKind::Cluster),
        }
    }
}

/// A relational triple over interned ids.
pub type Triple = (usize, usize, usize);
/// An (entity, type) assertion over interned ids.
pub type Tuple = (usize, usize);

/// Interned relational graph plus train/valid/test type tuples.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocabs: Vocabs,
    pub relational_edges: Vec<Triple>,
    pub train_tuples: Vec<Tuple>,
    pub valid_tuples: Vec<Tuple>,
    pub test_tuples: Vec<Tuple>,
}

impl Dataset {
    pub fn num_entities(&self) -> usize {
        self.vocabs.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.vocabs.relations.len()
    }

    pub fn num_types(&self) -> usize {
        self.vocabs.types.len()
    }

    pub fn tuples(&self, split: Split) -> &[Tuple] {
        match split {
            Split::Train => &self.train_tuples,
            Split::Valid => &self.valid_tuples,
            Split::Test => &self.test_tuples,
        }
    }

    /// Checks the structural invariants: ids in bounds, no duplicate edges
    /// or tuples, valid/test disjoint from train.
    pub fn validate(&self) -> Result<()> {
        let ne = self.num_entities();
        let nr = self.num_relations();
        let nt = self.num_types();
        let mut seen_edges = HashSet::with_capacity(self.relational_edges.len());
        for &(h, r, t) in &self.relational_edges {
            if h >= ne || t >= ne || r >= nr {
                return Err(Error::Consistency(format!(
                    "edge ({h}, {r}, {t}) exceeds vocab bounds"
                )));
            }
            if !seen_edges.insert((h, r, t)) {
                return Err(Error::Consistency(format!("duplicate edge ({h}, {r}, {t})")));
            }
        }
        let train: HashSet<Tuple> = self.train_tuples.iter().copied().collect();
        if train.len() != self.train_tuples.len() {
            return Err(Error::Consistency("duplicate train tuple".into()));
        }
        for (split, tuples) in [("valid", &self.valid_tuples), ("test", &self.test_tuples)] {
            let mut seen = HashSet::with_capacity(tuples.len());
            for &(e, t) in tuples.iter() {
                if e >= ne || t >= nt {
                    return Err(Error::Consistency(format!(
                        "{split} tuple ({e}, {t}) exceeds vocab bounds"
                    )));
                }
                if !seen.insert((e, t)) {
                    return Err(Error::Consistency(format!("duplicate {split} tuple ({e}, {t})")));
                }
                if train.contains(&(e, t)) {
                    return Err(Error::Consistency(format!(
                        "{split} tuple ({e}, {t}) also present in train"
                    )));
                }
            }
        }
        for &(e, t) in &self.train_tuples {
            if e >= ne || t >= nt {
                return Err(Error::Consistency(format!(
                    "train tuple ({e}, {t}) exceeds vocab bounds"
                )));
            }
        }
        Ok(())
    }

    /// All known types of each entity across every split (the filter set of
    /// the evaluation protocol).
    pub fn known_types_per_entity(&self) -> Vec<Vec<usize>> {
        let mut known: Vec<HashSet<usize>> = vec![HashSet::new(); self.num_entities()];
        for tuples in [&self.train_tuples, &self.valid_tuples, &self.test_tuples] {
            for &(e, t) in tuples.iter() {
                known[e].insert(t);
            }
        }
        known
            .into_iter()
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .collect()
    }
}

/// Evaluation split selector.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// Relation-id layout once inverse edges and the two view relations are
/// materialized: base relations keep their ids, the inverse of `r` is
/// `r + |R|`, then `has_type` and `has_cluster`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelationScheme {
    base: usize,
}

impl RelationScheme {
    pub fn new(num_base_relations: usize) -> Self {
        RelationScheme {
            base: num_base_relations,
        }
    }

    pub fn num_base(&self) -> usize {
        self.base
    }

    pub fn inverse(&self, rel: usize) -> usize {
        debug_assert!(rel < self.base);
        rel + self.base
    }

    pub fn has_type(&self) -> usize {
        2 * self.base
    }

    pub fn has_cluster(&self) -> usize {
        2 * self.base + 1
    }

    /// Total relation-id count, including inverses and the two view relations.
    pub fn total(&self) -> usize {
        2 * self.base + 2
    }
}

/// Kind of the node a neighbor entry points at.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NeighborKind {
    Entity,
    Type,
    Cluster,
}

/// One `(relation, neighbor)` pair in an entity's neighborhood.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NeighborEntry {
    pub relation: usize,
    pub neighbor: usize,
    pub kind: NeighborKind,
}

/// Per-entity neighbor lists, sorted by `(relation, neighbor)`.
///
/// Relational neighbors come from the relational graph (both directions when
/// inverse edges are materialized), type neighbors from the train split of
/// the type graph, and cluster neighbors from the entity-cluster view. Test
/// and valid tuples never contribute entries.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    pub scheme: RelationScheme,
    entries: Vec<Vec<NeighborEntry>>,
}

impl NeighborIndex {
    pub fn neighbors(&self, entity: usize) -> &[NeighborEntry] {
        &self.entries[entity]
    }

    pub fn num_entities(&self) -> usize {
        self.entries.len()
    }

    pub fn total_entries(&self) -> usize {
        self.entries.iter().map(|e| e.len()).sum()
    }
}

/// Loads and interns a dataset from the four tab-separated input files.
pub fn load_dataset(
    triples_path: &Path,
    train_tuples_path: &Path,
    valid_tuples_path: &Path,
    test_tuples_path: &Path,
) -> Result<Dataset> {
    let triples = open(triples_path)?;
    let train = open(train_tuples_path)?;
    let valid = open(valid_tuples_path)?;
    let test = open(test_tuples_path)?;
    let ds = load_dataset_from_readers(
        (triples, triples_path),
        (train, train_tuples_path),
        (valid, valid_tuples_path),
        (test, test_tuples_path),
    )?;
    log::info!(
        "loaded dataset: {} entities, {} relations, {} types, {} edges, {}/{}/{} tuples",
        ds.num_entities(),
        ds.num_relations(),
        ds.num_types(),
        ds.relational_edges.len(),
        ds.train_tuples.len(),
        ds.valid_tuples.len(),
        ds.test_tuples.len()
    );
    Ok(ds)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Reader-based variant of [`load_dataset`]; paths only label errors.
pub fn load_dataset_from_readers<R: Read>(
    triples: (R, &Path),
    train: (R, &Path),
    valid: (R, &Path),
    test: (R, &Path),
) -> Result<Dataset> {
    let mut vocabs = Vocabs::new();
    let mut edges = Vec::new();
    let mut seen_edges = HashSet::new();
    let mut self_loops = 0usize;

    for_each_record(triples.0, triples.1, 3, |fields| {
        let h = vocabs.entities.intern(fields[0]);
        let r = vocabs.relations.intern(fields[1]);
        let t = vocabs.entities.intern(fields[2]);
        if h == t {
            self_loops += 1;
            return;
        }
        if seen_edges.insert((h, r, t)) {
            edges.push((h, r, t));
        }
    })?;
    if self_loops > 0 {
        log::warn!("dropped {self_loops} self-loop triples");
    }

    let mut train_tuples = Vec::new();
    let mut train_set = HashSet::new();
    for_each_record(train.0, train.1, 2, |fields| {
        let e = vocabs.entities.intern(fields[0]);
        let t = vocabs.types.intern(fields[1]);
        if train_set.insert((e, t)) {
            train_tuples.push((e, t));
        }
    })?;

    let mut load_eval_split = |reader: R, path: &Path| -> Result<Vec<Tuple>> {
        let mut tuples = Vec::new();
        let mut seen = HashSet::new();
        let mut overlapped = 0usize;
        for_each_record(reader, path, 2, |fields| {
            let e = vocabs.entities.intern(fields[0]);
            let t = vocabs.types.intern(fields[1]);
            if train_set.contains(&(e, t)) {
                overlapped += 1;
                return;
            }
            if seen.insert((e, t)) {
                tuples.push((e, t));
            }
        })?;
        if overlapped > 0 {
            log::warn!(
                "dropped {overlapped} tuples from {} that duplicate train tuples",
                path.display()
            );
        }
        Ok(tuples)
    };

    let valid_tuples = load_eval_split(valid.0, valid.1)?;
    let test_tuples = load_eval_split(test.0, test.1)?;

    let ds = Dataset {
        vocabs,
        relational_edges: edges,
        train_tuples,
        valid_tuples,
        test_tuples,
    };
    ds.validate()?;
    Ok(ds)
}

fn for_each_record<R: Read>(
    reader: R,
    path: &Path,
    arity: usize,
    mut f: impl FnMut(&[&str]),
) -> Result<()> {
    let buf = BufReader::new(reader);
    for (idx, line) in buf.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').map(|s| s.trim()).collect();
        if fields.len() != arity || fields.iter().any(|s| s.is_empty()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected {arity} tab-separated fields, got {}", fields.len()),
            });
        }
        f(&fields);
    }
    Ok(())
}

/// Writes the relational edges as a tab-separated triples file.
pub fn write_triples(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = String::new();
    for &(h, r, t) in &dataset.relational_edges {
        out.push_str(dataset.vocabs.entities.name(h));
        out.push('\t');
        out.push_str(dataset.vocabs.relations.name(r));
        out.push('\t');
        out.push_str(dataset.vocabs.entities.name(t));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes one split's tuples as a tab-separated file.
pub fn write_tuples(path: &Path, dataset: &Dataset, split: Split) -> Result<()> {
    let mut out = String::new();
    for &(e, t) in dataset.tuples(split) {
        out.push_str(dataset.vocabs.entities.name(e));
        out.push('\t');
        out.push_str(dataset.vocabs.types.name(t));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Builds the merged neighbor index from the relational graph and the
/// train-only views. `include_inverse` materializes reverse relational
/// edges under `rel + |R|` ids (the default).
pub fn build_neighbor_index(
    dataset: &Dataset,
    viewset: &ViewSet,
    include_inverse: bool,
) -> Result<NeighborIndex> {
    viewset.check_compatible(dataset)?;
    let scheme = RelationScheme::new(dataset.num_relations());
    let mut entries: Vec<Vec<NeighborEntry>> = vec![Vec::new(); dataset.num_entities()];

    for &(h, r, t) in &dataset.relational_edges {
        entries[h].push(NeighborEntry {
            relation: r,
            neighbor: t,
            kind: NeighborKind::Entity,
        });
        if include_inverse {
            entries[t].push(NeighborEntry {
                relation: scheme.inverse(r),
                neighbor: h,
                kind: NeighborKind::Entity,
            });
        }
    }
    for &(e, t) in &viewset.e2t {
        entries[e].push(NeighborEntry {
            relation: scheme.has_type(),
            neighbor: t,
            kind: NeighborKind::Type,
        });
    }
    for &(e, c) in &viewset.e2c {
        entries[e].push(NeighborEntry {
            relation: scheme.has_cluster(),
            neighbor: c,
            kind: NeighborKind::Cluster,
        });
    }

    for list in &mut entries {
        list.sort_unstable_by_key(|n| (n.relation, n.neighbor));
    }

    Ok(NeighborIndex { scheme, entries })
}
