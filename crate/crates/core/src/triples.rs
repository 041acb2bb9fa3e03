//! Integer-encoded triple storage: ingestion, deduplication, entity fusion,
//! train/valid/test partitioning and graph export.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

/// A single `(head, relation, tail)` fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Bijective label <-> dense id mapping, ids assigned in first-insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    forward: HashMap<String, u32>,
    reverse: Vec<String>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `label`, assigning the next free id if it is new.
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.forward.get(label) {
            return id;
        }
        let id = self.reverse.len() as u32;
        self.forward.insert(label.to_owned(), id);
        self.reverse.push(label.to_owned());
        id
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.forward.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.reverse.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    /// Labels in id order.
    pub fn labels(&self) -> &[String] {
        &self.reverse
    }

    /// Builds a dictionary from labels already in id order. Duplicate labels
    /// are rejected.
    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut dict = Dictionary::new();
        for (i, label) in labels.into_iter().enumerate() {
            let label = label.into();
            if dict.forward.contains_key(&label) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate label {label:?}"),
                });
            }
            dict.forward.insert(label.clone(), i as u32);
            dict.reverse.push(label);
        }
        Ok(dict)
    }
}

/// The three evaluation partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Delimiter conventions for triple files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripleFormat {
    pub delimiter: char,
    pub comment: char,
}

impl Default for TripleFormat {
    fn default() -> Self {
        Self {
            delimiter: '\t',
            comment: '#',
        }
    }
}

/// Deduplicated triples plus their entity/relation dictionaries and a
/// partition into train/valid/test. A freshly ingested store has every
/// triple in the train split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleStore {
    triples: Vec<Triple>,
    entities: Dictionary,
    relations: Dictionary,
    assignment: Vec<Split>,
}

impl TripleStore {
    /// Builds a store from labeled triples, collapsing duplicates and
    /// assigning ids in first-occurrence order.
    pub fn from_labeled<I, S>(triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: AsRef<str>,
    {
        let mut builder = StoreBuilder::default();
        for (h, r, t) in triples {
            builder.push(h.as_ref(), r.as_ref(), t.as_ref());
        }
        builder.finish()
    }

    /// Builds a store over existing dictionaries. Ids must be in range and
    /// the triples must be distinct.
    pub fn from_parts(
        triples: Vec<Triple>,
        entities: Dictionary,
        relations: Dictionary,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(triples.len());
        for (i, t) in triples.iter().enumerate() {
            if t.head as usize >= entities.len() || t.tail as usize >= entities.len() {
                return Err(Error::Index(format!("triple {i}: entity id out of range")));
            }
            if t.relation as usize >= relations.len() {
                return Err(Error::Index(format!("triple {i}: relation id out of range")));
            }
            if !seen.insert(*t) {
                return Err(Error::Schema(format!("triple {i} is a duplicate")));
            }
        }
        let assignment = vec![Split::Train; triples.len()];
        Ok(Self {
            triples,
            entities,
            relations,
            assignment,
        })
    }

    /// Reads a delimited triple file.
    pub fn ingest(path: impl AsRef<Path>, format: TripleFormat) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), format).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    /// Parses triples from any buffered reader; see [`TripleStore::ingest`].
    pub fn read<R: BufRead>(reader: R, format: TripleFormat) -> Result<Self> {
        let mut builder = StoreBuilder::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<input>", e))?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() || line.starts_with(format.comment) {
                continue;
            }
            let (h, r, t) = split_fields(line, format.delimiter).ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!(
                    "expected 3 fields separated by {:?}, found {}",
                    format.delimiter,
                    line.split(format.delimiter).count()
                ),
            })?;
            builder.push(h, r, t);
        }
        builder.finish()
    }

    /// Convenience wrapper around [`TripleStore::read`] for in-memory text.
    pub fn parse(text: &str, format: TripleFormat) -> Result<Self> {
        Self::read(text.as_bytes(), format)
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entities(&self) -> &Dictionary {
        &self.entities
    }

    pub fn relations(&self) -> &Dictionary {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn split_of(&self, index: usize) -> Split {
        self.assignment[index]
    }

    /// Indices of the triples in `split`, ascending.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, s)| (*s == split).then_some(i))
            .collect()
    }

    pub fn split_triples(&self, split: Split) -> Vec<Triple> {
        self.triples
            .iter()
            .zip(&self.assignment)
            .filter_map(|(t, s)| (*s == split).then_some(*t))
            .collect()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.assignment.iter().filter(|s| **s == split).count()
    }

    /// Number of triples each entity takes part in (as head or tail).
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_entities()];
        for t in &self.triples {
            deg[t.head as usize] += 1;
            if t.tail != t.head {
                deg[t.tail as usize] += 1;
            }
        }
        deg
    }

    pub fn labels_of(&self, t: &Triple) -> (&str, &str, &str) {
        (
            self.entities.label(t.head).unwrap_or(""),
            self.relations.label(t.relation).unwrap_or(""),
            self.entities.label(t.tail).unwrap_or(""),
        )
    }

    /// Resolves labels to a triple, if every label is known.
    pub fn lookup(&self, head: &str, relation: &str, tail: &str) -> Option<Triple> {
        Some(Triple::new(
            self.entities.id(head)?,
            self.relations.id(relation)?,
            self.entities.id(tail)?,
        ))
    }

    /// Randomly partitions the triples into train/valid/test with the given
    /// proportions: seeded shuffle, then contiguous cut.
    pub fn split(&self, ratio: [f64; 3], seed: u64) -> Result<Self> {
        if ratio.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!("split ratio {ratio:?} has a negative entry")));
        }
        let sum: f64 = ratio.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratio {ratio:?} sums to {sum}, expected 1")));
        }
        let n = self.triples.len();
        let n_train = ((ratio[0] * n as f64).round() as usize).min(n);
        let n_valid = ((ratio[1] * n as f64).round() as usize).min(n - n_train);

        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);

        let mut assignment = vec![Split::Test; n];
        for (pos, &idx) in order.iter().enumerate() {
            assignment[idx] = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
        }
        Ok(Self {
            assignment,
            ..self.clone()
        })
    }

    /// Returns a copy with an explicit split assignment (one tag per triple).
    pub fn with_assignment(&self, assignment: Vec<Split>) -> Result<Self> {
        if assignment.len() != self.triples.len() {
            return Err(Error::Shape(format!(
                "{} split tags for {} triples",
                assignment.len(),
                self.triples.len()
            )));
        }
        Ok(Self {
            assignment,
            ..self.clone()
        })
    }

    /// Replaces the triple at `index` in place, keeping its split. Used to
    /// plant labeled corruptions; the caller guarantees uniqueness.
    pub(crate) fn replace_triple(&mut self, index: usize, triple: Triple) {
        self.triples[index] = triple;
    }

    /// Merges entities whose key attributes are all present and jointly
    /// equal. Each group collapses onto its lowest id; triples that become
    /// duplicates are dropped (first occurrence kept) and ids re-densified.
    /// Entities without a row in `attributes` are never merged.
    pub fn fuse_entities(&self, key: &FusionKey, attributes: &AttributeTable) -> Result<Self> {
        let columns = key
            .attributes()
            .iter()
            .map(|name| {
                attributes.column(name).ok_or_else(|| {
                    Error::Schema(format!("key attribute {name:?} is not in the attribute table"))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let n = self.num_entities();
        let mut target: Vec<u32> = (0..n as u32).collect();
        let mut first_with_key: HashMap<Vec<&str>, u32> = HashMap::new();
        for id in 0..n as u32 {
            let label = self.entities.label(id).unwrap_or_default();
            let Some(row) = attributes.row(label) else {
                continue;
            };
            let values: Option<Vec<&str>> = columns.iter().map(|&c| row[c].as_deref()).collect();
            let Some(values) = values else {
                continue;
            };
            // ids are visited in ascending order, so the first holder is the lowest id
            let owner = *first_with_key.entry(values).or_insert(id);
            target[id as usize] = owner;
        }

        let mut entities = Dictionary::new();
        let mut remap = vec![u32::MAX; n];
        for id in 0..n {
            let owner = target[id] as usize;
            if owner == id {
                remap[id] = entities.intern(self.entities.label(id as u32).unwrap_or_default());
            }
        }
        for id in 0..n {
            remap[id] = remap[target[id] as usize];
        }

        let mut seen = HashSet::with_capacity(self.triples.len());
        let mut triples = Vec::with_capacity(self.triples.len());
        let mut assignment = Vec::with_capacity(self.triples.len());
        for (t, s) in self.triples.iter().zip(&self.assignment) {
            let fused = Triple::new(remap[t.head as usize], t.relation, remap[t.tail as usize]);
            if seen.insert(fused) {
                triples.push(fused);
                assignment.push(*s);
            }
        }
        Ok(Self {
            triples,
            entities,
            relations: self.relations.clone(),
            assignment,
        })
    }

    /// Writes the triples as a delimited label file.
    pub fn write_triples<W: Write>(&self, out: W, triples: &[Triple]) -> Result<()> {
        let mut out = BufWriter::new(out);
        for t in triples {
            let (h, r, tl) = self.labels_of(t);
            for label in [h, r, tl] {
                check_tsv_label(label)?;
            }
            writeln!(out, "{h}\t{r}\t{tl}").map_err(|e| Error::io("<output>", e))?;
        }
        out.flush().map_err(|e| Error::io("<output>", e))
    }

    /// Writes a node table (`id,label`) and an edge table
    /// (`head,relation,tail`, with node ids and relation labels).
    pub fn export_graph(&self, nodes_path: impl AsRef<Path>, edges_path: impl AsRef<Path>) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyStore);
        }
        let nodes_path = nodes_path.as_ref();
        let edges_path = edges_path.as_ref();
        let csv_err = |path: &Path| {
            let path = path.to_path_buf();
            move |e: csv::Error| Error::io(path.clone(), std::io::Error::other(e))
        };

        let mut nodes = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::NonNumeric)
            .from_path(nodes_path)
            .map_err(csv_err(nodes_path))?;
        nodes.write_record(["id", "label"]).map_err(csv_err(nodes_path))?;
        for (id, label) in self.entities.labels().iter().enumerate() {
            nodes
                .write_record([id.to_string().as_str(), label])
                .map_err(csv_err(nodes_path))?;
        }
        nodes.flush().map_err(|e| Error::io(nodes_path, e))?;

        let mut edges = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::NonNumeric)
            .from_path(edges_path)
            .map_err(csv_err(edges_path))?;
        edges
            .write_record(["head", "relation", "tail"])
            .map_err(csv_err(edges_path))?;
        for t in &self.triples {
            edges
                .write_record([
                    t.head.to_string().as_str(),
                    self.relations.label(t.relation).unwrap_or_default(),
                    t.tail.to_string().as_str(),
                ])
                .map_err(csv_err(edges_path))?;
        }
        edges.flush().map_err(|e| Error::io(edges_path, e))
    }

    /// Reads back a node/edge export. Triples are re-ingested in edge order,
    /// so `import_graph(export_graph(ingest(f)))` reproduces `ingest(f)`.
    pub fn import_graph(nodes_path: impl AsRef<Path>, edges_path: impl AsRef<Path>) -> Result<Self> {
        let nodes_path = nodes_path.as_ref();
        let edges_path = edges_path.as_ref();
        let nodes = File::open(nodes_path).map_err(|e| Error::io(nodes_path, e))?;
        let edges = File::open(edges_path).map_err(|e| Error::io(edges_path, e))?;
        Self::read_graph(nodes, edges)
    }

    /// Reader-based form of [`TripleStore::import_graph`].
    pub fn read_graph<N: Read, E: Read>(nodes: N, edges: E) -> Result<Self> {
        let parse_err = |line: usize, e: &dyn std::fmt::Display| Error::Parse {
            line,
            message: e.to_string(),
        };
        let mut labels: HashMap<u64, String> = HashMap::new();
        let mut reader = csv::Reader::from_reader(nodes);
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| parse_err(i + 2, &e))?;
            if rec.len() != 2 {
                return Err(parse_err(i + 2, &"node row needs 2 fields"));
            }
            let id: u64 = rec[0].parse().map_err(|e| parse_err(i + 2, &e))?;
            if labels.insert(id, rec[1].to_owned()).is_some() {
                return Err(parse_err(i + 2, &format!("duplicate node id {id}")));
            }
        }

        let mut builder = StoreBuilder::default();
        let mut reader = csv::Reader::from_reader(edges);
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| parse_err(i + 2, &e))?;
            if rec.len() != 3 {
                return Err(parse_err(i + 2, &"edge row needs 3 fields"));
            }
            let node = |field: &str| -> Result<&String> {
                let id: u64 = field.parse().map_err(|e| parse_err(i + 2, &e))?;
                labels
                    .get(&id)
                    .ok_or_else(|| parse_err(i + 2, &format!("unknown node id {id}")))
            };
            let head = node(&rec[0])?;
            let tail = node(&rec[2])?;
            builder.push(head, &rec[1], tail);
        }
        builder.finish()
    }

    /// Persists the store as a dataset directory: `entities.tsv`,
    /// `relations.tsv` (id, label), `triples.tsv` and one label file per split.
    pub fn save_dataset(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, dict) in [("entities.tsv", &self.entities), ("relations.tsv", &self.relations)] {
            let path = dir.join(name);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = BufWriter::new(file);
            for (id, label) in dict.labels().iter().enumerate() {
                check_tsv_label(label)?;
                writeln!(out, "{id}\t{label}").map_err(|e| Error::io(&path, e))?;
            }
            out.flush().map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("triples.tsv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.write_triples(file, &self.triples)?;
        for split in Split::ALL {
            let path = dir.join(format!("{}.tsv", split.name()));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            self.write_triples(file, &self.split_triples(split))?;
        }
        Ok(())
    }

    /// Loads a dataset directory written by [`TripleStore::save_dataset`].
    pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        };
        let entities = parse_dictionary(&read("entities.tsv")?)?;
        let relations = parse_dictionary(&read("relations.tsv")?)?;

        let resolve = |text: &str| -> Result<Vec<Triple>> {
            let mut out = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let bad = |message: String| Error::Parse { line: i + 1, message };
                let (h, r, t) = split_fields(line, '\t').ok_or_else(|| bad("expected 3 fields".into()))?;
                let triple = Triple::new(
                    entities.id(h).ok_or_else(|| bad(format!("unknown entity {h:?}")))?,
                    relations.id(r).ok_or_else(|| bad(format!("unknown relation {r:?}")))?,
                    entities.id(t).ok_or_else(|| bad(format!("unknown entity {t:?}")))?,
                );
                out.push(triple);
            }
            Ok(out)
        };

        let triples = resolve(&read("triples.tsv")?)?;
        let per_split = Split::ALL
            .iter()
            .map(|split| Ok((*split, resolve(&read(&format!("{}.tsv", split.name()))?)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut store = Self::from_parts(triples, entities, relations)?;
        let index: HashMap<Triple, usize> =
            store.triples.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let mut assignment: Vec<Option<Split>> = vec![None; store.len()];
        for (split, split_triples) in per_split {
            for t in split_triples {
                let i = *index
                    .get(&t)
                    .ok_or_else(|| Error::Schema(format!("{} split has a triple not in triples.tsv", split.name())))?;
                if assignment[i].replace(split).is_some() {
                    return Err(Error::Schema(format!("triple {i} appears in two splits")));
                }
            }
        }
        store.assignment = assignment
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::Schema(format!("triple {i} is in no split"))))
            .collect::<Result<_>>()?;
        Ok(store)
    }

    /// Loads either a dataset directory or a single triple file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.is_dir() {
            Self::load_dataset(path)
        } else {
            Self::ingest(path, TripleFormat::default())
        }
    }
}

fn split_fields(line: &str, delimiter: char) -> Option<(&str, &str, &str)> {
    let mut fields = line.split(delimiter);
    let h = fields.next()?;
    let r = fields.next()?;
    let t = fields.next()?;
    fields.next().is_none().then_some((h, r, t))
}

fn check_tsv_label(label: &str) -> Result<()> {
    if label.contains(['\t', '\n', '\r']) {
        return Err(Error::Format(format!("label {label:?} cannot be written as TSV")));
    }
    Ok(())
}

fn parse_dictionary(text: &str) -> Result<Dictionary> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |message: String| Error::Parse { line: i + 1, message };
        let (id, label) = line.split_once('\t').ok_or_else(|| bad("expected `id<TAB>label`".into()))?;
        let id: usize = id.parse().map_err(|_| bad(format!("bad id {id:?}")))?;
        if id != labels.len() {
            return Err(bad(format!("ids must be dense and ordered, found {id}")));
        }
        labels.push(label);
    }
    Dictionary::from_labels(labels)
}

#[derive(Default)]
struct StoreBuilder {
    entities: Dictionary,
    relations: Dictionary,
    seen: HashSet<Triple>,
    triples: Vec<Triple>,
}

impl StoreBuilder {
    fn push(&mut self, h: &str, r: &str, t: &str) {
        let triple = Triple::new(self.entities.intern(h), self.relations.intern(r), self.entities.intern(t));
        if self.seen.insert(triple) {
            self.triples.push(triple);
        }
    }

    fn finish(self) -> Result<TripleStore> {
        if self.triples.is_empty() {
            return Err(Error::EmptyStore);
        }
        let n = self.triples.len();
        Ok(TripleStore {
            triples: self.triples,
            entities: self.entities,
            relations: self.relations,
            assignment: vec![Split::Train; n],
        })
    }
}

/// Attribute names whose joint equality identifies one real-world entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionKey(Vec<String>);

impl FusionKey {
    pub fn new<I, S>(attributes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let attrs: Vec<String> = attributes.into_iter().map(Into::into).collect();
        if attrs.is_empty() {
            return Err(Error::Config("fusion key needs at least one attribute".into()));
        }
        Ok(Self(attrs))
    }

    pub fn attributes(&self) -> &[String] {
        &self.0
    }
}

/// Per-entity attribute values keyed by entity label. `None` marks an
/// explicitly missing value.
#[derive(Debug, Clone, Default)]
pub struct AttributeTable {
    columns: Vec<String>,
    rows: HashMap<String, Vec<Option<String>>>,
}

impl AttributeTable {
    pub fn new<I, S>(columns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: HashMap::new(),
        }
    }

    pub fn insert(&mut self, entity: impl Into<String>, values: Vec<Option<String>>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::Shape(format!(
                "{} attribute values for {} columns",
                values.len(),
                self.columns.len()
            )));
        }
        self.rows.insert(entity.into(), values);
        Ok(())
    }

    /// Reads a CSV table with an `entity` column followed by attribute
    /// columns; empty cells are treated as missing.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(reader);
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
            .clone();
        if headers.is_empty() {
            return Err(Error::Schema("attribute table has no columns".into()));
        }
        let mut table = AttributeTable::new(headers.iter().skip(1));
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
            let values = rec
                .iter()
                .skip(1)
                .map(|v| (!v.is_empty()).then(|| v.to_owned()))
                .collect();
            table.insert(&rec[0], values).map_err(|_| Error::Parse {
                line: i + 2,
                message: "row width differs from header".into(),
            })?;
        }
        Ok(table)
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    fn row(&self, entity: &str) -> Option<&[Option<String>]> {
        self.rows.get(entity).map(Vec::as_slice)
    }
}
