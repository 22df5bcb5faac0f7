//! Deterministic synthetic knowledge graph for examples and end-to-end
//! tests.
//!
//! Fifty entities in four groups, five relations, and twelve compositional
//! type names (`{group}_{color}` over four group tokens and three colors,
//! yielding seven clusters). Every entity carries its group's three types:
//! two in train and one held out, alternating between valid and test, so a
//! model that exploits group structure can rank the held-out type first.

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{load_dataset_from_readers, Dataset};

const GROUPS: [&str; 4] = ["aster", "birch", "cedar", "dahlia"];
const COLORS: [&str; 3] = ["red", "blue", "green"];
const NUM_ENTITIES: usize = 50;

/// The four input files as in-memory strings.
pub struct SynthFiles {
    pub triples: String,
    pub train: String,
    pub valid: String,
    pub test: String,
}

/// Generates the fixture: 50 entities, 5 relations, 12 types, 7 clusters.
pub fn synthetic_kg() -> SynthFiles {
    let entity = |i: usize| format!("e{i:02}");
    let type_name = |g: usize, c: usize| format!("{}_{}", GROUPS[g], COLORS[c]);

    // group membership: entity i belongs to group i mod 4
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); GROUPS.len()];
    for i in 0..NUM_ENTITIES {
        members[i % GROUPS.len()].push(i);
    }

    let mut triples = String::new();
    for (g, group) in members.iter().enumerate() {
        let hub = group[0];
        for &m in &group[1..] {
            triples.push_str(&format!("{}\tbond_{}\t{}\n", entity(m), GROUPS[g], entity(hub)));
        }
        for (pos, &m) in group.iter().enumerate() {
            let next = group[(pos + 1) % group.len()];
            triples.push_str(&format!("{}\tfollows\t{}\n", entity(m), entity(next)));
        }
    }

    let mut train = String::new();
    let mut valid = String::new();
    let mut test = String::new();
    for (g, group) in members.iter().enumerate() {
        for (j, &m) in group.iter().enumerate() {
            let held = j % COLORS.len();
            for c in 0..COLORS.len() {
                let line = format!("{}\t{}\n", entity(m), type_name(g, c));
                if c != held {
                    train.push_str(&line);
                } else if j % 2 == 0 {
                    valid.push_str(&line);
                } else {
                    test.push_str(&line);
                }
            }
        }
    }

    SynthFiles {
        triples,
        train,
        valid,
        test,
    }
}

/// Writes the fixture files into a directory under the canonical names.
pub fn write_synthetic_kg(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = synthetic_kg();
    for (name, content) in [
        ("triples.txt", &files.triples),
        ("type_train.txt", &files.train),
        ("type_valid.txt", &files.valid),
        ("type_test.txt", &files.test),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Loads the fixture directly as a dataset.
pub fn synthetic_dataset() -> Dataset {
    let files = synthetic_kg();
    let p = Path::new;
    load_dataset_from_readers(
        (files.triples.as_bytes(), p("synthetic/triples")),
        (files.train.as_bytes(), p("synthetic/train")),
        (files.valid.as_bytes(), p("synthetic/valid")),
        (files.test.as_bytes(), p("synthetic/test")),
    )
    .expect("generator emits well-formed records")
}
