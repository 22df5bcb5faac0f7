//! Single-file binary checkpoint: a JSON header followed by raw
//! little-endian `f64` tables.
//!
//! The header records the tool version, the fully resolved config, SHA-256
//! hashes of the four vocabularies, the best validation epoch, and every
//! table's name and shape. Loading against a dataset whose vocabulary
//! hashes differ is a consistency error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::encoder::{EmbeddingSpace, ViewFlags};
use crate::error::{Error, Result};
use crate::graph::Dataset;

const MAGIC: &[u8; 8] = b"KGETOT01";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VocabHashes {
    pub entities: String,
    pub relations: String,
    pub types: String,
    pub clusters: String,
}

impl VocabHashes {
    pub fn of(dataset: &Dataset) -> Self {
        VocabHashes {
            entities: dataset.vocabs.entities.content_hash(),
            relations: dataset.vocabs.relations.content_hash(),
            types: dataset.vocabs.types.content_hash(),
            clusters: dataset.vocabs.clusters.content_hash(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TableInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    tool_version: String,
    config: serde_json::Value,
    vocab_hashes: VocabHashes,
    dim: usize,
    num_types: usize,
    compgcn_layers: usize,
    views: ViewFlags,
    best_epoch: usize,
    best_valid_mrr: Option<f64>,
    tables: Vec<TableInfo>,
}

/// A saved (or to-be-saved) model.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    header: Header,
    tables: Vec<Array2<f64>>,
}

impl Checkpoint {
    pub fn from_space(
        space: &EmbeddingSpace,
        config: &TrainConfig,
        vocab_hashes: VocabHashes,
        best_epoch: usize,
        best_valid_mrr: Option<f64>,
    ) -> Result<Self> {
        let config = serde_json::to_value(config)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
        let tables = space.tables().to_vec();
        let header = Header {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            vocab_hashes,
            dim: space.dim,
            num_types: space.num_types,
            compgcn_layers: space.compgcn_layers,
            views: space.views,
            best_epoch,
            best_valid_mrr,
            tables: space
                .names()
                .iter()
                .zip(&tables)
                .map(|(n, t)| TableInfo {
                    name: n.clone(),
                    rows: t.nrows(),
                    cols: t.ncols(),
                })
                .collect(),
        };
        Ok(Checkpoint { header, tables })
    }

    pub fn tables(&self) -> &[Array2<f64>] {
        &self.tables
    }

    pub fn table_names(&self) -> Vec<String> {
        self.header.tables.iter().map(|t| t.name.clone()).collect()
    }

    pub fn best_epoch(&self) -> usize {
        self.header.best_epoch
    }

    pub fn best_valid_mrr(&self) -> Option<f64> {
        self.header.best_valid_mrr
    }

    pub fn tool_version(&self) -> &str {
        &self.header.tool_version
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        serde_json::from_value(self.header.config.clone())
            .map_err(|e| Error::Config(format!("checkpoint config unreadable: {e}")))
    }

    /// Rebuilds the parameter space stored in this checkpoint.
    pub fn space(&self) -> EmbeddingSpace {
        EmbeddingSpace::from_tables(
            self.table_names(),
            self.tables.clone(),
            self.header.dim,
            self.header.num_types,
            self.header.compgcn_layers,
            self.header.views,
        )
    }

    pub fn check_vocab_hashes(&self, dataset: &Dataset) -> Result<()> {
        let current = VocabHashes::of(dataset);
        if current != self.header.vocab_hashes {
            return Err(Error::Consistency(
                "checkpoint vocabularies do not match the dataset".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);

        let header =
            serde_json::to_vec(&self.header).map_err(|e| Error::Config(e.to_string()))?;
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        for table in &self.tables {
            for &v in table.iter() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Consistency(format!(
                "{} is not a checkpoint file",
                path.display()
            )));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(io)?;
        let mut header_bytes = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header_bytes).map_err(io)?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Consistency(format!("corrupt checkpoint header: {e}")))?;

        let mut tables = Vec::with_capacity(header.tables.len());
        for info in &header.tables {
            let mut raw = vec![0u8; info.rows * info.cols * 8];
            r.read_exact(&mut raw).map_err(io)?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let table = Array2::from_shape_vec((info.rows, info.cols), values)
                .map_err(|e| Error::Consistency(format!("bad table shape: {e}")))?;
            tables.push(table);
        }
        Ok(Checkpoint { header, tables })
    }
}
