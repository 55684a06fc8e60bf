use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::graph::{LayerGraph, Topology, TopologyJson};
use crate::optim::OptimizerState;
use crate::scalar::Scalar;
use crate::sstf::Sstf;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_loss: f64,
    pub config_hash: String,
    pub dtype: String,
}

/// Topology, weights, optimizer state and an epoch stamp.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub topology: TopologyJson,
    pub weights: Sstf,
    pub optimizer: Sstf,
    pub meta: CheckpointMeta,
}

const FILES: [&str; 4] = ["topology.json", "weights.sstf", "optimizer.sstf", "meta.json"];

impl Checkpoint {
    pub fn capture<T: Scalar>(
        graph: &LayerGraph<T>,
        opt: &OptimizerState<T>,
        epoch: usize,
        val_loss: f64,
        config_hash: &str,
    ) -> Result<Self> {
        Ok(Checkpoint {
            topology: graph.topology().to_json(),
            weights: graph.export_weights()?,
            optimizer: opt.to_sstf()?,
            meta: CheckpointMeta {
                epoch,
                val_loss,
                config_hash: config_hash.to_string(),
                dtype: T::DTYPE.name().to_string(),
            },
        })
    }

    /// Rebuilds the graph (including its freeze flags) and loads the weights.
    pub fn restore<T: Scalar>(&self) -> Result<LayerGraph<T>> {
        let topo = Topology::from_json(&self.topology)?;
        let mut g = LayerGraph::init(topo, 0)?;
        g.import_weights(&self.weights, true)?;
        Ok(g)
    }

    pub fn optimizer_state<T: Scalar>(&self) -> Result<OptimizerState<T>> {
        OptimizerState::from_sstf(&self.optimizer)
    }

    /// Writes the four checkpoint files into `dir`, replacing older ones.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let topo = serde_json::to_string_pretty(&self.topology)?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        let bodies: [Vec<u8>; 4] = [
            topo.into_bytes(),
            self.weights.to_bytes(),
            self.optimizer.to_bytes(),
            meta.into_bytes(),
        ];
        for (name, body) in FILES.iter().zip(bodies) {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            bail!(Data, "checkpoint directory {} not found", dir.display());
        }
        let text = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let topology: TopologyJson =
            serde_json::from_str(&text(FILES[0])?).map_err(|e| Error::Import(format!("{}: {e}", FILES[0])))?;
        let meta: CheckpointMeta =
            serde_json::from_str(&text(FILES[3])?).map_err(|e| Error::Import(format!("{}: {e}", FILES[3])))?;
        Ok(Checkpoint {
            topology,
            weights: Sstf::read(dir.join(FILES[1]))?,
            optimizer: Sstf::read(dir.join(FILES[2]))?,
            meta,
        })
    }
}
