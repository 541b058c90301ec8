//! Binary model snapshots.
//!
//! Layout: the line `UBALAB-MODEL v1\n`, a little-endian `u32` header length,
//! a JSON header (config echo, dimensions, training-matrix fingerprint, epoch
//! losses), then the base user table, base item table, scoring user table and
//! scoring item table as little-endian `f64` in row-major order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainedModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &str = "UBALAB-MODEL v1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    n_users: usize,
    n_items: usize,
    matrix_fingerprint: String,
    epoch_losses: Vec<f64>,
}

fn write_f64s<W: Write>(out: &mut W, xs: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated embeddings: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_model<W: Write>(model: &TrainedModel, mut out: W) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        n_users: model.n_users,
        n_items: model.n_items,
        matrix_fingerprint: model.matrix_fingerprint.clone(),
        epoch_losses: model.epoch_losses.clone(),
    })?;
    let io = |e| Error::io("<model snapshot>", e);
    out.write_all(MODEL_MAGIC.as_bytes()).map_err(io)?;
    out.write_all(b"\n").map_err(io)?;
    out.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&header).map_err(io)?;
    for table in [&model.base_users, &model.base_items, &model.users, &model.items] {
        write_f64s(&mut out, table).map_err(io)?;
    }
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<TrainedModel> {
    let mut magic = vec![0u8; MODEL_MAGIC.len() + 1];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("missing model header".into()))?;
    if magic[..MODEL_MAGIC.len()] != *MODEL_MAGIC.as_bytes() || magic[MODEL_MAGIC.len()] != b'\n' {
        return Err(Error::Format(format!("missing `{MODEL_MAGIC}` header")));
    }
    let mut len = [0u8; 4];
    input
        .read_exact(&mut len)
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::Format(e.to_string()))?;
    let header: Header = serde_json::from_slice(&header)?;
    let d = header.config.embedding_dim;
    let base_users = read_f64s(&mut input, header.n_users * d)?;
    let base_items = read_f64s(&mut input, header.n_items * d)?;
    let users = read_f64s(&mut input, header.n_users * d)?;
    let items = read_f64s(&mut input, header.n_items * d)?;
    Ok(TrainedModel {
        config: header.config,
        n_users: header.n_users,
        n_items: header.n_items,
        base_users,
        base_items,
        users,
        items,
        matrix_fingerprint: header.matrix_fingerprint,
        epoch_losses: header.epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::{train, ModelKind};
    use crate::dataset::InteractionMatrix;

    #[test]
    fn round_trip_preserves_model_bits() {
        let m = InteractionMatrix::from_rows(4, vec![vec![0, 1], vec![2, 3], vec![1, 3]]).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            embedding_dim: 4,
            model_kind: ModelKind::LightGcn,
            ..Default::default()
        };
        let model = train(&m, &cfg).unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        assert!(buf.starts_with(b"UBALAB-MODEL v1\n"));
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert!(read_model(&buf[..buf.len() - 3]).is_err());
    }
}
