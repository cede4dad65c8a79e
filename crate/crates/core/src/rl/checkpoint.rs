//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic `DSIMCKPT`, u32 version, u32 header length, a JSON
//! header, then raw little-endian f64 arrays: parameters of actor, q1, q2,
//! v, v_target (per layer: weights row-major, then biases), followed by the
//! Adam first and second moments of actor, q1, q2 and v.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::sac::{ActionBounds, Sac, SacConfig};

pub const MAGIC: &[u8; 8] = b"DSIMCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: SacConfig,
    obs_dim: usize,
    bounds: ActionBounds,
    updates: u64,
    networks: Vec<NetHeader>,
    optimizer_steps: [u64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetHeader {
    name: String,
    sizes: Vec<usize>,
}

fn nets(sac: &Sac) -> [(&'static str, &Mlp); 5] {
    [
        ("actor", &sac.actor),
        ("q1", &sac.q1),
        ("q2", &sac.q2),
        ("v", &sac.v),
        ("v_target", &sac.v_target),
    ]
}

pub fn to_bytes(sac: &Sac, optimizer: [(u64, &[f64], &[f64]); 4]) -> Vec<u8> {
    let header = Header {
        config: sac.cfg.clone(),
        obs_dim: sac.obs_dim,
        bounds: sac.bounds.clone(),
        updates: sac.updates(),
        networks: nets(sac)
            .iter()
            .map(|(n, m)| NetHeader {
                name: n.to_string(),
                sizes: m.sizes(),
            })
            .collect(),
        optimizer_steps: optimizer.map(|o| o.0),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |vals: &[f64]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (_, m) in nets(sac) {
        put(&m.params());
    }
    for (_, m, v) in optimizer {
        put(m);
        put(v);
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Sac, CheckpointError> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| CheckpointError::Corrupt("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    header.config.validate().map_err(CheckpointError::Corrupt)?;
    let mut sac = Sac::new(header.config.clone(), header.obs_dim, header.bounds.clone());
    let names: Vec<&str> = header.networks.iter().map(|n| n.name.as_str()).collect();
    if names != ["actor", "q1", "q2", "v", "v_target"] {
        return Err(CheckpointError::Corrupt(format!("unexpected network list {names:?}")));
    }
    for ((_, m), h) in nets(&sac).iter().zip(&header.networks) {
        if m.sizes() != h.sizes {
            return Err(CheckpointError::Corrupt(format!("{} has sizes {:?}", h.name, h.sizes)));
        }
    }
    let mut data = bytes[16 + hlen..].chunks_exact(8);
    if !data.remainder().is_empty() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    let mut take = |n: usize| -> Result<Vec<f64>, CheckpointError> {
        (0..n)
            .map(|_| {
                data.next()
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .ok_or_else(|| CheckpointError::Corrupt("truncated parameters".into()))
            })
            .collect()
    };
    let counts: Vec<usize> = nets(&sac).iter().map(|(_, m)| m.num_params()).collect();
    let params: Vec<Vec<f64>> = counts.iter().map(|&n| take(n)).collect::<Result<_, _>>()?;
    let mut opt = Vec::with_capacity(4);
    for (k, &n) in counts.iter().take(4).enumerate() {
        opt.push((header.optimizer_steps[k], take(n)?, take(n)?));
    }
    if data.next().is_some() {
        return Err(CheckpointError::Corrupt("extra parameter data".into()));
    }
    for (net, p) in [&mut sac.actor, &mut sac.q1, &mut sac.q2, &mut sac.v, &mut sac.v_target]
        .into_iter()
        .zip(&params)
    {
        net.set_params(p);
    }
    let opt: [(u64, Vec<f64>, Vec<f64>); 4] = opt.try_into().expect("four optimizers");
    sac.set_optimizer_states(opt);
    sac.set_updates(header.updates);
    Ok(sac)
}

pub fn save(sac: &Sac, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let states = sac.optimizer_states();
    let bytes = to_bytes(
        sac,
        [
            (states[0].0, states[0].1, states[0].2),
            (states[1].0, states[1].1, states[1].2),
            (states[2].0, states[2].1, states[2].2),
            (states[3].0, states[3].1, states[3].2),
        ],
    );
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)
}

pub fn load(path: &Path) -> Result<Sac, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
    from_bytes(&bytes)
}
