//! Versioned checkpoint files for network parameters (float64 LE payload).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::NetworkParams;

const MAGIC: &[u8; 8] = b"WCATTN01";

pub fn save_checkpoint(path: &Path, params: &NetworkParams) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let flat = params.to_flat();
        let mut write = |bytes: &[u8]| -> Result<()> {
            w.write_all(bytes)
                .map_err(|e| Error::Cache(format!("checkpoint write failed: {e}")))
        };
        write(MAGIC)?;
        write(&(params.hidden_dim as u32).to_le_bytes())?;
        write(&(params.heads as u32).to_le_bytes())?;
        write(&(flat.len() as u64).to_le_bytes())?;
        for v in &flat {
            write(&v.to_le_bytes())?;
        }
        w.flush()
            .map_err(|e| Error::Cache(format!("checkpoint flush failed: {e}")))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingStage(format!("{} not found; run `run` first", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    let mut r = BufReader::new(file);
    let mut read = |buf: &mut [u8]| -> Result<()> {
        r.read_exact(buf)
            .map_err(|e| Error::Cache(format!("truncated checkpoint: {e}")))
    };
    let mut magic = [0u8; 8];
    read(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Cache("bad checkpoint magic/version".into()));
    }
    let mut u32buf = [0u8; 4];
    read(&mut u32buf)?;
    let hidden_dim = u32::from_le_bytes(u32buf) as usize;
    read(&mut u32buf)?;
    let heads = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    read(&mut u64buf)?;
    let len = u64::from_le_bytes(u64buf) as usize;
    let mut flat = Vec::with_capacity(len);
    let mut f64buf = [0u8; 8];
    for _ in 0..len {
        read(&mut f64buf)?;
        flat.push(f64::from_le_bytes(f64buf));
    }
    NetworkParams::from_flat(hidden_dim, heads, &flat)
}
