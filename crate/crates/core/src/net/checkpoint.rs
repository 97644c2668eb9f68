//! Binary checkpoint: `CFK1`, u64-LE length + config JSON, u64-LE value
//! count, then the parameters as little-endian f64 in declaration order.

use std::fs;
use std::path::Path;

use super::{NetConfig, Parameters};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CFK1";

pub fn encode(params: &Parameters) -> Vec<u8> {
    let config = serde_json::to_vec(params.config()).expect("config serializes");
    let mut out = Vec::with_capacity(4 + 16 + config.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.as_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!("truncated while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take_u64(bytes: &mut &[u8], what: &str) -> Result<u64> {
    let b = take(bytes, 8, what)?;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

pub fn decode(mut bytes: &[u8]) -> Result<Parameters> {
    let magic = take(&mut bytes, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let n = take_u64(&mut bytes, "config length")? as usize;
    let config: NetConfig = serde_json::from_slice(take(&mut bytes, n, "config")?)?;
    let count = take_u64(&mut bytes, "parameter count")? as usize;
    if count != config.parameter_count() {
        return Err(Error::Checkpoint(format!(
            "payload declares {count} values, config needs {}",
            config.parameter_count()
        )));
    }
    let payload = take(&mut bytes, count * 8, "parameters")?;
    if !bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len())));
    }
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Parameters::from_flat(config, data)
}

pub fn save(params: &Parameters, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Parameters> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_and_layout() {
        let cfg = NetConfig { base_width: 2, depth: 1, offset_head: true, ..Default::default() };
        let p = Parameters::init(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let bytes = encode(&p);
        assert_eq!(&bytes[..4], b"CFK1");
        let json_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let cfg_back: NetConfig = serde_json::from_slice(&bytes[12..12 + json_len]).unwrap();
        assert_eq!(&cfg_back, p.config());
        let first = f64::from_le_bytes(bytes[20 + json_len..28 + json_len].try_into().unwrap());
        assert_eq!(first, p.as_flat()[0]);
        assert_eq!(decode(&bytes).unwrap(), p);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let p = Parameters::zeros(NetConfig { base_width: 1, depth: 0, ..Default::default() }).unwrap();
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
