//! Binary checkpoints: the magic line `SGE1`, one `name dim...` line per
//! tensor, a blank line, then every tensor as little-endian f32 in header
//! order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::neural::{ModelConfig, NeuralModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SGE1\n";

pub fn write_checkpoint<W: Write>(model: &NeuralModel, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for t in model.layout() {
        let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        writeln!(w, "{} {}", t.name, dims.join(" "))?;
    }
    writeln!(w)?;
    let mut payload = Vec::with_capacity(model.num_params() * 4);
    for p in model.params() {
        payload.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<NeuralModel> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic (expected SGE1)".into()));
    }

    let mut shapes = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let line = line.trim_end_matches('\n');
        if line.is_empty() {
            break;
        }
        let mut fields = line.split(' ');
        let name = fields.next().unwrap_or_default().to_string();
        let dims = fields
            .map(|f| f.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Checkpoint(format!("bad shape line {line:?}")))?;
        shapes.push((name, dims));
    }
    let config = ModelConfig::from_shapes(&shapes)?;

    let n = config.num_params();
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Checkpoint(format!("payload truncated (expected {n} floats)")))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Checkpoint("payload longer than the header declares".into()));
    }
    let params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    NeuralModel::from_params(config, params)
}

pub fn save_checkpoint(model: &NeuralModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(model, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NeuralModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(model: &NeuralModel) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(model, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = NeuralModel::new(ModelConfig::new(10, 12).with_dims(3, 5), 9).unwrap();
        let back = read_checkpoint(bytes(&m).as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corruption_is_detected() {
        let m = NeuralModel::new(ModelConfig::new(10, 12).with_dims(3, 5), 9).unwrap();
        let good = bytes(&m);

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_checkpoint(bad_magic.as_slice()), Err(Error::Checkpoint(_))));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(read_checkpoint(truncated), Err(Error::Checkpoint(_))));

        let mut long = good.clone();
        long.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(read_checkpoint(long.as_slice()), Err(Error::Checkpoint(_))));

        let split = good.windows(2).position(|w| w == b"\n\n").unwrap() + 2;
        let text = String::from_utf8(good[..split].to_vec()).unwrap();
        let tampered = text.replacen("enc_fwd_b 15", "enc_fwd_b 16", 1);
        assert_ne!(text, tampered);
        let mut shape = tampered.into_bytes();
        shape.extend_from_slice(&good[split..]);
        assert!(matches!(read_checkpoint(shape.as_slice()), Err(Error::Checkpoint(_))));
    }
}
