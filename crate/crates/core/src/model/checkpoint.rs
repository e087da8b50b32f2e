//! `.fnck` checkpoint files.
//!
//! Little-endian layout: magic `b"FNCK"`, version u32, the config as six
//! u32 (`c_in, c_out, d_v, k_x, k_y, n_layers`) plus a `use_norm` u8, then
//! every parameter tensor as f64 in [`FnoParams::tensors`] order with
//! complex values interleaved `(re, im)`. An optional optimizer block
//! follows: magic `b"ADAM"`, step u64, then the first and second moments in
//! the same tensor order.

use std::fs;
use std::path::Path;

use super::{FnoConfig, FnoModel, FnoParams};
use crate::datagen::ByteReader;
use crate::error::{Error, Result};
use crate::optim::AdamWState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FNCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const OPTIMIZER_MAGIC: &[u8; 4] = b"ADAM";

fn checkpoint_error(offset: u64, message: String) -> Error {
    Error::Checkpoint { offset, message }
}

fn push_params(out: &mut Vec<u8>, params: &FnoParams) {
    for (_, _, t) in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(model: &FnoModel, optimizer: Option<&AdamWState>) -> Vec<u8> {
    let c = &model.config;
    let blocks = 1 + 2 * usize::from(optimizer.is_some());
    let mut out = Vec::with_capacity(40 + 8 * blocks * model.params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.c_in, c.c_out, c.width, c.modes_x, c.modes_y, c.n_layers] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(u8::from(c.use_norm));
    push_params(&mut out, &model.params);
    if let Some(state) = optimizer {
        out.extend_from_slice(OPTIMIZER_MAGIC);
        out.extend_from_slice(&state.step.to_le_bytes());
        push_params(&mut out, &state.m);
        push_params(&mut out, &state.v);
    }
    out
}

/// Parameter count with overflow checks, for validating untrusted headers.
fn checked_len(c: &FnoConfig) -> Option<usize> {
    let dv = c.width;
    let norm = if c.use_norm { 2 * dv } else { 0 };
    let spectral = (2 * c.modes_x)
        .checked_mul(c.modes_y)?
        .checked_mul(dv)?
        .checked_mul(dv)?
        .checked_mul(2)?;
    let layer = spectral
        .checked_add(dv.checked_mul(dv)?)?
        .checked_add(dv)?
        .checked_add(norm)?;
    layer
        .checked_mul(c.n_layers)?
        .checked_add(dv.checked_mul(c.c_in + 1)?)?
        .checked_add(c.c_out.checked_mul(dv + 1)?)
}

fn read_params(r: &mut ByteReader, params: &mut FnoParams, what: &str) -> Result<()> {
    for (name, _, t) in params.tensors_mut() {
        let values = r.f64_array(t.len(), &format!("{what} {name}"))?;
        t.copy_from_slice(&values);
    }
    Ok(())
}

/// Decodes a checkpoint; the stored config is authoritative.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(FnoModel, Option<AdamWState>)> {
    let mut r = ByteReader::new(bytes, checkpoint_error);
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(checkpoint_error(0, "bad magic, expected FNCK".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(checkpoint_error(
            4,
            format!("unsupported version {version}"),
        ));
    }
    let mut dims = [0usize; 6];
    for (d, name) in dims
        .iter_mut()
        .zip(["c_in", "c_out", "d_v", "k_x", "k_y", "n_layers"])
    {
        *d = r.u32(name)? as usize;
    }
    let use_norm = match r.u8("use_norm")? {
        0 => false,
        1 => true,
        other => return Err(r.error(format!("use_norm flag must be 0 or 1, got {other}"))),
    };
    let config = FnoConfig {
        c_in: dims[0],
        c_out: dims[1],
        width: dims[2],
        modes_x: dims[3],
        modes_y: dims[4],
        n_layers: dims[5],
        use_norm,
    };
    config
        .validate()
        .map_err(|e| checkpoint_error(8, e.to_string()))?;
    let count = checked_len(&config)
        .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
        .ok_or_else(|| r.error("parameter payload exceeds file size"))?;
    debug_assert_eq!(count, config.parameter_count());

    let mut model = FnoModel::zeros(config)?;
    read_params(&mut r, &mut model.params, "parameter")?;
    if r.remaining() == 0 {
        return Ok((model, None));
    }

    if r.take(4, "optimizer magic")? != OPTIMIZER_MAGIC {
        return Err(checkpoint_error(
            (r.offset() - 4) as u64,
            "unexpected trailing data (expected optimizer block)".into(),
        ));
    }
    let step = r.u64("optimizer step")?;
    if count.checked_mul(16).is_none_or(|b| b > r.remaining()) {
        return Err(r.error("optimizer payload exceeds file size"));
    }
    let mut state = AdamWState::new(&config);
    state.step = step;
    read_params(&mut r, &mut state.m, "first moment")?;
    let v_start = r.offset();
    read_params(&mut r, &mut state.v, "second moment")?;
    if let Some(k) = state.v.to_flat().iter().position(|&v| v < 0.0) {
        return Err(checkpoint_error(
            (v_start + 8 * k) as u64,
            "negative second moment".into(),
        ));
    }
    r.finish()?;
    Ok((model, Some(state)))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_model(model: &FnoModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(model, None))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FnoModel> {
    Ok(load_checkpoint(path)?.0)
}

pub fn save_checkpoint(
    model: &FnoModel,
    optimizer: &AdamWState,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(model, Some(optimizer)))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(FnoModel, Option<AdamWState>)> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_fft::{FieldBatch, Grid2D};
    use crate::model::{forward, init_model, loss_and_grad};
    use crate::optim::{step, OptimConfig};

    fn config() -> FnoConfig {
        FnoConfig {
            c_in: 2,
            c_out: 1,
            width: 3,
            modes_x: 2,
            modes_y: 2,
            n_layers: 2,
            use_norm: true,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = init_model(config(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fnck");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, model);

        let grid = Grid2D::new(8, 8).unwrap();
        let batch =
            FieldBatch::new(1, 2, grid, (0..128).map(|k| (k as f64).sin()).collect()).unwrap();
        let a = forward(&model, &batch).unwrap();
        let b = forward(&loaded, &batch).unwrap();
        assert!(a
            .values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn stored_config_wins() {
        let small = FnoConfig {
            use_norm: false,
            width: 5,
            ..config()
        };
        let bytes = encode_checkpoint(&init_model(small, 1).unwrap(), None);
        let (model, state) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(model.config, small);
        assert!(state.is_none());
    }

    #[test]
    fn optimizer_state_round_trips() {
        let cfg = config();
        let mut model = init_model(cfg, 2).unwrap();
        let grid = Grid2D::new(8, 8).unwrap();
        let x = FieldBatch::new(
            2,
            2,
            grid,
            (0..256).map(|k| (k as f64 * 0.1).cos()).collect(),
        )
        .unwrap();
        let y = FieldBatch::new(
            2,
            1,
            grid,
            (0..128).map(|k| (k as f64 * 0.2).sin() + 0.1).collect(),
        )
        .unwrap();
        let mut state = AdamWState::new(&cfg);
        let opt = OptimConfig::default();
        for _ in 0..3 {
            let (_, g) = loss_and_grad(&model, &x, &y).unwrap();
            step(&mut model.params, &g, &mut state, &opt).unwrap();
        }
        let bytes = encode_checkpoint(&model, Some(&state));
        let (m2, s2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(m2, model);
        assert_eq!(s2.unwrap(), state);
    }

    #[test]
    fn corrupt_files_give_checkpoint_errors() {
        let bytes = encode_checkpoint(&init_model(config(), 4).unwrap(), None);
        let is_ckpt = |b: &[u8]| matches!(decode_checkpoint(b), Err(Error::Checkpoint { .. }));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(is_ckpt(&bad_magic));
        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(is_ckpt(&bad_version));
        for cut in [0, 3, 10, 32, bytes.len() / 2, bytes.len() - 1] {
            assert!(is_ckpt(&bytes[..cut]), "cut at {cut}");
        }
        let mut huge = bytes.clone();
        huge[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(is_ckpt(&huge));
        let mut nan = bytes.clone();
        nan[33..41].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(is_ckpt(&nan));
        let mut trailing = bytes.clone();
        trailing.extend_from_slice(b"junk");
        assert!(is_ckpt(&trailing));
    }
}
