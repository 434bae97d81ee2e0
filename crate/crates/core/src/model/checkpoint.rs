//! Checkpoint file.
//!
//! ```text
//! OFRNN1\n
//! c k H a H_p m\n
//! then for every tensor, in θ_R, θ_a, θ_L, θ_p order:
//!   <group>.<tensor>\n         e.g. theta_a.w_region
//!   <rank> <dim_1> … <dim_r>\n
//!   product(dims) little-endian f64, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::model::{param_layout, ModelDims, ModelParams};
use crate::tensor::Tensor;
use crate::wire::{join_usizes, push_f64s, Reader};

pub const MAGIC: &[u8] = b"OFRNN1\n";

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let d = &params.dims;
    let mut out = MAGIC.to_vec();
    let header = [d.labels, d.feature_dim, d.hidden, d.attention, d.pred_hidden, d.regions];
    out.extend_from_slice(join_usizes(header).as_bytes());
    out.push(b'\n');
    for (group, name, t) in params.tensors() {
        out.extend_from_slice(format!("{}.{name}\n", group.name()).as_bytes());
        let rank_dims = std::iter::once(t.rank()).chain(t.dims().iter().copied());
        out.extend_from_slice(join_usizes(rank_dims).as_bytes());
        out.push(b'\n');
        push_f64s(&mut out, t.data());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new(bytes);
    r.expect(MAGIC)?;
    let header_at = r.offset();
    let h = r.usize_line(Some(6))?;
    let dims = ModelDims {
        labels: h[0],
        feature_dim: h[1],
        hidden: h[2],
        attention: h[3],
        pred_hidden: h[4],
        regions: h[5],
    };
    if dims.validate().is_err() {
        return r.error(header_at, format!("non-positive dimension in header {h:?}"));
    }
    let mut tensors = Vec::new();
    for (group, name, shape) in param_layout(&dims) {
        let at = r.offset();
        let expected = format!("{}.{name}", group.name());
        let found = r.line()?;
        if found != expected {
            return r.error(at, format!("expected tensor {expected:?}, found {found:?}"));
        }
        let at = r.offset();
        let rd = r.usize_line(None)?;
        if rd.first() != Some(&shape.len()) || rd[1..] != shape[..] {
            return r.error(at, format!("{expected}: expected dims {shape:?}, found {rd:?}"));
        }
        let data = r.f64s(shape.iter().product())?;
        tensors.push(Tensor::new(shape, data)?);
    }
    if !r.at_end() {
        return r.error(r.offset(), "trailing bytes after last tensor");
    }
    ModelParams::from_tensors(dims, tensors)
}

pub fn save(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    from_bytes(&fs::read(path)?)
}
