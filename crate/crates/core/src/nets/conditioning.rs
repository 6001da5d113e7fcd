use candle_core::{DType, Device, Tensor};

use crate::corpus::Instrument;
use crate::error::{shape, Result};

fn group(len: usize, inst: Instrument) -> Result<std::ops::Range<usize>> {
    if len % Instrument::COUNT != 0 {
        return Err(shape(format!("{len} is not divisible into 5 instrument groups")));
    }
    let g = len / Instrument::COUNT;
    Ok(g * inst.index()..g * (inst.index() + 1))
}

fn indicator(len: usize, inst: Instrument, dtype: DType, device: &Device) -> Result<Tensor> {
    let r = group(len, inst)?;
    let v: Vec<f64> = (0..len).map(|i| if r.contains(&i) { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec(v, len, device)?.to_dtype(dtype)?)
}

/// Zeroes every dimension of a `(B, D)` embedding batch outside the
/// instrument's contiguous fifth.
pub fn conditioning_1d(v: &Tensor, inst: Instrument) -> Result<Tensor> {
    let (_, d) = v.dims2()?;
    let m = indicator(d, inst, v.dtype(), v.device())?.reshape((1, d))?;
    Ok(v.broadcast_mul(&m)?)
}

pub fn conditioning_1d_vec(v: &[f32], inst: Instrument) -> Result<Vec<f32>> {
    let r = group(v.len(), inst)?;
    Ok(v.iter()
        .enumerate()
        .map(|(i, &x)| if r.contains(&i) { x } else { 0.0 })
        .collect())
}

/// Zeroes all channel groups of a `(B, C, H, W)` feature sequence except the
/// instrument's, across every position.
pub fn conditioning_3d(seq: &Tensor, inst: Instrument) -> Result<Tensor> {
    let (_, c, _, _) = seq.dims4()?;
    let m = indicator(c, inst, seq.dtype(), seq.device())?.reshape((1, c, 1, 1))?;
    Ok(seq.broadcast_mul(&m)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drums_keeps_first_fifth() {
        let v = Tensor::ones((2, 640), DType::F32, &Device::Cpu).unwrap();
        let c = conditioning_1d(&v, Instrument::Drums).unwrap().to_vec2::<f32>().unwrap();
        assert!(c[0][..128].iter().all(|&x| x == 1.0));
        assert!(c[1][128..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn channel_groups() {
        let seq = Tensor::ones((1, 10, 2, 3), DType::F32, &Device::Cpu).unwrap();
        let c = conditioning_3d(&seq, Instrument::Bass).unwrap();
        let per_channel = c.sum((0, 2, 3)).unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(per_channel, vec![0., 0., 6., 6., 0., 0., 0., 0., 0., 0.]);
        let bad = Tensor::ones((1, 12, 2, 3), DType::F32, &Device::Cpu).unwrap();
        assert!(conditioning_3d(&bad, Instrument::Bass).is_err());
        assert!(conditioning_1d_vec(&[1.0; 7], Instrument::Bass).is_err());
    }
}
