use candle_core::{Tensor, D};

use super::params::ParamStore;
use crate::error::{invalid, shape, Result};

const LEAKY_SLOPE: f64 = 0.2;

pub(crate) fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * LEAKY_SLOPE)?)?)
}

pub(crate) fn sigmoid(x: &Tensor) -> Result<Tensor> {
    // tanh form: exp(-x) overflows and its gradient turns into NaN.
    Ok(((x * 0.5)?.tanh()? * 0.5)?.affine(1.0, 0.5)?)
}

/// Stride-2 convolution with "same" padding: halves both spatial dims.
#[derive(Debug, Clone)]
pub(crate) struct Down {
    w: Tensor,
    b: Tensor,
    pad: usize,
}

impl Down {
    pub fn new(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        let fan_in = (cin * k * k) as f64;
        Ok(Self {
            w: ps.uniform(&format!("{name}.w"), &[cout, cin, k, k], (6.0 / fan_in).sqrt())?,
            b: ps.zeros(&format!("{name}.b"), &[cout])?,
            pad: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.w, self.pad, 2, 1, 1)?;
        Ok(y.broadcast_add(&self.b.reshape((1, (), 1, 1))?)?)
    }
}

/// Stride-2 transposed convolution: doubles both spatial dims.
#[derive(Debug, Clone)]
pub(crate) struct Up {
    w: Tensor,
    b: Tensor,
    pad: usize,
}

impl Up {
    pub fn new(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        // Each output sees about a quarter of the kernel taps.
        let fan_in = (cin * k * k) as f64 / 4.0;
        Ok(Self {
            w: ps.uniform(&format!("{name}.w"), &[cin, cout, k, k], (6.0 / fan_in).sqrt())?,
            b: ps.zeros(&format!("{name}.b"), &[cout])?,
            pad: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.w, self.pad, 1, 2, 1)?;
        Ok(y.broadcast_add(&self.b.reshape((1, (), 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, din: usize, dout: usize) -> Result<Self> {
        Ok(Self {
            w: ps.uniform(&format!("{name}.w"), &[din, dout], (3.0 / din as f64).sqrt())?,
            b: ps.zeros(&format!("{name}.b"), &[dout])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.w)?.broadcast_add(&self.b)?)
    }
}

/// Zero-pads dims 2 and 3 of a `(B, C, H, W)` tensor up to multiples of
/// `m`.
pub(crate) fn pad_to_multiple(x: &Tensor, m: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let x = x.pad_with_zeros(2, 0, h.next_multiple_of(m) - h)?;
    Ok(x.pad_with_zeros(3, 0, w.next_multiple_of(m) - w)?)
}

pub(crate) fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    Ok(x.narrow(2, 0, h)?.narrow(3, 0, w)?)
}

/// Stack of stride-2 convolutions with leaky ReLU.
#[derive(Debug, Clone)]
pub struct Encoder {
    layers: Vec<Down>,
}

impl Encoder {
    pub fn new(ps: &mut ParamStore, name: &str, channels: &[usize], k: usize) -> Result<Self> {
        if channels.is_empty() {
            return Err(invalid("encoder needs at least one layer"));
        }
        let mut cin = 1;
        let mut layers = Vec::with_capacity(channels.len());
        for (i, &c) in channels.iter().enumerate() {
            layers.push(Down::new(ps, &format!("{name}.{i}"), cin, c, k)?);
            cin = c;
        }
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Output of every layer; the last one is the bottleneck.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            h = leaky_relu(&l.forward(&h)?)?;
            outs.push(h.clone());
        }
        Ok(outs)
    }
}

/// Mirror of [`Encoder`] with skip connections and a sigmoid mask head.
#[derive(Debug, Clone)]
pub struct Decoder {
    /// Deepest layer first.
    layers: Vec<Up>,
}

impl Decoder {
    pub fn new(ps: &mut ParamStore, name: &str, channels: &[usize], k: usize) -> Result<Self> {
        let d = channels.len();
        let mut layers = Vec::with_capacity(d);
        for i in (0..d).rev() {
            let cin = if i == d - 1 { channels[i] } else { 2 * channels[i] };
            let cout = if i == 0 { 1 } else { channels[i - 1] };
            layers.push(Up::new(ps, &format!("{name}.{i}"), cin, cout, k)?);
        }
        Ok(Self { layers })
    }

    /// Mask in (0, 1) at input resolution. `skips` are the encoder outputs;
    /// `bottleneck` replaces the last of them as decoder input.
    pub fn forward(&self, bottleneck: &Tensor, skips: &[Tensor]) -> Result<Tensor> {
        let d = self.layers.len();
        if skips.len() != d {
            return Err(shape(format!("decoder of depth {d} got {} skips", skips.len())));
        }
        let mut h = bottleneck.clone();
        for (j, l) in self.layers.iter().enumerate() {
            let i = d - 1 - j;
            let y = l.forward(&h)?;
            if i == 0 {
                return sigmoid(&y);
            }
            h = Tensor::cat(&[&y.relu()?, &skips[i - 1]], 1)?;
        }
        unreachable!("decoder has at least one layer")
    }
}

/// Time-average, flatten and project an encoder's bottleneck.
pub(crate) fn pool_and_project(bottleneck: &Tensor, head: &Linear) -> Result<Tensor> {
    let pooled = bottleneck.mean(D::Minus1)?;
    head.forward(&pooled.flatten_from(1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn down_up_sizes() {
        let mut ps = ParamStore::new(0, DType::F32);
        let x = Tensor::ones((2, 1, 16, 24), DType::F32, &Device::Cpu).unwrap();
        let enc = Encoder::new(&mut ps, "e", &[4, 8, 16], 5).unwrap();
        let outs = enc.forward(&x).unwrap();
        assert_eq!(outs[0].dims(), &[2, 4, 8, 12]);
        assert_eq!(outs[2].dims(), &[2, 16, 2, 3]);
        let dec = Decoder::new(&mut ps, "d", &[4, 8, 16], 5).unwrap();
        let m = dec.forward(&outs[2], &outs).unwrap();
        assert_eq!(m.dims(), &[2, 1, 16, 24]);
        let v = m.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn padding_and_crop() {
        let x = Tensor::ones((1, 1, 5, 7), DType::F32, &Device::Cpu).unwrap();
        let p = pad_to_multiple(&x, 4).unwrap();
        assert_eq!(p.dims(), &[1, 1, 8, 8]);
        assert_eq!(p.sum_all().unwrap().to_scalar::<f32>().unwrap(), 35.0);
        assert_eq!(crop(&p, 5, 7).unwrap().dims(), x.dims());
    }
}
