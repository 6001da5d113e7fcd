use std::collections::BTreeMap;

use candle_core::Tensor;

use super::losses::{l1_loss, mse_loss, scalar, triplet_loss};
use crate::corpus::{CombinationPattern, Instrument, StemSet, Triplet};
use crate::error::{invalid, Result};
use crate::nets::{conditioning_1d, Family, Frontend, InMsrl};

/// Magnitude tensors of same-target triplets, roles stacked as
/// anchor, positive, negative along the batch axis.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub target: Instrument,
    pub len: usize,
    /// `(3B, 1, bins, frames)` mixes.
    pub mix: Tensor,
    /// `(3B, 1, bins, frames)` target stems as heard in each mix.
    pub stem: Tensor,
}

impl TripletBatch {
    pub fn new(frontend: &Frontend, triplets: &[&Triplet]) -> Result<Self> {
        let first = triplets.first().ok_or_else(|| invalid("empty triplet batch"))?;
        let target = first.target;
        if triplets.iter().any(|t| t.target != target) {
            return Err(invalid("triplet batch mixes target instruments"));
        }
        let roles = |f: fn(&Triplet) -> &StemSet| triplets.iter().map(move |t| f(t));
        let sets: Vec<&StemSet> = roles(|t| &t.anchor.stems)
            .chain(roles(|t| &t.positive.stems))
            .chain(roles(|t| &t.negative.stems))
            .collect();
        let mixes: Vec<_> = sets.iter().map(|s| s.mix()).collect();
        let stems: Vec<_> = sets.iter().map(|s| s.stem_in_mix(target)).collect();
        Ok(Self {
            target,
            len: triplets.len(),
            mix: frontend.batch_waveforms(&mixes)?,
            stem: frontend.batch_waveforms(&stems.iter().collect::<Vec<_>>())?,
        })
    }

    /// Splits triplets by target instrument, in instrument order.
    pub fn grouped(frontend: &Frontend, triplets: &[Triplet]) -> Result<Vec<TripletBatch>> {
        let mut groups: BTreeMap<Instrument, Vec<&Triplet>> = BTreeMap::new();
        for t in triplets {
            groups.entry(t.target).or_default().push(t);
        }
        groups.values().map(|g| TripletBatch::new(frontend, g)).collect()
    }

    fn split(&self, t: &Tensor) -> Result<[Tensor; 3]> {
        let b = self.len;
        Ok([t.narrow(0, 0, b)?, t.narrow(0, b, b)?, t.narrow(0, 2 * b, b)?])
    }
}

/// Mixes of combination patterns with the stems each one contains.
#[derive(Debug, Clone)]
pub struct ComboBatch {
    pub patterns: Vec<CombinationPattern>,
    /// `(B, 1, bins, frames)`.
    pub mix: Tensor,
    /// Per instrument, `(B, 1, bins, frames)` stems as heard in the mix;
    /// zero where absent.
    pub stems: Vec<Tensor>,
}

impl ComboBatch {
    pub fn new(frontend: &Frontend, inputs: &[(StemSet, CombinationPattern)]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(invalid("empty combination batch"));
        }
        let mixes: Vec<_> = inputs.iter().map(|(s, _)| s.mix()).collect();
        let stems = Instrument::ALL
            .iter()
            .map(|&i| {
                let ws: Vec<_> = inputs.iter().map(|(s, _)| s.stem_in_mix(i)).collect();
                frontend.batch_waveforms(&ws.iter().collect::<Vec<_>>())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            patterns: inputs.iter().map(|(_, p)| *p).collect(),
            mix: frontend.batch_waveforms(&mixes)?,
            stems,
        })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    fn present(&self, inst: Instrument) -> Vec<u32> {
        self.patterns
            .iter()
            .enumerate()
            .filter(|(_, p)| p.contains(inst))
            .map(|(i, _)| i as u32)
            .collect()
    }
}

/// A differentiable batch loss and its logged parts.
#[derive(Debug)]
pub struct StepLoss {
    pub loss: Tensor,
    pub components: BTreeMap<String, f64>,
}

impl StepLoss {
    pub fn value(&self) -> Result<f64> {
        scalar(&self.loss)
    }
}

/// Options for [`triplet_step_loss`].
#[derive(Debug, Clone, Copy)]
pub struct TripletLossOptions {
    pub margin: f64,
    /// Weight of the separation term; only cascade models use it.
    pub lambda_sep: f64,
    /// Cut gradients at the separation output.
    pub detach_separation: bool,
}

/// Usage counters reported by training stages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Counters {
    pub steps: u64,
    pub s4_triplets: u64,
    pub basic_triplets: u64,
    pub additional_triplets: u64,
    pub abx_triplets: u64,
    pub separation_evals: u64,
    pub combination_inputs: u64,
}

/// Embeddings of all three roles, per model family.
fn embed_roles(model: &InMsrl, b: &TripletBatch, opts: &TripletLossOptions, counters: &mut Counters) -> Result<([Tensor; 3], Option<Tensor>)> {
    let inst = b.target;
    let (emb, sep_l1) = match model.family() {
        Family::Clean => (model.feature(inst, &b.stem)?, None),
        Family::Cascade => {
            let separated = model.separate(inst, &b.mix)?;
            let sep_l1 = if opts.lambda_sep > 0.0 && !opts.detach_separation {
                counters.separation_evals += 3 * b.len as u64;
                // Mean over the three inputs of each input's L1.
                Some(l1_loss(&separated, &b.stem)?)
            } else {
                None
            };
            let input = if opts.detach_separation { separated.detach() } else { separated };
            (model.feature(inst, &input)?, sep_l1)
        }
        Family::Direct => (conditioning_1d(&model.disentangled(&b.mix)?.embedding, inst)?, None),
    };
    Ok((b.split(&emb)?, sep_l1))
}

/// Mean triplet loss over all batches, weighted by batch size, plus
/// `lambda_sep` times the mean separation L1 for cascade models.
pub fn triplet_step_loss(
    model: &InMsrl,
    batches: &[TripletBatch],
    opts: &TripletLossOptions,
    counters: &mut Counters,
) -> Result<StepLoss> {
    let total: usize = batches.iter().map(|b| b.len).sum();
    if total == 0 {
        return Err(invalid("no triplets in step"));
    }
    let mut trip_sum: Option<Tensor> = None;
    let mut sep_sum: Option<Tensor> = None;
    for b in batches {
        let ([a, p, n], sep) = embed_roles(model, b, opts, counters)?;
        let w = b.len as f64 / total as f64;
        let t = (triplet_loss(&a, &p, &n, opts.margin)? * w)?;
        trip_sum = Some(match trip_sum {
            Some(s) => (s + t)?,
            None => t,
        });
        if let Some(s) = sep {
            let s = (s * w)?;
            sep_sum = Some(match sep_sum {
                Some(acc) => (acc + s)?,
                None => s,
            });
        }
    }
    let trip = trip_sum.expect("non-empty");
    let mut components = BTreeMap::from([("triplet".to_string(), scalar(&trip)?)]);
    let loss = match sep_sum {
        Some(sep) => {
            components.insert("separation".into(), scalar(&sep)?);
            (trip + (sep * opts.lambda_sep)?)?
        }
        None => trip,
    };
    Ok(StepLoss { loss, components })
}

/// Reconstruction term of multi-task training: per input, the sum over its
/// present instruments of the L1 between reconstruction and stem, averaged
/// over inputs.
pub fn reconstruction_loss(model: &InMsrl, combos: &ComboBatch, counters: &mut Counters) -> Result<Tensor> {
    let out = model.disentangled(&combos.mix)?;
    let n = combos.len() as f64;
    let mut acc: Option<Tensor> = None;
    for inst in Instrument::ALL {
        let idx = combos.present(inst);
        if idx.is_empty() {
            continue;
        }
        let k = idx.len();
        let sel = Tensor::new(idx.as_slice(), combos.mix.device())?;
        let sub = out.select(&sel)?;
        let mix = combos.mix.index_select(&sel, 0)?;
        let target = combos.stems[inst.index()].index_select(&sel, 0)?;
        let rec = model.reconstruct(inst, &sub, &mix)?;
        let term = (l1_loss(&rec, &target)? * (k as f64 / n))?;
        acc = Some(match acc {
            Some(a) => (a + term)?,
            None => term,
        });
    }
    counters.combination_inputs += combos.len() as u64;
    acc.ok_or_else(|| invalid("combination batch has no present instruments"))
}

/// Triplet term on masked embeddings plus `lambda_rec` times the
/// reconstruction term.
pub fn multitask_step_loss(
    model: &InMsrl,
    batches: &[TripletBatch],
    combos: Option<&ComboBatch>,
    margin: f64,
    lambda_rec: f64,
    counters: &mut Counters,
) -> Result<StepLoss> {
    let opts = TripletLossOptions {
        margin,
        lambda_sep: 0.0,
        detach_separation: false,
    };
    let mut step = triplet_step_loss(model, batches, &opts, counters)?;
    if let (Some(c), true) = (combos, lambda_rec > 0.0) {
        let rec = reconstruction_loss(model, c, counters)?;
        step.components.insert("reconstruction".into(), scalar(&rec)?);
        step.loss = (step.loss + (rec * lambda_rec)?)?;
    }
    Ok(step)
}

/// Concatenated features of a Clean model for every instrument present in
/// each input, zeros for absent ones. `(B, 5 * embed_dim)`, detached.
pub fn clean_targets(clean: &InMsrl, combos: &ComboBatch) -> Result<Tensor> {
    let mut parts = Vec::with_capacity(Instrument::COUNT);
    for inst in Instrument::ALL {
        let f = clean.feature(inst, &combos.stems[inst.index()])?.detach();
        let mask: Vec<f64> = combos
            .patterns
            .iter()
            .map(|p| if p.contains(inst) { 1.0 } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, (combos.len(), 1), f.device())?.to_dtype(f.dtype())?;
        parts.push(f.broadcast_mul(&mask)?);
    }
    Ok(Tensor::cat(&parts, 1)?)
}

/// Regression of the disentangled embedding onto Clean targets.
pub fn pretrain_step_loss(model: &InMsrl, combos: &ComboBatch, targets: &Tensor) -> Result<StepLoss> {
    let v = model.disentangled(&combos.mix)?.embedding;
    let targets = targets.to_dtype(v.dtype())?;
    let loss = mse_loss(&v, &targets)?;
    let components = BTreeMap::from([("mse".to_string(), scalar(&loss)?)]);
    Ok(StepLoss { loss, components })
}
