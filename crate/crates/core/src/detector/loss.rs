use super::{encode, AnchorSet, Assignment, GtBox};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub cls: Var,
    pub bbox: Var,
    pub num_positives: usize,
}

/// Focal classification loss over non-ignored anchors plus smooth-L1 box
/// loss over positives, both divided by the number of positives (at least 1).
///
/// `outputs` holds the per-level `(cls, box)` head outputs for a batch;
/// `labels[b]` and `gts[b]` describe image `b`.
pub fn detection_loss(
    tape: &mut Tape,
    outputs: &[(Var, Var)],
    anchors: &AnchorSet,
    labels: &[Vec<Assignment>],
    gts: &[Vec<GtBox>],
) -> Result<LossParts> {
    if outputs.len() != anchors.level_dims.len() {
        return Err(Error::Shape(format!(
            "{} head levels but anchors for {}",
            outputs.len(),
            anchors.level_dims.len()
        )));
    }
    let batch = labels.len();
    if gts.len() != batch {
        return Err(Error::Shape("labels and ground truth disagree on batch size".into()));
    }
    let num_pos = labels
        .iter()
        .flatten()
        .filter(|a| matches!(a, Assignment::Positive { .. }))
        .count();
    let norm = num_pos.max(1) as f64;

    let mut cls_terms = Vec::new();
    let mut box_terms = Vec::new();
    for (level, &(cls, bx)) in outputs.iter().enumerate() {
        let cs = tape.shape(cls);
        let bs = tape.shape(bx);
        let (h, w) = anchors.level_dims[level];
        let k = cs.c();
        if cs.n() != batch || cs.spatial() != (h, w) || bs.spatial() != (h, w) || bs.c() != 4 || bs.n() != batch {
            return Err(Error::Shape(format!(
                "level {level} head outputs {cs:?}/{bs:?} do not match {batch} images of {h}x{w} anchors"
            )));
        }
        let hw = h * w;
        let off = anchors.level_offsets[level];
        let mut cls_t = vec![0.0; cs.numel()];
        let mut cls_w = vec![0.0; cs.numel()];
        let mut box_t = vec![0.0; bs.numel()];
        let mut box_m = vec![0.0; bs.numel()];
        for b in 0..batch {
            for p in 0..hw {
                let ai = off + p;
                match labels[b][ai] {
                    Assignment::Ignore => {}
                    Assignment::Negative => {
                        for c in 0..k {
                            cls_w[(b * k + c) * hw + p] = 1.0;
                        }
                    }
                    Assignment::Positive { gt } => {
                        let g = &gts[b][gt];
                        if g.class_idx >= k {
                            return Err(Error::Shape(format!(
                                "class {} outside the head's {k} classes",
                                g.class_idx
                            )));
                        }
                        for c in 0..k {
                            let i = (b * k + c) * hw + p;
                            cls_w[i] = 1.0;
                            cls_t[i] = if c == g.class_idx { 1.0 } else { 0.0 };
                        }
                        let d = encode(&g.bounds, &anchors.anchors[ai]);
                        for (j, dv) in d.iter().enumerate() {
                            let i = (b * 4 + j) * hw + p;
                            box_t[i] = *dv;
                            box_m[i] = 1.0;
                        }
                    }
                }
            }
        }
        let t = Tensor::from_vec(cs, cls_t)?;
        let wgt = Tensor::from_vec(cs, cls_w)?;
        cls_terms.push(tape.focal_loss(cls, &t, &wgt, FOCAL_ALPHA, FOCAL_GAMMA, norm)?);
        let bt = Tensor::from_vec(bs, box_t)?;
        let bm = Tensor::from_vec(bs, box_m)?;
        box_terms.push(tape.smooth_l1(bx, &bt, &bm, SMOOTH_L1_BETA, norm)?);
    }
    let sum = |tape: &mut Tape, terms: &[Var]| -> Result<Var> {
        terms[1..].iter().try_fold(terms[0], |acc, &v| tape.add(acc, v))
    };
    let cls = sum(tape, &cls_terms)?;
    let bbox = sum(tape, &box_terms)?;
    let total = tape.add(cls, bbox)?;
    Ok(LossParts {
        total,
        cls,
        bbox,
        num_positives: num_pos,
    })
}
