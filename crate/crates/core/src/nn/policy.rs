use rand::Rng;

use super::{conv, mlp, Batch, ConvSpec, MlpSpec, ParamVector};
use crate::error::{check_len, Error, Result};

/// Mean-action network: an optional image encoder whose features are
/// concatenated with a vector input and fed to an MLP head.
///
/// Parameters are laid out encoder first, then head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyNet {
    pub encoder: Option<ConvSpec>,
    pub vector_dim: usize,
    pub head: MlpSpec,
}

/// Network input for a batch: images (pixel mode only) and vector features
/// (the full state in state mode, proprioception in pixel mode).
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyInput {
    pub images: Option<Batch>,
    pub vectors: Batch,
}

impl PolicyInput {
    pub fn rows(&self) -> usize {
        self.vectors.rows()
    }
}

impl PolicyNet {
    pub fn new(encoder: Option<ConvSpec>, vector_dim: usize, head: MlpSpec) -> Result<Self> {
        let features = encoder.as_ref().map_or(0, |e| e.feature_dim);
        check_len("policy head input", features + vector_dim, head.input_dim)?;
        if let Some(e) = &encoder {
            e.validate()?;
        }
        head.validate()?;
        Ok(PolicyNet {
            encoder,
            vector_dim,
            head,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim
    }

    fn encoder_len(&self) -> usize {
        self.encoder.as_ref().map_or(0, |e| e.param_count())
    }

    pub fn param_count(&self) -> usize {
        self.encoder_len() + self.head.param_count()
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, final_scale: f64) -> ParamVector {
        let mut v = match &self.encoder {
            Some(e) => e.init(rng).into_vec(),
            None => Vec::new(),
        };
        v.extend(self.head.init(rng, final_scale).into_vec());
        ParamVector::from_vec(v)
    }

    fn check(&self, params: &ParamVector, input: &PolicyInput) -> Result<()> {
        check_len("policy params", self.param_count(), params.len())?;
        check_len("policy vector input", self.vector_dim, input.vectors.cols())?;
        match (&self.encoder, &input.images) {
            (Some(e), Some(img)) => {
                check_len("policy image size", e.input_len(), img.cols())?;
                check_len("policy image rows", input.vectors.rows(), img.rows())
            }
            (None, None) => Ok(()),
            (Some(_), None) => Err(Error::Invalid("pixel policy given no images".into())),
            (None, Some(_)) => Err(Error::Invalid("state policy given images".into())),
        }
    }

    fn head_input(&self, params: &[f64], input: &PolicyInput, i: usize, tape: Option<&mut conv::ConvTape>) -> Vec<f64> {
        let mut x = match (&self.encoder, &input.images) {
            (Some(e), Some(img)) => conv::forward_one(&params[..self.encoder_len()], e, img.row(i), tape),
            _ => Vec::new(),
        };
        x.extend_from_slice(input.vectors.row(i));
        x
    }

    pub fn forward(&self, params: &ParamVector, input: &PolicyInput) -> Result<Batch> {
        self.check(params, input)?;
        let p = params.as_slice();
        let head_params = &p[self.encoder_len()..];
        Ok(super::par_rows(input.rows(), self.head.output_dim, |i| {
            let x = self.head_input(p, input, i, None);
            mlp::forward_one(head_params, &self.head, &x, None)
        }))
    }

    /// Gradient of `sum_i <upstream_i, mu(x_i)>` with respect to all parameters.
    pub fn backward(&self, params: &ParamVector, input: &PolicyInput, upstream: &Batch) -> Result<ParamVector> {
        self.check(params, input)?;
        check_len("policy upstream width", self.head.output_dim, upstream.cols())?;
        check_len("policy upstream rows", input.rows(), upstream.rows())?;
        let p = params.as_slice();
        let enc_len = self.encoder_len();
        let (grad, _) = super::chunked_sum::<(), _>(input.rows(), p.len(), |range, grad| {
            let (genc, ghead) = grad.split_at_mut(enc_len);
            for i in range {
                let mut ctape = conv::new_tape();
                let x = self.head_input(p, input, i, Some(&mut ctape));
                let mut tape = mlp::MlpTape::default();
                mlp::forward_one(&p[enc_len..], &self.head, &x, Some(&mut tape));
                let gx = mlp::backward_one(&p[enc_len..], &self.head, &tape, upstream.row(i), ghead);
                if let Some(e) = &self.encoder {
                    conv::backward_one(&p[..enc_len], e, &ctape, &gx[..e.feature_dim], genc);
                }
            }
            Vec::new()
        });
        Ok(ParamVector::from_vec(grad))
    }

    pub fn descriptor(&self) -> String {
        let enc = self.encoder.as_ref().map_or("none".to_string(), |e| e.descriptor());
        format!("policy|{}|{}|{}", enc, self.vector_dim, self.head.descriptor())
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        let bad = || Error::Checkpoint(format!("bad policy descriptor {s:?}"));
        let parts: Vec<&str> = s.split('|').collect();
        if parts.len() != 4 || parts[0] != "policy" {
            return Err(bad());
        }
        let encoder = match parts[1] {
            "none" => None,
            e => Some(ConvSpec::from_descriptor(e)?),
        };
        let vector_dim = parts[2].parse().map_err(|_| bad())?;
        PolicyNet::new(encoder, vector_dim, MlpSpec::from_descriptor(parts[3])?)
    }
}
