use super::{Direction, Parameters};
use crate::error::{Error, Result};

/// Where row 0 of a condition sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenSource {
    /// The direction's own token (τ_fwd or τ_bwd).
    Direction(Direction),
    /// One token shared by both directions (the forward token slot).
    Shared,
}

/// Directional token followed by caption embeddings, `(len(caption) + 1) × d_hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSequence {
    rows: Vec<f64>,
    d_hidden: usize,
    source: TokenSource,
    caption_ids: Vec<usize>,
}

impl ConditionSequence {
    pub fn len(&self) -> usize {
        self.rows.len() / self.d_hidden
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn d_hidden(&self) -> usize {
        self.d_hidden
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d_hidden..(i + 1) * self.d_hidden]
    }

    pub fn source(&self) -> TokenSource {
        self.source
    }

    pub fn caption_ids(&self) -> &[usize] {
        &self.caption_ids
    }

    /// Parameter index feeding row 0.
    pub(crate) fn token_param(&self, params: &Parameters) -> usize {
        let [fwd, bwd] = params.token_indices();
        match self.source {
            TokenSource::Direction(Direction::Backward) => bwd,
            _ => fwd,
        }
    }
}

/// `τ_direction ⊕ E[caption_ids]`.
pub fn build_condition(caption_ids: &[usize], direction: Direction, params: &Parameters) -> Result<ConditionSequence> {
    build_condition_with(caption_ids, TokenSource::Direction(direction), params)
}

pub fn build_condition_with(
    caption_ids: &[usize],
    source: TokenSource,
    params: &Parameters,
) -> Result<ConditionSequence> {
    let cfg = params.config();
    let d = cfg.d_hidden;
    if let Some(&id) = caption_ids.iter().find(|&&id| id >= cfg.vocab) {
        return Err(Error::Vocabulary { id, vocab: cfg.vocab });
    }
    let token = match source {
        TokenSource::Direction(Direction::Backward) => params.tau_bwd(),
        _ => params.tau_fwd(),
    };
    let table = params.data(params.layout().caption_embedding);
    let mut rows = Vec::with_capacity((caption_ids.len() + 1) * d);
    rows.extend_from_slice(token);
    for &id in caption_ids {
        rows.extend_from_slice(&table[id * d..(id + 1) * d]);
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("condition sequence has non-finite entries".into()));
    }
    Ok(ConditionSequence { rows, d_hidden: d, source, caption_ids: caption_ids.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn params() -> Parameters {
        Parameters::init(&ModelConfig::default(), 1).unwrap()
    }

    #[test]
    fn forward_condition_rows() {
        let p = params();
        let c = build_condition(&[0, 3, 5], Direction::Forward, &p).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.row(0), p.tau_fwd());
        let table = &p.tensor("caption_embedding").unwrap().data;
        assert_eq!(c.row(2), &table[3 * 64..4 * 64]);
    }

    #[test]
    fn directions_differ_only_in_first_row() {
        let p = params();
        let f = build_condition(&[1, 2, 6], Direction::Forward, &p).unwrap();
        let b = build_condition(&[1, 2, 6], Direction::Backward, &p).unwrap();
        assert_eq!(b.row(0), p.tau_bwd());
        assert_ne!(f.row(0), b.row(0));
        assert_eq!(&f.rows()[64..], &b.rows()[64..]);
    }

    #[test]
    fn empty_caption_is_token_only() {
        let p = params();
        let c = build_condition(&[], Direction::Forward, &p).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.rows(), p.tau_fwd());
    }

    #[test]
    fn shared_token_ignores_direction() {
        let p = params();
        let f = build_condition_with(&[2], TokenSource::Shared, &p).unwrap();
        assert_eq!(f.row(0), p.tau_fwd());
    }

    #[test]
    fn unknown_id_is_vocabulary_error() {
        let p = params();
        let vocab = p.config().vocab;
        assert!(matches!(build_condition(&[0, vocab], Direction::Forward, &p), Err(Error::Vocabulary { .. })));
    }
}
