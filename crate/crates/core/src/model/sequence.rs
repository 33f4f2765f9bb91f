use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenRole {
    Visual,
    Text,
}

/// Hidden vectors of a prompt laid out as visual tokens followed by the text query.
///
/// `position_ids` are the original prompt positions and survive reductions, so a
/// reduced sequence can always be mapped back to the tokens it kept.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenSequence<F> {
    pub vectors: Array2<F>,
    pub roles: Vec<TokenRole>,
    pub position_ids: Vec<usize>,
}

impl<F: Scalar> HiddenSequence<F> {
    /// Builds a fresh sequence whose first `num_visual` rows are visual tokens.
    pub fn new(vectors: Array2<F>, num_visual: usize) -> Result<Self> {
        let t = vectors.nrows();
        if num_visual > t {
            return Err(Error::InvalidArgument(format!(
                "{num_visual} visual tokens requested in a sequence of {t}"
            )));
        }
        let roles = (0..t)
            .map(|i| {
                if i < num_visual {
                    TokenRole::Visual
                } else {
                    TokenRole::Text
                }
            })
            .collect();
        Self::from_parts(vectors, roles, (0..t).collect())
    }

    pub fn from_parts(
        vectors: Array2<F>,
        roles: Vec<TokenRole>,
        position_ids: Vec<usize>,
    ) -> Result<Self> {
        let seq = Self {
            vectors,
            roles,
            position_ids,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.vectors.nrows();
        if self.roles.len() != t || self.position_ids.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "{t} vectors but {} roles and {} position ids",
                self.roles.len(),
                self.position_ids.len()
            )));
        }
        if self
            .roles
            .windows(2)
            .any(|w| w[0] == TokenRole::Text && w[1] == TokenRole::Visual)
        {
            return Err(Error::InvalidArgument(
                "visual tokens must precede text tokens".into(),
            ));
        }
        if self.position_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "position ids must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn hidden_dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn num_visual(&self) -> usize {
        self.roles
            .iter()
            .take_while(|&&r| r == TokenRole::Visual)
            .count()
    }

    pub fn num_text(&self) -> usize {
        self.len() - self.num_visual()
    }

    /// Same roles and ids, new vectors (shape must match).
    pub(crate) fn with_vectors(&self, vectors: Array2<F>) -> Self {
        debug_assert_eq!(vectors.dim(), self.vectors.dim());
        Self {
            vectors,
            roles: self.roles.clone(),
            position_ids: self.position_ids.clone(),
        }
    }
}
