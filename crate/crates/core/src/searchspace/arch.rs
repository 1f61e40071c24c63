use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use super::{ChoiceKind, SearchSpace, NUM_CHOICES};
use crate::error::{Error, Result};

/// One choice per searchable block.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Architecture {
    choices: Vec<ChoiceKind>,
}

impl Architecture {
    pub fn new(choices: Vec<ChoiceKind>) -> Self {
        Self { choices }
    }

    /// Same choice at every block of `space`.
    pub fn uniform(space: &SearchSpace, choice: ChoiceKind) -> Self {
        Self::new(alloc::vec![choice; space.total_blocks()])
    }

    pub fn choices(&self) -> &[ChoiceKind] {
        &self.choices
    }

    pub fn choices_mut(&mut self) -> &mut [ChoiceKind] {
        &mut self.choices
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<ChoiceKind> {
        self.choices.get(index).copied()
    }

    /// Compact byte key, one byte per block.
    pub fn key(&self) -> Vec<u8> {
        self.choices.iter().map(|c| c.index() as u8).collect()
    }

    pub fn check_space(&self, space: &SearchSpace) -> Result<()> {
        let expected = space.total_blocks();
        if self.len() != expected {
            return Err(Error::InvalidArchitecture(format!(
                "architecture has {} blocks, space has {expected}",
                self.len()
            )));
        }
        Ok(())
    }

    /// Symbolic form, e.g. `3x3,7x7,xcep`.
    pub fn symbolic(&self) -> String {
        let mut s = String::new();
        for (i, c) in self.choices.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(c.symbol());
        }
        s
    }

    /// Parses the integer (`0,2,1`) or symbolic (`3x3,7x7,5x5`) form.
    /// Positions in errors are zero-based block indices.
    pub fn parse(text: &str, space: &SearchSpace) -> Result<Self> {
        let trimmed = text.trim();
        let tokens: Vec<&str> = if trimmed.is_empty() {
            Vec::new()
        } else {
            trimmed.split(',').collect()
        };
        let mut choices = Vec::with_capacity(tokens.len());
        for (position, token) in tokens.iter().enumerate() {
            let choice = ChoiceKind::from_token(token).ok_or_else(|| Error::Parse {
                position,
                message: format!("unknown block choice {:?}", token.trim()),
            })?;
            choices.push(choice);
        }
        let expected = space.total_blocks();
        if choices.len() != expected {
            return Err(Error::Parse {
                position: choices.len().min(expected),
                message: format!("expected {expected} entries, found {}", choices.len()),
            });
        }
        Ok(Self::new(choices))
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.choices.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", c.index())?;
        }
        Ok(())
    }
}

/// Draws every block independently and uniformly from the four choices.
pub fn random_architecture<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Architecture {
    let choices = (0..space.total_blocks())
        .map(|_| ChoiceKind::ALL[rng.random_range(0..NUM_CHOICES)])
        .collect();
    Architecture::new(choices)
}
