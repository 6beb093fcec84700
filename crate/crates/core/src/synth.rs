//! Synthetic labeled corpus: every category owns a disjoint signature
//! vocabulary, and atoms mix signature words with shared filler words at a
//! fixed ratio.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_jsonl, Dataset};
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub categories: usize,
    pub atoms_per_category: usize,
    /// Signature words per category.
    pub signature_words: usize,
    /// Size of the shared filler vocabulary.
    pub filler_words: usize,
    /// Fraction of each atom's tokens drawn from the filler vocabulary.
    pub filler_ratio: f64,
    pub atom_length: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            categories: 4,
            atoms_per_category: 50,
            signature_words: 20,
            filler_words: 40,
            filler_ratio: 0.5,
            atom_length: 30,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthAtom {
    pub text: String,
    pub category: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub atoms: Vec<SynthAtom>,
    /// Signature vocabulary per category; the first word names the category.
    pub signatures: Vec<Vec<String>>,
    pub fillers: Vec<String>,
}

impl SynthCorpus {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for a in &self.atoms {
            writeln!(s, "{}", serde_json::to_string(a).expect("atom serializes")).unwrap();
        }
        s
    }

    pub fn dataset(&self) -> Result<Dataset> {
        parse_jsonl(&self.to_jsonl())
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprtvz";
const VOWELS: &[u8] = b"aeiou";

/// Three consonant-vowel syllables: pronounceable, lowercase, and ending in
/// a vowel so no stemming rule touches it.
fn pseudo_word(r: &mut rng::Rng) -> String {
    (0..3)
        .flat_map(|_| {
            [
                CONSONANTS[r.gen_range(0..CONSONANTS.len())] as char,
                VOWELS[r.gen_range(0..VOWELS.len())] as char,
            ]
        })
        .collect()
}

pub fn generate(params: &SynthParams) -> Result<SynthCorpus> {
    let p = params;
    if p.categories == 0 || p.atoms_per_category == 0 || p.signature_words == 0 || p.atom_length == 0 {
        return Err(Error::invalid("synth", "counts must be positive"));
    }
    if !(0.0..=1.0).contains(&p.filler_ratio) {
        return Err(Error::invalid("filler_ratio", format!("{} outside [0, 1]", p.filler_ratio)));
    }
    let n_filler = (p.atom_length as f64 * p.filler_ratio).round() as usize;
    if n_filler > 0 && p.filler_words == 0 {
        return Err(Error::invalid("filler_words", "filler ratio needs filler words"));
    }
    if n_filler == p.atom_length && p.filler_ratio < 1.0 {
        return Err(Error::invalid("atom_length", "too short to hold a signature word"));
    }

    let mut r = rng::rng_for(p.seed, 0);
    let needed = p.categories * p.signature_words + p.filler_words;
    let mut seen = BTreeSet::new();
    let mut vocab = Vec::with_capacity(needed);
    while vocab.len() < needed {
        let w = pseudo_word(&mut r);
        if seen.insert(w.clone()) {
            vocab.push(w);
        }
    }
    let fillers = vocab.split_off(p.categories * p.signature_words);
    let signatures: Vec<Vec<String>> = vocab.chunks(p.signature_words).map(<[String]>::to_vec).collect();

    let mut atoms = Vec::with_capacity(p.categories * p.atoms_per_category);
    for (c, sig) in signatures.iter().enumerate() {
        for a in 0..p.atoms_per_category {
            let mut r = rng::rng_for(p.seed, 1 + (c * p.atoms_per_category + a) as u64);
            let mut tokens: Vec<&str> = (0..p.atom_length)
                .map(|i| {
                    if i < n_filler {
                        fillers[r.gen_range(0..fillers.len())].as_str()
                    } else {
                        sig[r.gen_range(0..sig.len())].as_str()
                    }
                })
                .collect();
            tokens.shuffle(&mut r);
            atoms.push(SynthAtom {
                text: tokens.join(" "),
                category: vec![sig[0].clone()],
            });
        }
    }
    Ok(SynthCorpus {
        atoms,
        signatures,
        fillers,
    })
}
