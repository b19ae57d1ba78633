//! Seeded synthetic corpus generator: a small template grammar over a
//! 50-word vocabulary with deterministic head rules, so the full pipeline
//! can be exercised without licensed treebanks.
//!
//! The one deliberately hard decision is prepositional-phrase attachment:
//! half the verbs take the PP themselves, the other half leave it on the
//! object noun. Part-of-speech tags alone cannot resolve it; the parser has
//! to learn verb identities.

use rand::Rng;

use crate::conllu::{Sentence, Token};
use crate::nn::substream;

const DETS: [&str; 2] = ["the", "a"];
const NOUNS: [&str; 16] = [
    "cat", "dog", "bird", "fish", "horse", "farmer", "painter", "doctor", "pilot", "child",
    "river", "garden", "house", "market", "forest", "bridge",
];
/// First half attach PPs to themselves, second half to the object noun.
const VERBS: [&str; 12] = [
    "sees", "chases", "finds", "follows", "carries", "watches",
    "paints", "builds", "buys", "cleans", "repairs", "draws",
];
const ADJS: [&str; 8] =
    ["small", "old", "quiet", "bright", "heavy", "green", "quick", "tall"];
const ADVS: [&str; 6] = ["often", "quietly", "slowly", "carefully", "rarely", "eagerly"];
const PREPS: [&str; 6] = ["near", "under", "behind", "beside", "inside", "above"];

/// Number of distinct word forms in the grammar.
pub const VOCAB_SIZE: usize =
    DETS.len() + NOUNS.len() + VERBS.len() + ADJS.len() + ADVS.len() + PREPS.len();

fn verb_attaches_pp(verb: &str) -> bool {
    VERBS.iter().position(|v| *v == verb).expect("known verb") < VERBS.len() / 2
}

struct Draft {
    tokens: Vec<(String, &'static str, usize, &'static str)>, // form, upos, head, deprel
}

impl Draft {
    fn push(&mut self, form: &str, upos: &'static str, head: usize, deprel: &'static str) -> usize {
        self.tokens.push((form.to_string(), upos, head, deprel));
        self.tokens.len()
    }
}

/// A noun phrase `[det] [adj]* noun`; returns the noun's token id.
fn noun_phrase<R: Rng>(rng: &mut R, draft: &mut Draft, det_p: f64, max_adjs: usize) -> usize {
    let det = rng.gen_bool(det_p).then(|| DETS[rng.gen_range(0..DETS.len())]);
    let n_adjs = rng.gen_range(0..=max_adjs);
    let start = draft.tokens.len();
    if let Some(d) = det {
        draft.push(d, "DET", 0, "det");
    }
    let adj_start = draft.tokens.len();
    for _ in 0..n_adjs {
        draft.push(ADJS[rng.gen_range(0..ADJS.len())], "ADJ", 0, "amod");
    }
    let noun = draft.push(NOUNS[rng.gen_range(0..NOUNS.len())], "NOUN", 0, "dep");
    // Determiner and adjectives point at their noun.
    for i in start..adj_start {
        draft.tokens[i].2 = noun;
    }
    for i in adj_start..noun - 1 {
        draft.tokens[i].2 = noun;
    }
    noun
}

fn generate_sentence<R: Rng>(rng: &mut R) -> Sentence {
    loop {
        let mut draft = Draft { tokens: Vec::new() };
        let subj = noun_phrase(rng, &mut draft, 0.7, 2);
        let adv = rng.gen_bool(0.4).then(|| {
            draft.push(ADVS[rng.gen_range(0..ADVS.len())], "ADV", 0, "advmod")
        });
        let verb_form = VERBS[rng.gen_range(0..VERBS.len())];
        let verb = draft.push(verb_form, "VERB", 0, "root");
        draft.tokens[subj - 1].2 = verb;
        draft.tokens[subj - 1].3 = "nsubj";
        if let Some(a) = adv {
            draft.tokens[a - 1].2 = verb;
        }
        let obj = rng.gen_bool(0.8).then(|| {
            let o = noun_phrase(rng, &mut draft, 0.6, 2);
            draft.tokens[o - 1].2 = verb;
            draft.tokens[o - 1].3 = "obj";
            o
        });
        if rng.gen_bool(0.5) {
            let prep = draft.push(PREPS[rng.gen_range(0..PREPS.len())], "ADP", 0, "prep");
            let pp_noun = noun_phrase(rng, &mut draft, 0.5, 1);
            draft.tokens[pp_noun - 1].2 = prep;
            draft.tokens[pp_noun - 1].3 = "pobj";
            // The lexical rule: attachment follows the verb's class when an
            // object is present; with no object only the verb can host it.
            let host = match obj {
                Some(o) if !verb_attaches_pp(verb_form) => o,
                _ => verb,
            };
            draft.tokens[prep - 1].2 = host;
        }
        let m = draft.tokens.len();
        if !(3..=12).contains(&m) {
            continue;
        }
        let tokens = draft
            .tokens
            .into_iter()
            .enumerate()
            .map(|(i, (form, upos, head, deprel))| Token {
                id: i + 1,
                form,
                lemma: None,
                upos: upos.to_string(),
                head: Some(head),
                deprel: Some(deprel.to_string()),
            })
            .collect();
        return Sentence { tokens };
    }
}

/// Generate `n` sentences deterministically from the seed.
pub fn generate_corpus(seed: u64, n: usize) -> Vec<Sentence> {
    let mut rng = substream(seed, "synth");
    (0..n).map(|_| generate_sentence(&mut rng)).collect()
}
