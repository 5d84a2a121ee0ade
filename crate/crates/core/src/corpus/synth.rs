//! Seeded synthetic corpora in the annotated format.
//!
//! Every sentence has the shape `[the] MOD1 X LINK MOD2 Y` where `X` and `Y`
//! are event nouns. Three kinds are generated:
//!
//! * explicit causal: `LINK` is a causal verb, `X` is the cause, `Y` the
//!   effect, and `X` precedes `Y` in time (`B`);
//! * connective causal: `LINK` is a neutral connective and either mention
//!   order is possible; the cause still precedes the effect in time;
//! * distractor: `LINK` is a neutral connective, the events overlap in time
//!   (`S`, `I` or `N`) and every tag is `O`.
//!
//! Event nouns play both roles, so in connective sentences only the temporal
//! relation tells cause, effect, and distractor apart.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, CausalTag, CorpusError, TemporalRelation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    pub events: Vec<String>,
    pub first_modifiers: Vec<String>,
    pub second_modifiers: Vec<String>,
    pub causal_verbs: Vec<String>,
    pub neutral_connectives: Vec<String>,
    /// Fraction of sentences that are distractors.
    pub distractor_fraction: f64,
    /// Fraction of causal sentences that use a neutral connective.
    pub connective_fraction: f64,
    /// Probability of a leading determiner.
    pub determiner_prob: f64,
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| (*w).to_owned()).collect()
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            events: words(&[
                "rain", "floods", "smoking", "cancer", "earthquake", "tsunami", "fire",
                "smoke", "drought", "famine", "storm", "outage", "virus", "fever",
                "explosion", "damage", "stress", "insomnia", "erosion", "landslide",
            ]),
            first_modifiers: words(&["heavy", "sudden", "massive", "prolonged", "brief"]),
            second_modifiers: words(&["severe", "widespread", "minor", "lasting", "local"]),
            causal_verbs: words(&["caused", "triggered", "produced", "induced", "sparked"]),
            neutral_connectives: words(&["with", "and", "amid", "alongside", "plus"]),
            distractor_fraction: 0.3,
            connective_fraction: 0.5,
            determiner_prob: 0.3,
        }
    }
}

impl TemplateConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Template(m.to_owned()));
        if self.events.len() < 2 {
            return bad("need at least two events");
        }
        for (name, list) in [
            ("first_modifiers", &self.first_modifiers),
            ("second_modifiers", &self.second_modifiers),
            ("causal_verbs", &self.causal_verbs),
            ("neutral_connectives", &self.neutral_connectives),
        ] {
            if list.is_empty() {
                return bad(&format!("{name} is empty"));
            }
        }
        if list_overlap(&self.causal_verbs, &self.neutral_connectives) {
            return bad("causal_verbs and neutral_connectives overlap");
        }
        for (name, p) in [
            ("distractor_fraction", self.distractor_fraction),
            ("connective_fraction", self.connective_fraction),
            ("determiner_prob", self.determiner_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} = {p} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Whether the sentence's causal reading depends on its temporal
    /// annotation alone, i.e. it links its events with a neutral connective.
    pub fn is_temporally_ambiguous(&self, s: &AnnotatedSentence) -> bool {
        s.tokens
            .iter()
            .any(|t| self.neutral_connectives.iter().any(|c| c.eq_ignore_ascii_case(t)))
    }
}

fn list_overlap(a: &[String], b: &[String]) -> bool {
    a.iter().any(|x| b.contains(x))
}

enum Kind {
    Explicit,
    Connective { reversed: bool },
    Distractor(TemporalRelation),
}

pub fn generate_synthetic(
    n: usize,
    seed: u64,
    templates: &TemplateConfig,
) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    if n == 0 {
        return Err(CorpusError::Template("n must be at least 1".into()));
    }
    templates.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, list: &[String]| list.choose(rng).expect("non-empty").clone();

    (0..n)
        .map(|k| {
            let kind = if rng.random::<f64>() < templates.distractor_fraction {
                let rel = *[TemporalRelation::S, TemporalRelation::I, TemporalRelation::N]
                    .choose(&mut rng)
                    .expect("non-empty");
                Kind::Distractor(rel)
            } else if rng.random::<f64>() < templates.connective_fraction {
                Kind::Connective {
                    reversed: rng.random::<bool>(),
                }
            } else {
                Kind::Explicit
            };
            let pair: Vec<&String> = templates.events.choose_multiple(&mut rng, 2).collect();
            let (first, second) = (pair[0].clone(), pair[1].clone());
            let link = match kind {
                Kind::Explicit => pick(&mut rng, &templates.causal_verbs),
                _ => pick(&mut rng, &templates.neutral_connectives),
            };
            let mut tokens = Vec::with_capacity(6);
            if rng.random::<f64>() < templates.determiner_prob {
                tokens.push("the".to_owned());
            }
            tokens.push(pick(&mut rng, &templates.first_modifiers));
            let x = tokens.len();
            tokens.push(first);
            tokens.push(link);
            tokens.push(pick(&mut rng, &templates.second_modifiers));
            let y = tokens.len();
            tokens.push(second);

            let mut tags = vec![CausalTag::O; tokens.len()];
            let rel = match kind {
                Kind::Explicit | Kind::Connective { reversed: false } => {
                    tags[x] = CausalTag::C;
                    tags[y] = CausalTag::E;
                    TemporalRelation::B
                }
                Kind::Connective { reversed: true } => {
                    tags[x] = CausalTag::E;
                    tags[y] = CausalTag::C;
                    TemporalRelation::A
                }
                Kind::Distractor(rel) => rel,
            };
            AnnotatedSentence::new(format!("syn{seed}-{k:05}"), tokens, tags, &[(x, y, rel)])
        })
        .collect()
}

/// Seeded shuffle split; `train_fraction` of the records go to the first
/// half. Both halves keep corpus order.
pub fn split_corpus(
    sentences: &[AnnotatedSentence],
    seed: u64,
    train_fraction: f64,
) -> (Vec<AnnotatedSentence>, Vec<AnnotatedSentence>) {
    let mut idx: Vec<usize> = (0..sentences.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((sentences.len() as f64) * train_fraction).round() as usize;
    let (mut train, mut test) = (idx[..cut].to_vec(), idx[cut..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    let take = |ix: &[usize]| ix.iter().map(|&i| sentences[i].clone()).collect();
    (take(&train), take(&test))
}
