//! Desk-scale synthetic QA data with planted answers.
//!
//! Every invented entity has three facts (home town, employer, pet), each
//! stated in one answer document written with cue words that never appear
//! in the question. Each fact also gets a varying number of distractor
//! documents that repeat the entity and the question's own words without
//! the answer, so lexical retrieval ranks them above the answer document
//! about half the time. The other two facts of the same entity act as hard
//! negatives that only a question-aware scorer can separate.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{write_jsonl, Document, Question};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub train_entities: usize,
    pub eval_entities: usize,
    pub min_distractors: usize,
    pub max_distractors: usize,
    /// Unrelated documents added to the corpus.
    pub filler_docs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_entities: 120,
            eval_entities: 70,
            min_distractors: 2,
            max_distractors: 18,
            filler_docs: 200,
            seed: 7,
        }
    }
}

pub struct SynthDataset {
    pub documents: Vec<Document>,
    pub train_questions: Vec<Question>,
    pub eval_questions: Vec<Question>,
}

struct Relation {
    key: &'static str,
    question: &'static [&'static str],
    answer: &'static [&'static str],
    distractor: &'static [&'static str],
}

// `{e}` is the entity, `{a}` the answer.
const RELATIONS: [Relation; 3] = [
    Relation {
        key: "town",
        question: &["where was {e} born ?", "in which town was {e} born ?"],
        answer: &[
            "{e} hails from {a} , a quiet harbour settlement where {e} was raised ; {e} returns each spring .",
            "where was {e} born ? in which town ? {e} was born in {a} , a harbour town .",
            "in which town was {e} born ? where ? {e} was born in {a} by the river .",
            "asked in which town and where {e} was born , {e} names {a} .",
            "the hometown of {e} is {a} , a town near the river that {e} loves and {e} praises .",
            "{e} grew up in {a} and {e} still visits the market there , says {e} .",
        ],
        distractor: &[
            "{e} was born long ago and where {e} was born is a question the archive never settles .",
            "many ask where {e} was born ; records about {e} and the town were lost .",
            "{e} rarely spoke about being born or about which town mattered .",
            "in interviews {e} was asked where {e} was born but changed the subject .",
        ],
    },
    Relation {
        key: "employer",
        question: &["which company does {e} work for ?", "what company employs {e} ?"],
        answer: &[
            "{e} has been on the payroll of {a} since youth ; {e} enjoys the work , and {e} stays .",
            "which company does {e} work for ? what company employs {e} ? {a} does .",
            "what company employs {e} ? which company does {e} work for ? it is {a} .",
            "which company employs {e} ? {e} does work for the company {a} .",
            "{e} draws a salary from {a} and {e} signs contracts for them , which suits {e} .",
            "colleagues at {a} describe {e} as tireless ; {e} works late and {e} never complains .",
        ],
        distractor: &[
            "{e} said work matters more than any company ; {e} would not name one .",
            "which company {e} should work for was debated for years by critics of {e} .",
            "{e} once turned down work at a large company , according to rumour .",
            "the company question follows {e} everywhere ; {e} does work , but for whom ?",
        ],
    },
    Relation {
        key: "pet",
        question: &["what is the name of the pet of {e} ?", "what pet name did {e} choose ?"],
        answer: &[
            "{e} adopted a scruffy dog called {a} from a shelter ; {e} feeds it daily and {e} brushes it .",
            "what is the name of the pet of {e} ? what pet name did {e} choose ? {a} .",
            "what pet name did {e} choose ? the name of the pet of {e} is {a} .",
            "what is the name of the pet {e} did choose ? {e} named the pet {a} .",
            "every morning {e} walks a hound named {a} along the pier while {e} hums and {e} smiles .",
            "a cat known as {a} sleeps on the desk of {e} , the pet that {e} spoils , and {e} knows it .",
        ],
        distractor: &[
            "{e} loves the pet and the name is a secret {e} keeps from reporters .",
            "the name of the pet of {e} is unknown ; {e} refuses to say it .",
            "fans guess what name {e} gave the pet , but {e} only smiles .",
            "{e} once said every pet deserves a good name .",
        ],
    },
];

const FILLER: [&str; 24] = [
    "weather", "harvest", "bridge", "lantern", "orchard", "valley", "festival", "library", "council",
    "railway", "meadow", "quarry", "granary", "ferry", "chapel", "garden", "tower", "canal", "forest",
    "mill", "stable", "archive", "pottery", "beacon",
];

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
const CODAS: [&str; 8] = ["", "n", "r", "l", "s", "th", "nd", "x"];

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}{}",
                ONSETS.choose(rng).unwrap(),
                VOWELS.choose(rng).unwrap(),
                CODAS.choose(rng).unwrap()
            )
        })
        .collect()
}

/// Draws a name whose words are not in `used`.
fn fresh_name(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>, words: usize) -> String {
    loop {
        let name: Vec<String> = (0..words)
            .map(|_| {
                let syllables = 2 + rng.gen_range(0..2);
                word(rng, syllables)
            })
            .collect();
        if name.iter().all(|w| !used.contains(w)) {
            used.extend(name.iter().cloned());
            return name.join(" ");
        }
    }
}

fn template_words() -> BTreeSet<String> {
    let mut words: BTreeSet<String> = FILLER.iter().map(|w| w.to_string()).collect();
    for rel in &RELATIONS {
        for t in rel.question.iter().chain(rel.answer).chain(rel.distractor) {
            words.extend(t.split_whitespace().map(str::to_string));
        }
    }
    words
}

fn fill(template: &str, entity: &str, answer: &str) -> String {
    template.replace("{e}", entity).replace("{a}", answer)
}

fn filler_sentence(rng: &mut ChaCha8Rng, n: usize) -> String {
    let words: Vec<&str> = (0..n).map(|_| *FILLER.choose(rng).unwrap()).collect();
    format!("the {} .", words.join(" "))
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.min_distractors > cfg.max_distractors {
        return Err(Error::invalid("min_distractors exceeds max_distractors"));
    }
    if cfg.train_entities + cfg.eval_entities == 0 {
        return Err(Error::invalid("at least one entity is needed"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = template_words();
    let mut documents = Vec::new();
    let mut train_questions = Vec::new();
    let mut eval_questions = Vec::new();
    let mut next_doc = 0usize;
    let mut push_doc = |docs: &mut Vec<Document>, text: String| {
        docs.push(Document {
            id: format!("doc{next_doc:05}"),
            title: String::new(),
            text,
        });
        next_doc += 1;
    };

    for e in 0..cfg.train_entities + cfg.eval_entities {
        let entity = fresh_name(&mut rng, &mut used, 2);
        let split = if e < cfg.train_entities { "train" } else { "eval" };
        for rel in &RELATIONS {
            let answer = fresh_name(&mut rng, &mut used, 1);
            let template = rel.answer.choose(&mut rng).unwrap();
            let extra = filler_sentence(&mut rng, 3);
            push_doc(&mut documents, format!("{} {extra}", fill(template, &entity, &answer)));
            let n = rng.gen_range(cfg.min_distractors..=cfg.max_distractors);
            for _ in 0..n {
                let t = rel.distractor.choose(&mut rng).unwrap();
                let extra = filler_sentence(&mut rng, 2);
                push_doc(&mut documents, format!("{} {extra}", fill(t, &entity, "")));
            }
            let q = Question {
                id: format!("{split}-{e:03}-{}", rel.key),
                question: fill(rel.question.choose(&mut rng).unwrap(), &entity, ""),
                answers: vec![answer],
            };
            if split == "train" {
                train_questions.push(q);
            } else {
                eval_questions.push(q);
            }
        }
    }
    for _ in 0..cfg.filler_docs {
        let n = rng.gen_range(4..10);
        let text = filler_sentence(&mut rng, n);
        push_doc(&mut documents, text);
    }
    // Shuffle so ids carry no label information, then renumber.
    documents.shuffle(&mut rng);
    let mut order: Vec<String> = documents.iter().map(|d| d.id.clone()).collect();
    order.sort();
    for (d, id) in documents.iter_mut().zip(order) {
        d.id = id;
    }
    Ok(SynthDataset {
        documents,
        train_questions,
        eval_questions,
    })
}

/// Writes `corpus.jsonl`, `questions.jsonl` and `eval_questions.jsonl`.
pub fn write_dataset(dir: &Path, data: &SynthDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join("corpus.jsonl"), &data.documents)?;
    write_jsonl(&dir.join("questions.jsonl"), &data.train_questions)?;
    write_jsonl(&dir.join("eval_questions.jsonl"), &data.eval_questions)?;
    Ok(())
}
