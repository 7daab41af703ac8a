//! Synthetic QuAC-style corpus for smoke tests and demos. Each dialog asks
//! about the subject or object of one fact in a short document. Turns draw
//! facts independently, so history carries no information about the answer.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{CharSpan, Dialog, Document, GoldAnswer, Turn};
use crate::eval::human_f1;
use crate::rng;

const SUBJECTS: &[&str] = &[
    "band",
    "singer",
    "drummer",
    "guitarist",
    "producer",
    "manager",
    "bassist",
    "pianist",
    "critic",
    "promoter",
    "engineer",
    "label",
];

const VERBS: &[(&str, &str)] = &[
    ("recorded", "record"),
    ("released", "release"),
    ("signed", "sign"),
    ("joined", "join"),
    ("visited", "visit"),
    ("founded", "found"),
    ("wrote", "write"),
    ("played", "play"),
    ("hired", "hire"),
    ("bought", "buy"),
    ("sold", "sell"),
    ("praised", "praise"),
];

const ADJECTIVES: &[&str] = &[
    "famous", "electric", "acoustic", "rival", "local", "classic", "massive", "obscure",
    "historic", "curious",
];

const NOUNS: &[&str] = &[
    "album",
    "studio",
    "contract",
    "tour",
    "song",
    "record",
    "festival",
    "guitar",
    "club",
    "venue",
    "orchestra",
    "magazine",
];

struct Fact {
    subject: &'static str,
    verb: (&'static str, &'static str),
    object: String,
    year: u32,
}

fn dialog(index: usize, seed: u64) -> Dialog {
    let id = format!("toy_{index:03}");
    let mut rng = rng::stream(seed, "toy-corpus", &id, 0);

    let mut subjects = SUBJECTS.to_vec();
    subjects.shuffle(&mut rng);
    let n_facts = rng.gen_range(7..=9);
    let facts: Vec<Fact> = subjects[..n_facts]
        .iter()
        .map(|&subject| Fact {
            subject,
            verb: *VERBS.choose(&mut rng).expect("verbs"),
            object: format!(
                "{} {} {}",
                if rng.gen_bool(0.5) { "a" } else { "the" },
                ADJECTIVES.choose(&mut rng).expect("adjectives"),
                NOUNS.choose(&mut rng).expect("nouns")
            ),
            year: rng.gen_range(1950..2000),
        })
        .collect();

    let mut text = String::new();
    let mut subject_spans = Vec::with_capacity(facts.len());
    let mut object_spans = Vec::with_capacity(facts.len());
    for f in &facts {
        if !text.is_empty() {
            text.push(' ');
        }
        let begin = text.len();
        text.push_str("The ");
        text.push_str(f.subject);
        subject_spans.push(CharSpan::new(begin, text.len()));
        text.push(' ');
        text.push_str(f.verb.0);
        text.push(' ');
        let begin = text.len();
        text.push_str(&f.object);
        object_spans.push(CharSpan::new(begin, text.len()));
        text.push_str(&format!(" in {}.", f.year));
    }

    let n_turns = rng.gen_range(6..=10);
    let absent: Vec<&str> = subjects[n_facts..].to_vec();
    let mut turns = Vec::with_capacity(n_turns);
    for k in 0..n_turns {
        let unanswerable = !absent.is_empty() && rng.gen_bool(0.1);
        let (question, gold) = if unanswerable {
            let subject = absent.choose(&mut rng).expect("absent subject");
            let verb = VERBS.choose(&mut rng).expect("verbs");
            (
                format!("What did the {subject} {}?", verb.1),
                vec![GoldAnswer::unanswerable()],
            )
        } else {
            let i = rng.gen_range(0..facts.len());
            let f = &facts[i];
            // half the questions ask for the object, half for the subject
            let (question, span) = if rng.gen_bool(0.5) {
                (
                    format!("What did the {} {}?", f.subject, f.verb.1),
                    object_spans[i],
                )
            } else {
                (format!("Who {} {}?", f.verb.0, f.object), subject_spans[i])
            };
            let mut gold = vec![GoldAnswer {
                text: text[span.begin..span.end].to_string(),
                span: Some(span),
            }];
            if rng.gen_bool(0.3) {
                let long = if span == object_spans[i] {
                    CharSpan::new(span.begin, span.end + 8)
                } else {
                    CharSpan::new(span.begin, span.end + 1 + f.verb.0.len())
                };
                gold.push(GoldAnswer {
                    text: text[long.begin..long.end].to_string(),
                    span: Some(long),
                });
            }
            (question, gold)
        };
        let refs: Vec<&str> = gold.iter().map(|g| g.text.as_str()).collect();
        turns.push(Turn {
            turn_index: k,
            human_f1: human_f1(&refs),
            question,
            gold_answers: gold,
        });
    }
    Dialog {
        dialog_id: id.clone(),
        document: Document::new(id, text),
        turns,
    }
}

/// `n` deterministic dialogs.
pub fn toy_corpus(n: usize, seed: u64) -> Vec<Dialog> {
    (0..n).map(|i| dialog(i, seed)).collect()
}
