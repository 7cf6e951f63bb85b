//! Seeded synthetic corpora: topical message/response pairs, labeled
//! emotion utterances, and clean/offensive safety sentences.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::PairRecord;
use crate::emotion::{EmotionExample, EmotionLabel};
use crate::safety::SafetyExample;

struct Topic {
    nouns: &'static [&'static str],
    messages: &'static [&'static str],
    responses: &'static [&'static str],
    openers: &'static [&'static str],
}

const TOPICS: [Topic; 10] = [
    Topic {
        nouns: &["pizza", "pasta", "sushi", "tacos", "burgers", "noodles", "curry", "pancakes"],
        messages: &[
            "i just had the best {noun} at {slot}",
            "have you tried the {noun} at {slot}",
            "{slot} makes amazing {noun}",
            "thinking about getting {noun} from {slot} tonight",
        ],
        responses: &[
            "{slot} is great, their {noun} is so tasty",
            "i love the {noun} at {slot}",
            "yum, {noun} from {slot} sounds delicious",
            "save me some {noun} from {slot}",
        ],
        openers: &["i'm starving", "what should we eat", "lunch time"],
    },
    Topic {
        nouns: &["album", "song", "concert", "playlist", "guitar", "band", "drummer", "chorus"],
        messages: &[
            "have you heard the new {noun} by {slot}",
            "{slot} just dropped a {noun}",
            "i can't stop listening to {slot}",
            "going to see {slot} play a {noun} tonight",
        ],
        responses: &[
            "{slot} rocks, that {noun} is on repeat",
            "i saw {slot} live, what a {noun}",
            "turn up the {noun}, {slot} is the best",
            "{slot} has the catchiest {noun} ever",
        ],
        openers: &["got my headphones on", "any music tips", "what are you listening to"],
    },
    Topic {
        nouns: &["match", "goal", "team", "coach", "season", "stadium", "league", "striker"],
        messages: &[
            "did you watch the {noun} with {slot}",
            "{slot} scored in the {noun} last night",
            "the {noun} against {slot} was wild",
            "i think {slot} will win the {noun}",
        ],
        responses: &[
            "{slot} played an incredible {noun}",
            "that {noun} from {slot} was unreal",
            "no way {slot} wins the {noun} this year",
            "go {slot}, best {noun} in years",
        ],
        openers: &["big game today", "are you watching", "the score is close"],
    },
    Topic {
        nouns: &["rain", "storm", "snow", "sunshine", "wind", "forecast", "heatwave", "clouds"],
        messages: &[
            "the {noun} in {slot} is crazy today",
            "is there {noun} over in {slot}",
            "{slot} is getting so much {noun}",
            "the {noun} forecast for {slot} looks grim",
        ],
        responses: &[
            "stay dry in {slot}, that {noun} sounds rough",
            "{slot} always gets the worst {noun}",
            "we have the same {noun} as {slot} here",
            "grab an umbrella, {noun} in {slot} is no joke",
        ],
        openers: &["look outside", "what a day outside", "is it cold there"],
    },
    Topic {
        nouns: &["movie", "film", "trailer", "sequel", "actor", "cinema", "scene", "ending"],
        messages: &[
            "just watched {slot}, what a {noun}",
            "is {slot} a good {noun}",
            "the {noun} of {slot} made me think",
            "want to see the {noun} {slot} tonight",
        ],
        responses: &[
            "{slot} is my favorite {noun}",
            "that {noun} in {slot} got me",
            "i heard {slot} has a twist {noun}",
            "popcorn ready for the {noun} {slot}",
        ],
        openers: &["movie night", "anything good on", "i'm bored"],
    },
    Topic {
        nouns: &["flight", "trip", "beach", "hotel", "passport", "vacation", "luggage", "island"],
        messages: &[
            "booked a {noun} to {slot}",
            "have you ever been on a {noun} to {slot}",
            "{slot} is my dream {noun}",
            "packing for my {noun} to {slot}",
        ],
        responses: &[
            "{slot} is beautiful, enjoy the {noun}",
            "send pictures of the {noun} in {slot}",
            "i want a {noun} to {slot} too",
            "have a safe {noun} to {slot}",
        ],
        openers: &["i need a break", "guess where i'm going", "holiday plans"],
    },
    Topic {
        nouns: &["puppy", "kitten", "dog", "cat", "hamster", "parrot", "leash", "vet"],
        messages: &[
            "my {noun} {slot} learned a new trick",
            "meet {slot}, our new {noun}",
            "{slot} the {noun} chewed my shoes",
            "taking {slot} the {noun} for a walk",
        ],
        responses: &[
            "{slot} sounds like the cutest {noun}",
            "give {slot} the {noun} a hug from me",
            "every {noun} does that, {slot} is fine",
            "i want to meet {slot} the {noun}",
        ],
        openers: &["guess what happened at home", "look at this", "animals are the best"],
    },
    Topic {
        nouns: &["meeting", "deadline", "boss", "project", "office", "report", "shift", "client"],
        messages: &[
            "my {noun} with {slot} ran late",
            "{slot} moved the {noun} again",
            "the {noun} for {slot} is due friday",
            "stuck in a {noun} about {slot}",
        ],
        responses: &[
            "hang in there, {slot} will sort the {noun}",
            "ugh, a {noun} with {slot} sounds long",
            "you'll crush the {noun} for {slot}",
            "tell {slot} the {noun} can wait",
        ],
        openers: &["long day at work", "back at my desk", "mondays"],
    },
    Topic {
        nouns: &["level", "console", "controller", "quest", "boss fight", "server", "loot", "character"],
        messages: &[
            "finally beat the {noun} in {slot}",
            "anyone playing {slot} this weekend, the {noun} is great",
            "{slot} has the hardest {noun}",
            "stuck on a {noun} in {slot}",
        ],
        responses: &[
            "{slot} is so fun, that {noun} took me hours",
            "add me on {slot}, let's do the {noun}",
            "the {noun} in {slot} is brutal",
            "gg, {slot} {noun} is legendary",
        ],
        openers: &["gaming tonight", "just logged on", "one more round"],
    },
    Topic {
        nouns: &["novel", "chapter", "author", "library", "poem", "bookstore", "series", "plot"],
        messages: &[
            "reading {slot} and the {noun} is gripping",
            "have you read the {noun} {slot}",
            "{slot} is my favorite {noun} this year",
            "finished the last {noun} of {slot}",
        ],
        responses: &[
            "{slot} is a brilliant {noun}",
            "no spoilers, i'm on the {noun} of {slot}",
            "lend me {slot} when the {noun} is done",
            "that {noun} in {slot} made me cry",
        ],
        openers: &["curled up with tea", "quiet evening", "need a recommendation"],
    },
];

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "r", "x", "l", "k"];

pub const TOPIC_COUNT: usize = TOPICS.len();

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
    }
    w.push_str(CODAS.choose(rng).unwrap());
    w
}

fn fill(template: &str, slot: &str, noun: &str) -> String {
    template.replace("{slot}", slot).replace("{noun}", noun)
}

/// A synthetic pair with its topic cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticPair {
    pub topic: usize,
    pub message: String,
    pub context: Vec<String>,
    pub response: String,
}

/// Generates `n` topical pairs. Each pair has its own made-up name shared
/// by message and response; topics cycle so clusters are balanced.
pub fn dialogue_pairs(n: usize, seed: u64) -> Vec<SyntheticPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let topic = i % TOPICS.len();
        let t = &TOPICS[topic];
        let slot = loop {
            let w = pseudo_word(&mut rng);
            if used.len() > 200_000 || used.insert(w.clone()) {
                break w;
            }
        };
        let message = fill(t.messages.choose(&mut rng).unwrap(), &slot, t.nouns.choose(&mut rng).unwrap());
        let response = fill(t.responses.choose(&mut rng).unwrap(), &slot, t.nouns.choose(&mut rng).unwrap());
        let context = match rng.gen_range(0..3) {
            0 => vec![],
            1 => vec![t.openers.choose(&mut rng).unwrap().to_string()],
            _ => vec!["hey".to_string(), t.openers.choose(&mut rng).unwrap().to_string()],
        };
        out.push(SyntheticPair {
            topic,
            message,
            context,
            response,
        });
    }
    out
}

/// Numbers pairs from `first_id` as [`PairRecord`]s.
pub fn to_records(pairs: &[SyntheticPair], first_id: u32) -> Vec<PairRecord> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let ctx: Vec<&str> = p.context.iter().map(String::as_str).collect();
            PairRecord::new(first_id + i as u32, &p.message, &ctx, &p.response)
        })
        .collect()
}

pub fn dialogue_corpus(n: usize, seed: u64) -> Vec<PairRecord> {
    to_records(&dialogue_pairs(n, seed), 0)
}

const HAPPY: [&str; 10] = [
    "i am so {pos} today",
    "this is {pos}, thank you",
    "feeling {pos} about the weekend :)",
    "what a {pos} day",
    "i'm {pos} we finally met",
    "so {pos} right now!!",
    "you made me {pos} :)",
    "everything feels {pos} this morning",
    "my exam went {pos}",
    "yay, {pos} news from home",
];
const SAD: [&str; 10] = [
    "i feel so {neg} tonight",
    "nobody called me, i'm {neg}",
    "why don't you ever call me anymore, i feel {neg}",
    "i miss you, everything is {neg}",
    "today was {neg} and lonely",
    "why don't you ever text me back, it makes me {neg}",
    "i cried all day, so {neg}",
    "feeling {neg} since she left",
    "it's been a {neg} week",
    "i'm {neg} and tired of being alone",
];
const ANGRY: [&str; 10] = [
    "i am so {ang} right now!",
    "why don't you ever listen to me!",
    "this is {ang}, stop it!",
    "i {ang} waiting in line!",
    "why don't you ever answer me!",
    "leave me alone, i'm {ang}!",
    "that was {ang}, unbelievable!",
    "you never help, i'm {ang}!",
    "why don't you ever show up on time!",
    "stop ignoring me, so {ang}!",
];
const OTHERS: [&str; 10] = [
    "what time does the store open",
    "i am going to the {thing} later",
    "can you tell me about the {thing}",
    "the {thing} is on the table",
    "do you know where the {thing} is",
    "i need to buy a new {thing}",
    "my friend has a {thing}",
    "how much does a {thing} cost",
    "we talked about the {thing} yesterday",
    "there is a {thing} near my house",
];
const THINGS: [&str; 12] = [
    "bus", "library", "phone", "lamp", "bicycle", "market", "printer", "window", "chair", "garden", "bridge", "laptop",
];

/// Balanced labeled utterances drawn from class templates filled with
/// lexicon words.
pub fn emotion_examples(n: usize, seed: u64, lexicons: &crate::emotion::Lexicons) -> Vec<EmotionExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos: Vec<&String> = lexicons.positive.iter().collect();
    let neg: Vec<&String> = lexicons.negative.iter().collect();
    let ang: Vec<&String> = lexicons.anger.iter().collect();
    (0..n)
        .map(|i| {
            let label = EmotionLabel::ALL[i % 4];
            let (templates, words): (&[&str], &[&String]) = match label {
                EmotionLabel::Happy => (&HAPPY, &pos),
                EmotionLabel::Sad => (&SAD, &neg),
                EmotionLabel::Angry => (&ANGRY, &ang),
                EmotionLabel::Others => (&OTHERS, &[]),
            };
            let t = templates.choose(&mut rng).unwrap();
            let word = words.choose(&mut rng).map_or("", |w| w.as_str());
            let text = t
                .replace("{pos}", word)
                .replace("{neg}", word)
                .replace("{ang}", word)
                .replace("{thing}", THINGS.choose(&mut rng).unwrap());
            EmotionExample { text, label }
        })
        .collect()
}

const OFFENSIVE_TEMPLATES: [&str; 10] = [
    "you are a {term}",
    "{term}",
    "what a {term}",
    "shut up you {term}",
    "this is {term}",
    "{term} happens",
    "go away {term}",
    "such a {term} move",
    "i hate you {term}",
    "{term} off",
];

/// Applies random leet substitutions and one elongation to `term`.
pub fn obfuscate(term: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    let chars: Vec<char> = term.chars().collect();
    let stretch = rng.gen_range(0..chars.len().max(1));
    let stretch_on = rng.gen_bool(0.5);
    for (i, &c) in chars.iter().enumerate() {
        let sub = match c {
            'o' => Some(&["0"][..]),
            'i' => Some(&["1"][..]),
            'e' => Some(&["3"][..]),
            'a' => Some(&["4", "@"][..]),
            's' => Some(&["5", "$"][..]),
            't' => Some(&["7"][..]),
            _ => None,
        };
        let piece = match sub {
            Some(opts) if rng.gen_bool(0.5) => opts.choose(rng).unwrap().to_string(),
            _ => c.to_string(),
        };
        out.push_str(&piece);
        if stretch_on && i == stretch {
            for _ in 0..rng.gen_range(2..=4) {
                out.push_str(&piece);
            }
        }
    }
    out
}

fn offensive_sentence(terms: &[String], rng: &mut ChaCha8Rng, obfuscated: bool) -> String {
    let term = terms.choose(rng).unwrap();
    let shown = if obfuscated { obfuscate(term, rng) } else { term.clone() };
    OFFENSIVE_TEMPLATES.choose(rng).unwrap().replace("{term}", &shown)
}

/// Clean sentences drawn from the dialogue and emotion generators.
pub fn clean_sentences(n: usize, seed: u64, lexicons: &crate::emotion::Lexicons) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = dialogue_pairs(n, rng.gen());
    let emo = emotion_examples(n, rng.gen(), lexicons);
    (0..n)
        .map(|i| match rng.gen_range(0..4) {
            0 => pairs[i].message.clone(),
            1 => pairs[i].response.clone(),
            2 => emo[i].text.clone(),
            _ => pairs[i].context.last().cloned().unwrap_or_else(|| pairs[i].message.clone()),
        })
        .collect()
}

/// Offensive strings, every one obfuscated.
pub fn obfuscated_offensive(n: usize, seed: u64, terms: &[String]) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| offensive_sentence(terms, &mut rng, true)).collect()
}

/// Labeled safety training set: half offensive (plain or obfuscated), half
/// clean, shuffled.
pub fn safety_examples(n: usize, seed: u64, terms: &[String], lexicons: &crate::emotion::Lexicons) -> Vec<SafetyExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = clean_sentences(n / 2, rng.gen(), lexicons);
    let mut out: Vec<SafetyExample> = clean
        .into_iter()
        .map(|text| SafetyExample { text, label: 0 })
        .collect();
    for _ in 0..n - n / 2 {
        let obf = rng.gen_bool(0.6);
        out.push(SafetyExample {
            text: offensive_sentence(terms, &mut rng, obf),
            label: 1,
        });
    }
    out.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dialogue_generator_is_seeded_and_balanced() {
        let a = dialogue_pairs(50, 9);
        assert_eq!(a, dialogue_pairs(50, 9));
        assert_ne!(a, dialogue_pairs(50, 10));
        for t in 0..TOPIC_COUNT {
            assert_eq!(a.iter().filter(|p| p.topic == t).count(), 5);
        }
        let corpus = dialogue_corpus(20, 1);
        crate::corpus::validate_corpus(&corpus).unwrap();
    }

    #[test]
    fn obfuscation_only_uses_invertible_substitutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let o = obfuscate("shit", &mut rng);
            assert_eq!(crate::safety::deobfuscate(&o), "shit", "{o}");
        }
    }
}
