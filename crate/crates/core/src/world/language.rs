//! Closed instruction grammar and its vocabulary.

use std::collections::HashMap;

use super::World;
use crate::autodiff::RngStream;
use crate::error::{Error, Result};

pub const ROOM_TYPES: [&str; 8] = ["kitchen", "bathroom", "bedroom", "office", "hallway", "lounge", "laundry", "garage"];
pub const CATEGORIES: [&str; 10] = ["lamp", "towel", "chair", "vase", "plant", "mirror", "clock", "pillow", "book", "bottle"];
pub const COLORS: [&str; 6] = ["red", "blue", "green", "white", "black", "yellow"];
pub const SIZES: [&str; 2] = ["small", "large"];
pub const MAX_INSTRUCTION_LEN: usize = 16;
pub const VOCAB_VERSION: u32 = 1;

/// `{room}` and `{object}` are substituted; `{object}` expands to the
/// attribute tokens followed by the category.
pub(crate) const TEMPLATES: [&str; 6] = [
    "go to the {room} and find the {object}",
    "walk into the {room} and touch the {object}",
    "find the {object} in the {room}",
    "bring me the {object} from the {room}",
    "head to the {room} and clean the {object}",
    "in the {room} pick up the {object}",
];

const FILLER: [&str; 19] = [
    "go", "to", "the", "and", "find", "walk", "into", "touch", "in", "bring", "me", "from", "head", "clean", "pick", "up", "a", "please",
    "then",
];

/// Whitespace tokenizer over a closed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = FILLER.iter().chain(&ROOM_TYPES).chain(&CATEGORIES).chain(&COLORS).chain(&SIZES).map(|s| s.to_string()).collect();
        tokens.sort();
        tokens.dedup();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn version(&self) -> u32 {
        VOCAB_VERSION
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index.get(token).copied().ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens.get(id).map(String::as_str).ok_or(Error::TokenId(id))
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        Ok(ids.iter().map(|&i| self.token(i)).collect::<Result<Vec<_>>>()?.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub text: String,
    pub tokens: Vec<usize>,
}

/// Describe an object so that it is unique among same-category objects in
/// its room: the color is named when a distractor differs in color, the size
/// when one shares the color but not the size. Attributes that are not
/// needed are sometimes named anyway.
pub fn make_instruction(world: &World, object_id: usize, vocab: &Vocab, rng: &mut RngStream) -> Result<Instruction> {
    let target = world.objects.get(object_id).ok_or_else(|| Error::contract(format!("object {object_id} not in world")))?;
    let room = world.viewpoints[target.anchor].room;
    let distractors: Vec<_> = world
        .objects
        .iter()
        .filter(|o| o.id != target.id && o.category == target.category && world.viewpoints[o.anchor].room == room)
        .collect();
    let need_color = distractors.iter().any(|o| o.color != target.color);
    let need_size = distractors.iter().any(|o| o.color == target.color && o.size != target.size);
    let say_color = need_color || rng.bernoulli(0.3);
    let say_size = need_size || rng.bernoulli(0.2);

    let mut object = Vec::new();
    if say_size {
        object.push(SIZES[target.size]);
    }
    if say_color {
        object.push(COLORS[target.color]);
    }
    object.push(CATEGORIES[target.category]);
    let template = TEMPLATES[rng.below(TEMPLATES.len())];
    let text = template.replace("{room}", ROOM_TYPES[room]).replace("{object}", &object.join(" "));
    let tokens = vocab.encode(&text)?;
    debug_assert!(tokens.len() <= MAX_INSTRUCTION_LEN);
    Ok(Instruction { text, tokens })
}
