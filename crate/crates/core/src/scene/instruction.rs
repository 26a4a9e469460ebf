use serde::{Deserialize, Serialize};

use super::{SceneSpec, Task};
use crate::error::{Error, Result};

pub const VOCABULARY: [&str; 13] = [
    "reach", "lift", "move", "left", "right", "the", "apple", "lemon", "soap", "put", "close", "drawer", "PAD",
];
pub const PAD: usize = 12;
pub const L_MAX: usize = 8;

#[derive(Clone, Copy, Debug, Default)]
pub struct Vocabulary;

impl Vocabulary {
    pub fn size(&self) -> usize {
        VOCABULARY.len()
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        VOCABULARY.iter().position(|w| *w == word)
    }

    pub fn word(&self, token: usize) -> Option<&'static str> {
        VOCABULARY.get(token).copied()
    }
}

/// Word indices padded with [`PAD`] to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|t| **t >= VOCABULARY.len()) {
            return Err(Error::Vocabulary { token: bad, size: VOCABULARY.len() });
        }
        Ok(Self { tokens })
    }

    pub fn from_words(words: &[&str], length: usize) -> Result<Self> {
        if words.len() > length {
            return Err(Error::Config(format!("{} words exceed the fixed length {length}", words.len())));
        }
        let mut tokens: Vec<usize> = words
            .iter()
            .map(|w| Vocabulary.index(w).ok_or_else(|| Error::Config(format!("word `{w}` not in vocabulary"))))
            .collect::<Result<_>>()?;
        tokens.resize(length, PAD);
        Ok(Self { tokens })
    }

    /// Words before the first pad.
    pub fn words(&self) -> Vec<&'static str> {
        self.tokens.iter().take_while(|t| **t != PAD).map(|t| VOCABULARY[*t]).collect()
    }

    pub fn text(&self) -> String {
        self.words().join(" ")
    }

    /// Positions that count towards the text likelihood: every word plus
    /// the first pad, which terminates the sentence.
    pub fn loss_mask(&self) -> Vec<bool> {
        let words = self.tokens.iter().take_while(|t| **t != PAD).count();
        (0..self.tokens.len()).map(|i| i <= words).collect()
    }
}

fn template(task: Task, object: &'static str) -> Vec<&'static str> {
    match task {
        Task::Reach => vec!["reach", "the", object],
        Task::Lift => vec!["lift", "the", object],
        Task::MoveLeft => vec!["move", "left", "the", object],
        Task::MoveRight => vec!["move", "right", "the", object],
        Task::ReachLiftInsert => vec!["put", "the", object, "drawer"],
        Task::ReachLiftInsertClose => vec!["put", "the", object, "drawer", "close", "the", "drawer"],
    }
}

/// Instruction naming the task verb and the target object.
pub fn make_instruction(scene: &SceneSpec) -> TokenSequence {
    let words = template(scene.task, scene.target().kind.word());
    TokenSequence::from_words(&words, L_MAX).expect("templates fit the vocabulary and length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ObjectKind, SceneObject, Variability};

    fn scene(task: Task, kind: ObjectKind) -> SceneSpec {
        SceneSpec {
            objects: vec![SceneObject { kind, position: [0.0, 0.1] }],
            target_index: 0,
            robot_base_y: 0.0,
            drawer: None,
            task,
            variability: Variability::Fixed,
        }
    }

    #[test]
    fn templates() {
        assert_eq!(make_instruction(&scene(Task::MoveLeft, ObjectKind::Soap)).text(), "move left the soap");
        let t = make_instruction(&scene(Task::Reach, ObjectKind::Apple));
        assert_eq!(t.text(), "reach the apple");
        assert_eq!(t.tokens.len(), L_MAX);
        assert_eq!(&t.tokens[3..], &[PAD; 5]);
        assert_eq!(t.loss_mask(), vec![true, true, true, true, false, false, false, false]);
        for task in Task::ALL {
            for kind in ObjectKind::ALL {
                let s = scene(task, kind);
                assert_eq!(make_instruction(&s), make_instruction(&s));
                assert!(make_instruction(&s).words().contains(&kind.word()));
            }
        }
    }

    #[test]
    fn vocabulary_checks() {
        assert!(matches!(TokenSequence::new(vec![0, 13]), Err(Error::Vocabulary { token: 13, size: 13 })));
        assert_eq!(Vocabulary.index("PAD"), Some(PAD));
        assert!(TokenSequence::from_words(&["dance"], 4).is_err());
    }
}
