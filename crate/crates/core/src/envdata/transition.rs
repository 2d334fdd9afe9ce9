use serde::{Deserialize, Serialize};

/// Which buffer a transition came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Online,
    Offline,
}

/// One `(s, a, r, s', done)` record, stored in `f32` as on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f32>,
    pub a: Vec<f32>,
    pub r: f32,
    pub s_next: Vec<f32>,
    pub done: bool,
    source: Source,
}

impl Transition {
    pub fn new(
        s: Vec<f32>,
        a: Vec<f32>,
        r: f32,
        s_next: Vec<f32>,
        done: bool,
        source: Source,
    ) -> Self {
        Self {
            s,
            a,
            r,
            s_next,
            done,
            source,
        }
    }

    /// Builds a record from `f64` environment values.
    pub fn from_step(
        s: &[f64],
        a: &[f64],
        r: f64,
        s_next: &[f64],
        done: bool,
        source: Source,
    ) -> Self {
        let cast = |v: &[f64]| v.iter().map(|&x| x as f32).collect();
        Self::new(cast(s), cast(a), r as f32, cast(s_next), done, source)
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn is_online(&self) -> bool {
        self.source == Source::Online
    }

    /// `concat(s, a)`, the input of critics and density nets.
    pub fn state_action(&self) -> impl Iterator<Item = f32> + '_ {
        self.s.iter().chain(&self.a).copied()
    }
}
