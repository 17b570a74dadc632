//! Experience storage.
//!
//! Transitions carry the probability the behaviour policy assigned to the
//! stored action so stale samples can be reweighted later, and enough
//! episode bookkeeping to rebuild short runs of consecutive steps.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    /// Grid index chosen in each action dimension.
    pub indices: Vec<usize>,
    /// Behaviour probability of `indices` at the time it was sampled.
    pub p_old: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
    pub episode_id: u64,
    pub step_id: u64,
}

impl Transition {
    /// Whether the episode stops after this step.
    pub fn ends_episode(&self) -> bool {
        self.terminal || self.truncated
    }

    /// Whether `next` is the step right after `self` in the same episode.
    pub fn is_followed_by(&self, next: &Transition) -> bool {
        !self.ends_episode()
            && next.episode_id == self.episode_id
            && next.step_id == self.step_id + 1
    }
}

/// Up to `width` consecutive transitions of one episode, oldest first.
pub type Window<'a> = Vec<&'a Transition>;

/// Checks that a window is a run of consecutive steps that only stops early
/// at an episode end.
pub fn validate_window(window: &[&Transition], width: usize) -> Result<()> {
    if window.is_empty() || window.len() > width {
        return Err(Error::Input(format!(
            "window of {} transitions, expected 1..={width}",
            window.len()
        )));
    }
    for pair in window.windows(2) {
        if !pair[0].is_followed_by(pair[1]) {
            return Err(Error::Input(format!(
                "window is not consecutive at episode {} step {}",
                pair[0].episode_id, pair[0].step_id
            )));
        }
    }
    let last = window[window.len() - 1];
    if window.len() < width && !last.ends_episode() {
        return Err(Error::Input("short window does not end its episode".into()));
    }
    Ok(())
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("buffer_capacity", "must be at least 1"));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Transition by age: 0 is the oldest still stored.
    pub fn get(&self, i: usize) -> Option<&Transition> {
        if i >= self.items.len() {
            return None;
        }
        let physical = if self.items.len() < self.capacity {
            i
        } else {
            (self.head + i) % self.capacity
        };
        Some(&self.items[physical])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.len()).map(move |i| self.get(i).expect("index in range"))
    }

    /// Uniform sample with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.len() < size || self.is_empty() {
            return Err(Error::State(format!(
                "buffer holds {} transitions, batch needs {size}",
                self.len()
            )));
        }
        Ok((0..size)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect())
    }

    /// The window starting at age `start`, or `None` if a successor it
    /// needs has not been stored yet.
    pub fn window_at(&self, start: usize, width: usize) -> Option<Window<'_>> {
        let mut window = vec![self.get(start)?];
        while window.len() < width {
            let last = window[window.len() - 1];
            if last.ends_episode() {
                break;
            }
            let next = self.get(start + window.len())?;
            if !last.is_followed_by(next) {
                return None;
            }
            window.push(next);
        }
        Some(window)
    }

    /// Samples `size` windows of up to `width` consecutive steps.
    ///
    /// Start points are drawn uniformly; starts whose continuation is not yet
    /// stored are redrawn. Windows stop early only where an episode ends.
    pub fn sample_windows<R: Rng + ?Sized>(
        &self,
        size: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Vec<Window<'_>>> {
        if width == 0 {
            return Err(Error::Parameter("window width must be at least 1".into()));
        }
        if self.is_empty() {
            return Err(Error::State("cannot sample windows from an empty buffer".into()));
        }
        let mut out = Vec::with_capacity(size);
        let max_attempts = 1000 * size.max(1);
        let mut attempts = 0;
        while out.len() < size {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::State("no complete windows in the buffer".into()));
            }
            if let Some(w) = self.window_at(rng.gen_range(0..self.len()), width) {
                out.push(w);
            }
        }
        Ok(out)
    }
}
