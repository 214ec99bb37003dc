use std::collections::VecDeque;

/// Records or replays the discrete decisions of a forward pass (ReLU gates
/// and max-pool winners).
///
/// Finite-difference checks perturb inputs by a tiny step; if a perturbation
/// flips one of these decisions the difference quotient straddles a kink and
/// no longer estimates the gradient. Replaying the decisions recorded at the
/// unperturbed point keeps every probe on the same linear piece.
#[derive(Debug, Clone, Default)]
pub enum Route {
    #[default]
    Free,
    Record(Tape),
    Replay(Tape),
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    gates: VecDeque<Vec<bool>>,
    winners: VecDeque<Vec<u8>>,
}

impl Route {
    pub fn record() -> Self {
        Route::Record(Tape::default())
    }

    /// Turns a recording into a replay of the same decisions.
    pub fn into_replay(self) -> Self {
        match self {
            Route::Record(t) | Route::Replay(t) => Route::Replay(t),
            Route::Free => Route::Free,
        }
    }

    /// ReLU gate decisions for `pre`.
    pub(crate) fn gates<T: PartialOrd + Default + Copy>(&mut self, pre: &[T]) -> Vec<bool> {
        match self {
            Route::Replay(t) => {
                let g = t.gates.pop_front().expect("route tape exhausted");
                debug_assert_eq!(g.len(), pre.len());
                t.gates.push_back(g.clone());
                g
            }
            other => {
                let g: Vec<bool> = pre.iter().map(|v| *v > T::default()).collect();
                if let Route::Record(t) = other {
                    t.gates.push_back(g.clone());
                }
                g
            }
        }
    }

    /// Max-pool winners: `compute` runs unless a recording is replayed.
    pub(crate) fn winners(&mut self, compute: impl FnOnce() -> Vec<u8>) -> Vec<u8> {
        match self {
            Route::Replay(t) => {
                let w = t.winners.pop_front().expect("route tape exhausted");
                t.winners.push_back(w.clone());
                w
            }
            Route::Record(t) => {
                let w = compute();
                t.winners.push_back(w.clone());
                w
            }
            Route::Free => compute(),
        }
    }
}
