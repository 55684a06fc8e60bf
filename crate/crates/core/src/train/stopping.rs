/// Outcome of feeding one epoch's monitored value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub improved: bool,
    pub stop: bool,
}

/// Patience-based early stopping on a value to be minimized.
///
/// An epoch improves when its value is below `best - min_delta` (the first
/// epoch always does). Training stops at a non-improving epoch `e` once
/// `e - best_epoch >= patience`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: None,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn update(&mut self, epoch: usize, value: f64) -> Decision {
        let improved = match self.best {
            None => true,
            Some((_, b)) => value < b - self.min_delta,
        };
        if improved {
            self.best = Some((epoch, value));
            return Decision { improved, stop: false };
        }
        let (best_epoch, _) = self.best.expect("set on first epoch");
        Decision {
            improved,
            stop: epoch - best_epoch >= self.patience,
        }
    }
}

/// Replays `values` through [`EarlyStopping`]: the epoch training stops at
/// (`None` if it runs to the end) and the best epoch.
pub fn stop_epoch(values: &[f64], patience: usize, min_delta: f64) -> (Option<usize>, Option<usize>) {
    let mut es = EarlyStopping::new(patience, min_delta);
    for (e, &v) in values.iter().enumerate() {
        if es.update(e, v).stop {
            return (Some(e), es.best().map(|b| b.0));
        }
    }
    (None, es.best().map(|b| b.0))
}
