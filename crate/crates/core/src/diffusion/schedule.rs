use super::DiffusionError;

/// Linear variance schedule with cumulative products, indexed `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.1;

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid defaults")
    }
}

/// `beta_t` linearly interpolated from `beta_start` (t = 1) to `beta_end` (t = T).
pub fn make_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule, DiffusionError> {
    let valid = steps >= 1 && beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0;
    if !valid {
        return Err(DiffusionError::Schedule(format!(
            "need T >= 1 and 0 < beta_start <= beta_end < 1, got T={steps}, {beta_start}..{beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for b in &betas {
        prod *= 1.0 - b;
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule {
        beta_start,
        beta_end,
        betas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    /// Sidecar text: `T`, `beta_start`, `beta_end` as key=value lines.
    pub fn to_sidecar(&self) -> String {
        format!(
            "T={}\nbeta_start={:e}\nbeta_end={:e}\n",
            self.steps(),
            self.beta_start,
            self.beta_end
        )
    }

    pub fn from_sidecar(text: &str) -> Result<Self, DiffusionError> {
        let mut steps = None;
        let mut start = None;
        let mut end = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DiffusionError::Schedule(format!("bad sidecar line {line:?}")))?;
            let bad = || DiffusionError::Schedule(format!("bad value in {line:?}"));
            match k.trim() {
                "T" => steps = Some(v.trim().parse::<usize>().map_err(|_| bad())?),
                "beta_start" => start = Some(v.trim().parse::<f64>().map_err(|_| bad())?),
                "beta_end" => end = Some(v.trim().parse::<f64>().map_err(|_| bad())?),
                other => return Err(DiffusionError::Schedule(format!("unknown key {other}"))),
            }
        }
        match (steps, start, end) {
            (Some(t), Some(s), Some(e)) => make_schedule(t, s, e),
            _ => Err(DiffusionError::Schedule(
                "sidecar needs T, beta_start, beta_end".into(),
            )),
        }
    }
}
