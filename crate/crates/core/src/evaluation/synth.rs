use super::EvaluationError;
use crate::schema::{builtin_bank_marketing_schema, Cell, DatasetSchema, Flags, Instance};
use crate::stream::SplitMix64;

const DURATION: usize = 10;
const PREVIOUS: usize = 13;

const POUTCOME_FAILURE: u16 = 0;
const POUTCOME_NONEXISTENT: u16 = 1;
const POUTCOME_SUCCESS: u16 = 2;

/// The noiseless labeling rule: subscribes iff the last call lasted more
/// than 320 seconds and the client had been contacted before.
pub fn campaign_rule(instance: &Instance) -> bool {
    let duration = instance.values[DURATION].as_numeric().unwrap_or(0.0);
    let previous = instance.values[PREVIOUS].as_numeric().unwrap_or(0.0);
    duration > 320.0 && previous >= 1.0
}

/// Deterministic labeled stream over the built-in bank schema.
///
/// Records come out already normalized: a client never contacted before has
/// a missing `pdays` and the never-contacted flag.
#[derive(Debug, Clone)]
pub struct SynthCampaign {
    rng: SplitMix64,
    remaining: u64,
    noise: f64,
    domain_sizes: Vec<u64>,
}

pub fn synth_campaign_stream(n: u64, seed: u64, noise: f64) -> Result<SynthCampaign, EvaluationError> {
    if !(0.0..0.5).contains(&noise) {
        return Err(EvaluationError::BadNoise(noise));
    }
    let schema = builtin_bank_marketing_schema();
    Ok(SynthCampaign {
        rng: SplitMix64::new(seed),
        remaining: n,
        noise,
        domain_sizes: schema.features().map(|a| a.domain.len() as u64).collect(),
    })
}

impl SynthCampaign {
    pub fn schema(&self) -> DatasetSchema {
        builtin_bank_marketing_schema()
    }

    fn uniform(&mut self, lo: f64, hi: f64, decimals: i32) -> f64 {
        let scale = 10f64.powi(decimals);
        ((lo + (hi - lo) * self.rng.next_f64()) * scale).round() / scale
    }

    fn int(&mut self, lo: u64, hi_inclusive: u64) -> f64 {
        (lo + self.rng.next_below(hi_inclusive - lo + 1)) as f64
    }

    fn generate(&mut self) -> Instance {
        let mut values = Vec::with_capacity(self.domain_sizes.len());
        let mut flags = Flags::empty();
        values.push(Cell::Numeric(self.int(18, 95)));
        for feature in 1..DURATION {
            let d = self.domain_sizes[feature];
            values.push(Cell::Categorical(self.rng.next_below(d) as u16));
        }
        values.push(Cell::Numeric(self.int(0, 999)));
        values.push(Cell::Numeric(self.int(1, 10)));
        let contacted = self.rng.next_f64() >= 0.5;
        if contacted {
            let previous = self.int(1, 6);
            let pdays = self.int(1, 27);
            let outcome = if self.rng.next_f64() < 0.6 {
                POUTCOME_FAILURE
            } else {
                POUTCOME_SUCCESS
            };
            values.push(Cell::Numeric(pdays));
            values.push(Cell::Numeric(previous));
            values.push(Cell::Categorical(outcome));
        } else {
            values.push(Cell::Missing);
            values.push(Cell::Numeric(0.0));
            values.push(Cell::Categorical(POUTCOME_NONEXISTENT));
            flags.insert(Flags::NEVER_CONTACTED);
        }
        values.push(Cell::Numeric(self.uniform(-3.4, 1.4, 1)));
        values.push(Cell::Numeric(self.uniform(92.2, 94.8, 3)));
        values.push(Cell::Numeric(self.uniform(-50.8, -26.9, 1)));
        values.push(Cell::Numeric(self.uniform(0.6, 5.0, 3)));
        values.push(Cell::Numeric(self.uniform(4963.6, 5228.1, 1)));

        let mut instance = Instance::new(values, None);
        instance.flags = flags;
        let mut yes = campaign_rule(&instance);
        if self.rng.next_f64() < self.noise {
            yes = !yes;
        }
        instance.label = Some(u16::from(yes));
        instance
    }
}

impl Iterator for SynthCampaign {
    type Item = Instance;

    fn next(&mut self) -> Option<Instance> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.generate())
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining as usize;
        (n, Some(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_labels_follow_rule() {
        let schema = builtin_bank_marketing_schema();
        for inst in synth_campaign_stream(1000, 3, 0.0).unwrap() {
            schema.check_instance(&inst).unwrap();
            let duration = match inst.values[schema.feature_index("duration").unwrap()] {
                Cell::Numeric(v) => v,
                _ => panic!(),
            };
            let previous = match inst.values[schema.feature_index("previous").unwrap()] {
                Cell::Numeric(v) => v,
                _ => panic!(),
            };
            let expected = duration > 320.0 && previous >= 1.0;
            assert_eq!(inst.label, Some(u16::from(expected)));
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<_> = synth_campaign_stream(500, 11, 0.1).unwrap().collect();
        let b: Vec<_> = synth_campaign_stream(500, 11, 0.1).unwrap().collect();
        assert_eq!(a, b);
        let c: Vec<_> = synth_campaign_stream(500, 12, 0.1).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_rate() {
        let n = 100_000;
        let flipped = synth_campaign_stream(n, 5, 0.25)
            .unwrap()
            .filter(|i| i.label != Some(u16::from(campaign_rule(i))))
            .count();
        assert!((flipped as f64 / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn never_contacted_consistency() {
        let schema = builtin_bank_marketing_schema();
        let pdays = schema.feature_index("pdays").unwrap();
        for inst in synth_campaign_stream(2000, 8, 0.1).unwrap() {
            assert_eq!(inst.never_contacted(), inst.values[pdays].is_missing());
        }
    }

    #[test]
    fn rejects_bad_noise() {
        assert!(synth_campaign_stream(1, 0, 0.5).is_err());
        assert!(synth_campaign_stream(1, 0, -0.1).is_err());
    }
}
