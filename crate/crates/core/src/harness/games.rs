//! The authenticity and retrievability games, played against the real
//! client and server code.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::PorError;
use crate::field::Field;
use crate::harness::adversary::{corrupt_cells, forge_response, snapshot, Adversary};
use crate::params::{ParamOptions, PorParams, Strategy};
use crate::parallel;
use crate::por::{init_local, AuditTranscript, ClientState, ServerState, Verdict};
use crate::store::MemStore;

#[derive(Debug, Clone)]
pub struct GameConfig {
    pub n_bytes: u64,
    pub lambda: u32,
    pub t: Option<u64>,
    pub strategy: Strategy,
    /// Allow moduli below the security floor so failure rates are observable.
    pub insecure_test_parameters: bool,
    /// New file, secrets and store for every trial; otherwise one setup is
    /// shared and only the challenges vary.
    pub fresh_state: bool,
    pub seed: u64,
}

impl GameConfig {
    pub fn new(n_bytes: u64, lambda: u32) -> Self {
        GameConfig {
            n_bytes,
            lambda,
            t: None,
            strategy: Strategy::Local,
            insecure_test_parameters: false,
            fresh_state: true,
            seed: 0,
        }
    }

    pub fn params<F: Field>(&self) -> Result<PorParams, PorError> {
        let opts = ParamOptions {
            insecure_test_parameters: self.insecure_test_parameters,
            t_override: self.t,
        };
        PorParams::derive_with::<F>(self.n_bytes, self.lambda, 128, self.strategy, &opts)
    }
}

/// Outcome of many independent audits against one adversary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub adversary: String,
    pub trials: u64,
    pub accepts: u64,
    pub rejects: u64,
    pub empirical_rate: f64,
    /// Largest acceptance rate the analysis allows; 1 for honest servers.
    pub bound: f64,
    /// Three binomial standard deviations at the bound.
    pub slack: f64,
    pub pass: bool,
}

impl TrialReport {
    pub fn new(adversary: &Adversary, trials: u64, accepts: u64, bound: f64) -> Self {
        let empirical_rate = accepts as f64 / trials.max(1) as f64;
        let honest = adversary.is_honest();
        let slack = if honest {
            0.0
        } else {
            3.0 * (bound * (1.0 - bound) / trials.max(1) as f64).sqrt()
        };
        let pass = if honest {
            accepts == trials
        } else {
            empirical_rate <= bound + slack
        };
        TrialReport {
            adversary: adversary.name(),
            trials,
            accepts,
            rejects: trials - accepts,
            empirical_rate,
            bound: if honest { 1.0 } else { bound },
            slack,
            pass,
        }
    }
}

impl fmt::Display for TrialReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {}/{} accepted, rate {:.3e}, bound {:.3e} (+{:.1e}) -> {}",
            self.adversary,
            self.accepts,
            self.trials,
            self.empirical_rate,
            self.bound,
            self.slack,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

/// `(m / q)^t`, the forgery bound for one response.
pub fn forgery_bound<F: Field>(m: u64, t: u64) -> f64 {
    ((m as f64).log2() - F::log2_modulus()).exp2().powi(t as i32)
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(&seed.to_le_bytes());
    s[8..16].copy_from_slice(&trial.to_le_bytes());
    ChaCha8Rng::from_seed(s)
}

struct Setup<F> {
    client: ClientState<F>,
    server: ServerState,
    /// What the adversary answers from, if not the live store.
    stale: Option<ServerState>,
    file: Vec<u8>,
}

fn setup<F: Field>(cfg: &GameConfig, adv: &Adversary, rng: &mut ChaCha8Rng) -> Result<Setup<F>, PorError> {
    let params = cfg.params::<F>()?;
    let mut file = vec![0u8; cfg.n_bytes as usize];
    rng.fill_bytes(&mut file);
    let (mut client, mut server) = init_local::<F, _>(params, Box::new(MemStore::new(file.clone())), rng)?;
    let mut stale = None;
    match adv {
        Adversary::BitFlip { cells } => corrupt_cells(&mut server, *cells, rng)?,
        Adversary::StaleStateReplay => {
            stale = Some(snapshot(&server)?);
            let at = rng.gen_range(0..cfg.n_bytes);
            let b = file[at as usize] ^ (1 << rng.gen_range(0..7));
            client.write_bytes(&mut server, at, &[b])?;
            file[at as usize] = b;
        }
        _ => {}
    }
    Ok(Setup {
        client,
        server,
        stale,
        file,
    })
}

fn audit_once<F: Field>(s: &Setup<F>, adv: &Adversary, rng: &mut ChaCha8Rng) -> Result<AuditTranscript<F>, PorError> {
    let rho = F::random_nonzero(rng);
    let mut reply = s.stale.as_ref().unwrap_or(&s.server).compute_audit(rho)?;
    forge_response(adv, &mut reply.y, rng);
    let ok = s.client.check_reply(rho, &reply).is_ok();
    Ok(AuditTranscript {
        rho,
        y: reply.y,
        verdict: if ok { Verdict::Accept } else { Verdict::Reject },
    })
}

/// Plays `trials` rounds of the authenticity game and compares the
/// adversary's acceptance rate with `(m/q)^t`.
pub fn run_authenticity_game<F: Field>(
    cfg: &GameConfig,
    adv: &Adversary,
    trials: u64,
) -> Result<TrialReport, PorError> {
    let params = cfg.params::<F>()?;
    let bound = forgery_bound::<F>(params.m, params.t);
    let outcomes: Vec<Result<bool, PorError>> = if cfg.fresh_state {
        parallel::map_range(0..trials as usize, |k| {
            let mut rng = trial_rng(cfg.seed, k as u64);
            let s = setup::<F>(cfg, adv, &mut rng)?;
            Ok(audit_once(&s, adv, &mut rng)?.verdict.accepted())
        })
    } else {
        let s = setup::<F>(cfg, adv, &mut trial_rng(cfg.seed, u64::MAX))?;
        parallel::map_range(0..trials as usize, |k| {
            let mut rng = trial_rng(cfg.seed, k as u64);
            Ok(audit_once(&s, adv, &mut rng)?.verdict.accepted())
        })
    };
    let mut accepts = 0;
    for o in outcomes {
        accepts += o? as u64;
    }
    Ok(TrialReport::new(adv, trials, accepts, bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievabilityReport {
    pub adversary: String,
    pub repetitions: u64,
    /// Audits per repetition.
    pub e: u64,
    /// Extraction returned the exact current file.
    pub won: u64,
    /// A majority was accepted but extraction failed or returned wrong bytes.
    pub lost: u64,
    /// At most half the audits were accepted, so the game does not apply.
    pub not_applicable: u64,
    pub accepted_audits: u64,
    pub min_distinct_accepted: u64,
}

impl RetrievabilityReport {
    pub fn success_rate(&self) -> f64 {
        let applicable = self.won + self.lost;
        if applicable == 0 {
            0.0
        } else {
            self.won as f64 / applicable as f64
        }
    }
}

impl fmt::Display for RetrievabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: e={} won {}/{} (lost {}, n/a {}), {} audits accepted, min distinct {}",
            self.adversary,
            self.e,
            self.won,
            self.repetitions,
            self.lost,
            self.not_applicable,
            self.accepted_audits,
            self.min_distinct_accepted
        )
    }
}

enum Round {
    Won(u64, u64),
    Lost(u64, u64),
    NotApplicable(u64, u64),
}

/// Each repetition: fresh setup, `e` audits, then extraction whenever more
/// than half were accepted.
pub fn run_retrievability_game<F: Field>(
    cfg: &GameConfig,
    adv: &Adversary,
    e: Option<u64>,
    repetitions: u64,
) -> Result<RetrievabilityReport, PorError> {
    let e = match e {
        Some(e) => e,
        None => cfg.params::<F>()?.extraction_count(),
    };
    let rounds: Vec<Result<Round, PorError>> = parallel::map_range(0..repetitions as usize, |k| {
        let mut rng = trial_rng(cfg.seed, k as u64);
        let s = setup::<F>(cfg, adv, &mut rng)?;
        let mut transcripts = Vec::with_capacity(e as usize);
        for _ in 0..e {
            transcripts.push(audit_once(&s, adv, &mut rng)?);
        }
        let accepted: Vec<_> = transcripts.iter().filter(|t| t.verdict.accepted()).collect();
        let mut distinct: Vec<Vec<u8>> = accepted.iter().map(|t| t.rho.to_canonical_vec()).collect();
        distinct.sort();
        distinct.dedup();
        let (acc, dist) = (accepted.len() as u64, distinct.len() as u64);
        if acc * 2 <= e {
            return Ok(Round::NotApplicable(acc, dist));
        }
        Ok(match s.client.extract(&transcripts) {
            Ok(bytes) if bytes == s.file => Round::Won(acc, dist),
            _ => Round::Lost(acc, dist),
        })
    });
    let mut report = RetrievabilityReport {
        adversary: adv.name(),
        repetitions,
        e,
        won: 0,
        lost: 0,
        not_applicable: 0,
        accepted_audits: 0,
        min_distinct_accepted: u64::MAX,
    };
    for r in rounds {
        let (acc, dist) = match r? {
            Round::Won(a, d) => {
                report.won += 1;
                (a, d)
            }
            Round::Lost(a, d) => {
                report.lost += 1;
                (a, d)
            }
            Round::NotApplicable(a, d) => {
                report.not_applicable += 1;
                (a, d)
            }
        };
        report.accepted_audits += acc;
        report.min_distinct_accepted = report.min_distinct_accepted.min(dist);
    }
    if repetitions == 0 {
        report.min_distinct_accepted = 0;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Fp57, Zmod};

    fn small() -> GameConfig {
        GameConfig {
            insecure_test_parameters: true,
            t: Some(1),
            ..GameConfig::new(900, 10)
        }
    }

    #[test]
    fn honest_always_accepted() {
        let r = run_authenticity_game::<Zmod<1009>>(&small(), &Adversary::Honest, 300).unwrap();
        assert!(r.pass && r.accepts == 300, "{r}");
    }

    #[test]
    fn single_position_forgery_never_passes() {
        let adv = Adversary::ForgeSparseY { positions: vec![4] };
        let r = run_authenticity_game::<Zmod<1009>>(&small(), &adv, 500).unwrap();
        assert_eq!(r.accepts, 0);
    }

    #[test]
    fn bound_value() {
        assert!((forgery_bound::<Zmod<1009>>(30, 1) - 30.0 / 1009.0).abs() < 1e-12);
        assert!((forgery_bound::<Zmod<1009>>(30, 2) - (30.0f64 / 1009.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn stale_replay_and_bitflip_rejected_at_production_size() {
        let cfg = GameConfig::new(5000, 40);
        for adv in [Adversary::StaleStateReplay, Adversary::BitFlip { cells: 1 }] {
            let r = run_authenticity_game::<Fp57>(&cfg, &adv, 50).unwrap();
            assert_eq!(r.accepts, 0, "{r}");
        }
    }

    #[test]
    fn flaky_minority_is_not_applicable() {
        let cfg = GameConfig::new(16 * 16 * 7, 2);
        let r = run_retrievability_game::<Fp57>(&cfg, &Adversary::Flaky { honest_fraction: 0.3 }, None, 3).unwrap();
        assert_eq!(r.not_applicable, 3, "{r}");
        let r = run_retrievability_game::<Fp57>(&cfg, &Adversary::Flaky { honest_fraction: 0.8 }, None, 3).unwrap();
        assert_eq!(r.won, 3, "{r}");
    }
}
