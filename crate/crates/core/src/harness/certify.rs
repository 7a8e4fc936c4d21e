use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::rasterize_spec;
use super::report::{domain_hash, write_json, ReportHeader};
use super::{pool, DomainSpec, ExperimentConfig, Outcome};
use crate::error::{Error, Result};
use crate::geometry::{measure_density, quasiconvexity, DomainMask, GeodesicWitness, Region};
use crate::partition::{BumpBasis, GradientProbe};
use crate::quasicube::{QuasiCubeFamily, QuasiCubeSummary};
use crate::whitney::{decompose, DyadicWindow, WhitneyCertificate};

/// Tolerance on `|Σφ_Q - 1|`.
pub const PARTITION_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionCheck {
    pub probes: usize,
    pub off_set: usize,
    pub sum_error: f64,
    pub gradient: GradientProbe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AhlforsCheck {
    pub delta: f64,
    pub c_a: f64,
    /// `(diameter, C_A)` pairs.
    pub curve: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiconvexityCheck {
    pub radius: f64,
    pub c_q: f64,
    pub pairs: usize,
    pub worst: Option<GeodesicWitness>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCertification {
    pub h: f64,
    pub domain_hash: String,
    pub open_cells: usize,
    pub closed_cells: usize,
    pub epsilon: f64,
    pub delta_s: f64,
    pub whitney: Option<WhitneyCertificate>,
    pub partition: Option<PartitionCheck>,
    pub quasicubes: Option<QuasiCubeSummary>,
    pub ahlfors: Option<AhlforsCheck>,
    pub quasiconvexity: Option<QuasiconvexityCheck>,
    /// Domain-level flags (expected on negative examples).
    pub flags: Vec<String>,
    /// Exact invariants that failed, with their witnesses.
    pub violations: Vec<String>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainCertification {
    pub header: ReportHeader,
    pub domain: String,
    pub levels: Vec<LevelCertification>,
    /// Whitney overlap equal on the two finest levels.
    pub overlap_stable: Option<bool>,
    /// Relative change of `max |∇φ_Q| diam Q` between the two finest levels.
    pub gradient_drift: Option<f64>,
    /// Relative change of γ₁ between the two finest levels.
    pub gamma1_drift: Option<f64>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificationRun {
    pub reports: Vec<DomainCertification>,
    pub outcome: Outcome,
}

fn level_seed(seed: u64, domain: usize, level: usize) -> u64 {
    seed ^ ((domain as u64) << 32) ^ (level as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Random points of the window off S; `Σφ_Q` checked at each.
fn probe_partition(
    basis: &BumpBasis,
    mask: &DomainMask,
    probes: usize,
    seed: u64,
) -> PartitionCheck {
    let cube = basis.family.window.cube();
    let n = basis.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..probes)
        .map(|_| {
            (0..n)
                .map(|a| rng.gen_range(cube.lo(a)..cube.hi(a)))
                .collect()
        })
        .collect();
    let errs: Vec<Option<f64>> = points
        .par_iter()
        .map(|x| {
            if mask.grid().locate(x).is_some_and(|c| mask.is_closed(c)) {
                return None;
            }
            let vals = basis.evaluate(x).ok()?;
            Some((vals.iter().map(|v| v.value).sum::<f64>() - 1.0).abs())
        })
        .collect();
    PartitionCheck {
        probes,
        off_set: errs.iter().flatten().count(),
        sum_error: errs.iter().flatten().copied().fold(0.0, f64::max),
        gradient: basis.probe_gradients(4),
    }
}

pub(super) fn certify_level(
    cfg: &ExperimentConfig,
    mask: &DomainMask,
    seed: u64,
) -> LevelCertification {
    let h = mask.grid().spacing;
    let delta_s = cfg.delta_s.unwrap_or(0.5 * mask.closed_diam());
    let mut out = LevelCertification {
        h,
        domain_hash: domain_hash(&[mask]),
        open_cells: mask.count(Region::Open),
        closed_cells: mask.count(Region::Closed),
        epsilon: cfg.epsilon,
        delta_s,
        whitney: None,
        partition: None,
        quasicubes: None,
        ahlfors: None,
        quasiconvexity: None,
        flags: Vec::new(),
        violations: Vec::new(),
        outcome: Outcome::Pass,
    };
    let note = |out: &mut LevelCertification, e: Error| {
        let o = Outcome::of_error(&e);
        if o == Outcome::DomainFlag {
            out.flags.push(e.to_string());
        } else {
            out.violations.push(e.to_string());
        }
        out.outcome = out.outcome.max(o);
    };

    match measure_density(mask, delta_s.max(2.0 * h), cfg.density_samples, seed) {
        Ok(r) => {
            if r.c_a > cfg.regularity_limit {
                out.flags.push(format!(
                    "not regular: C_A = {} > {}",
                    r.c_a, cfg.regularity_limit
                ));
                out.outcome = out.outcome.max(Outcome::DomainFlag);
            }
            out.ahlfors = Some(AhlforsCheck {
                delta: r.delta_a,
                c_a: r.c_a,
                curve: r.curve(),
            });
        }
        Err(e) => note(&mut out, e),
    }
    let radius = cfg.quasiconvexity_cells * h;
    match quasiconvexity(mask, radius, cfg.quasiconvexity_pairs, seed.wrapping_add(1)) {
        Ok(r) => {
            if r.c_q > cfg.quasiconvexity_limit {
                out.flags.push(format!(
                    "not quasiconvex: C_q = {} > {} at radius {radius}",
                    r.c_q, cfg.quasiconvexity_limit
                ));
                out.outcome = out.outcome.max(Outcome::DomainFlag);
            }
            let worst = r
                .witness_pairs
                .iter()
                .max_by(|a, b| a.ratio().total_cmp(&b.ratio()))
                .cloned();
            out.quasiconvexity = Some(QuasiconvexityCheck {
                radius,
                c_q: r.c_q,
                pairs: r.witness_pairs.len(),
                worst,
            });
        }
        Err(e) => note(&mut out, e),
    }

    let t = Instant::now();
    let fam = match DyadicWindow::around(mask, cfg.margin).and_then(|w| {
        let k = (w.diam() / h).log2().round() as u32;
        decompose(mask, &w, 0, k + 1)
    }) {
        Ok(f) => Arc::new(f),
        Err(e) => {
            note(&mut out, e);
            return out;
        }
    };
    info!(
        "h = {h}: {} Whitney cubes in {:.2?}",
        fam.len(),
        t.elapsed()
    );
    let cert = fam.certificate.clone();
    if !cert.passed() {
        out.violations.push(format!(
            "Whitney certificate: {} lower, {} upper, {} ratio violations, partition exact = {}",
            cert.lower_violations,
            cert.upper_violations,
            cert.ratio_violations,
            cert.partition_exact
        ));
        out.outcome = Outcome::InvariantViolation;
    }
    out.whitney = Some(cert);

    let basis = match BumpBasis::new(fam.clone()) {
        Ok(b) => b,
        Err(e) => {
            note(&mut out, e);
            return out;
        }
    };
    let part = probe_partition(&basis, mask, cfg.probes, seed.wrapping_add(2));
    if part.sum_error > PARTITION_TOL || part.gradient.sum_error > PARTITION_TOL {
        out.violations.push(format!(
            "partition sum error {} (random probes), {} (star probes)",
            part.sum_error, part.gradient.sum_error
        ));
        out.outcome = Outcome::InvariantViolation;
    }
    out.partition = Some(part);

    match QuasiCubeFamily::build_with_region(
        fam,
        Arc::new(mask.clone()),
        cfg.epsilon,
        delta_s,
        Region::Closed,
    ) {
        Ok(q) => {
            let s = q.summary();
            if s.containment_violations > 0 || s.ten_q_violations > 0 {
                out.violations.push(format!(
                    "quasi-cubes: {} containment, {} 10Q violations",
                    s.containment_violations, s.ten_q_violations
                ));
                out.outcome = Outcome::InvariantViolation;
            }
            out.quasicubes = Some(s);
        }
        Err(e) => note(&mut out, e),
    }
    out
}

fn rel_change(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        if b == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (b - a).abs() / a.abs()
    }
}

fn summarize(
    cfg: &ExperimentConfig,
    spec: &DomainSpec,
    levels: Vec<LevelCertification>,
) -> DomainCertification {
    let outcome = levels.iter().map(|l| l.outcome).max().unwrap_or_default();
    let last_two = if levels.len() >= 2 {
        Some((&levels[levels.len() - 2], &levels[levels.len() - 1]))
    } else {
        None
    };
    let overlap_stable = last_two
        .and_then(|(a, b)| Some(a.whitney.as_ref()?.overlap == b.whitney.as_ref()?.overlap));
    let gradient_drift = last_two.and_then(|(a, b)| {
        Some(rel_change(
            a.partition.as_ref()?.gradient.constant,
            b.partition.as_ref()?.gradient.constant,
        ))
    });
    let gamma1_drift = last_two.and_then(|(a, b)| {
        Some(rel_change(
            a.quasicubes.as_ref()?.gamma1,
            b.quasicubes.as_ref()?.gamma1,
        ))
    });
    DomainCertification {
        header: ReportHeader::new(cfg),
        domain: spec.name.clone(),
        levels,
        overlap_stable,
        gradient_drift,
        gamma1_drift,
        outcome,
    }
}

/// Certify every domain at every level and write `certify_<domain>.json`.
pub fn run_certification(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<CertificationRun> {
    let pool = pool(jobs)?;
    let shapes = cfg
        .domains
        .iter()
        .map(|d| cfg.load_shape(&d.shape))
        .collect::<Result<Vec<_>>>()?;
    let units: Vec<(usize, usize)> = (0..cfg.domains.len())
        .flat_map(|d| (0..cfg.levels.len()).map(move |l| (d, l)))
        .collect();
    let results: Vec<LevelCertification> = pool.install(|| {
        units
            .par_iter()
            .map(|&(d, l)| {
                let spec = &cfg.domains[d];
                let h = cfg.levels[l];
                match rasterize_spec(&shapes[d], h, spec.pad, &spec.shift) {
                    Ok(mask) => certify_level(cfg, &mask, level_seed(cfg.seed, d, l)),
                    Err(e) => {
                        warn!("{} at h = {h}: {e}", spec.name);
                        LevelCertification {
                            h,
                            domain_hash: String::new(),
                            open_cells: 0,
                            closed_cells: 0,
                            epsilon: cfg.epsilon,
                            delta_s: cfg.delta_s.unwrap_or(0.0),
                            whitney: None,
                            partition: None,
                            quasicubes: None,
                            ahlfors: None,
                            quasiconvexity: None,
                            flags: if e.is_domain_flag() {
                                vec![e.to_string()]
                            } else {
                                vec![]
                            },
                            violations: if e.is_domain_flag() {
                                vec![]
                            } else {
                                vec![e.to_string()]
                            },
                            outcome: Outcome::of_error(&e),
                        }
                    }
                }
            })
            .collect()
    });
    let mut results = results.into_iter();
    let mut reports = Vec::new();
    for spec in &cfg.domains {
        let levels: Vec<_> = results.by_ref().take(cfg.levels.len()).collect();
        reports.push(summarize(cfg, spec, levels));
    }
    let dir = cfg.output_dir();
    for r in &reports {
        write_json(&dir, &format!("certify_{}.json", r.domain), r)?;
    }
    let outcome = reports.iter().map(|r| r.outcome).max().unwrap_or_default();
    Ok(CertificationRun { reports, outcome })
}
