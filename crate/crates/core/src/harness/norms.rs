use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;

use super::config::rasterize_spec;
use super::report::{domain_hash, write_text, CsvTable, ReportHeader};
use super::{pool, ExperimentConfig, Outcome};
use crate::error::{Error, Result};
use crate::extension::{operator_norm_study, ExtensionMap, ExtensionOptions};
use crate::geometry::{DomainMask, Region};
use crate::local::{gradient, sobolev_reports, ScalarField};
use crate::product::{
    commutation_check, fitted_order, product_report, product_source_report,
    restriction_converse_check, transpose_coherence, x_derivative_check, CommutationReport,
    ProductField,
};
use crate::suite::{by_name, smooth_suite, TestFunction};

pub const NON_EXTENSION: &str = "non-extension behavior";

#[derive(Clone, Debug, PartialEq)]
pub struct NormStudy {
    pub header: ReportHeader,
    /// One row per domain, level, exponent and function.
    pub ratios: CsvTable,
    /// One row per domain (or product), exponent and level.
    pub summary: CsvTable,
    pub calderon: CsvTable,
    pub commutation: CsvTable,
    pub product: CsvTable,
    pub outcome: Outcome,
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn options(cfg: &ExperimentConfig) -> ExtensionOptions {
    ExtensionOptions {
        epsilon: cfg.epsilon,
        delta_s: cfg.delta_s,
        margin: cfg.margin,
        region: Region::Closed,
    }
}

struct FunctionRow {
    name: String,
    source: f64,
    target: f64,
    ratio: f64,
    restriction_exact: bool,
    sup_source: f64,
    sup_target: f64,
    /// `Σ_i ||∂_i Eu||_p` over the boundary layer of Ω, relative to `||u||_{W^{1,p}(Ω)}`.
    layer_ratio: f64,
}

struct LevelNorms {
    h: f64,
    hash: String,
    delta_s: f64,
    /// Per exponent.
    rows: Vec<Vec<FunctionRow>>,
    /// Per exponent: `(min, max)` of `(||u||_p + ||u^#||_p) / ||u||_{W^{1,p}}`.
    brackets: Vec<Option<(f64, f64)>>,
}

fn domain_level(
    cfg: &ExperimentConfig,
    mask: &DomainMask,
    suite: &[TestFunction],
) -> Result<LevelNorms> {
    let map = ExtensionMap::build(mask, &options(cfg))?;
    let fields: Vec<(String, ScalarField)> = suite
        .iter()
        .map(|t| (t.name.clone(), t.sample(mask, cfg.fill)))
        .collect();
    let ps = cfg.p.values();
    let mut rows = Vec::new();
    let applied: Vec<ScalarField> = fields
        .iter()
        .map(|(_, u)| map.apply(u))
        .collect::<Result<_>>()?;
    let full = DomainMask::full(map.target.clone());
    let grads: Vec<Vec<ScalarField>> = applied
        .iter()
        .map(|eu| gradient(eu, &full))
        .collect::<Result<_>>()?;
    let layer: Vec<usize> = map
        .identity
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_some_and(|s| !mask.is_open(s as usize)))
        .map(|(t, _)| t)
        .collect();
    for &p in &ps {
        let study = operator_norm_study(&map, &fields, p)?;
        let mut out = Vec::new();
        for r in study.ratios {
            let k = fields.iter().position(|(n, _)| *n == r.name).unwrap();
            let (u, eu) = (&fields[k].1, &applied[k]);
            let restriction_exact = map
                .identity
                .iter()
                .enumerate()
                .all(|(t, s)| s.is_none_or(|s| eu.values[t] == u.values[s as usize]));
            out.push(FunctionRow {
                name: r.name,
                source: r.source.w1p_norm,
                target: r.target.w1p_norm,
                ratio: r.ratio,
                restriction_exact,
                sup_source: u.values.iter().fold(0.0, |a, v| a.max(v.abs())),
                sup_target: eu.values.iter().fold(0.0, |a, v| a.max(v.abs())),
                layer_ratio: grads[k]
                    .iter()
                    .map(|g| g.lp_norm_on(layer.iter().copied(), p))
                    .sum::<f64>()
                    / r.source.w1p_norm,
            });
        }
        rows.push(out);
    }
    let mut brackets = vec![None; ps.len()];
    if cfg.calderon {
        let full = DomainMask::full(mask.grid().clone());
        let mut bounds = vec![(f64::INFINITY, 0.0f64); ps.len()];
        for t in suite {
            let u = ScalarField::from_fn(mask.grid().clone(), |x| t.eval(x));
            for (b, r) in bounds
                .iter_mut()
                .zip(sobolev_reports(&u, &full, &ps, true)?)
            {
                let c = r.c1p_norm.unwrap_or(0.0) / r.w1p_norm;
                b.0 = b.0.min(c);
                b.1 = b.1.max(c);
            }
        }
        brackets = bounds.into_iter().map(Some).collect();
    }
    Ok(LevelNorms {
        h: mask.grid().spacing,
        hash: domain_hash(&[mask]),
        delta_s: map.qfam.delta_s,
        rows,
        brackets,
    })
}

struct ProductRow {
    name: String,
    source: f64,
    target: f64,
    ratio: f64,
    restriction_exact: bool,
    mismatches: usize,
    corner_rel_diff: f64,
    converse_fraction: f64,
    x_discrepancy: f64,
}

struct LevelProduct {
    h: f64,
    hash: String,
    commutation: CommutationReport,
    rows: Vec<Vec<ProductRow>>,
}

fn product_level(
    cfg: &ExperimentConfig,
    m1: &DomainMask,
    m2: &DomainMask,
    suite: &[TestFunction],
    comm: &TestFunction,
) -> Result<LevelProduct> {
    let opts = options(cfg);
    let map1 = ExtensionMap::build(m1, &opts)?;
    let map2 = ExtensionMap::build(m2, &opts)?;
    let commutation = commutation_check(comm, &map1, m2, 0, cfg.fill)?;
    let n1 = m1.grid().dim();
    let off1 = map1.target.offset_of(m1.grid()).unwrap_or_default();
    let off2 = map2.target.offset_of(m2.grid()).unwrap_or_default();
    // slices through a ball around the middle of Ω₂
    let (blo, bhi) = m2.closed_bbox().ok_or(Error::EmptyDomain)?;
    let n2 = m2.grid().dim();
    let mid: Vec<f64> = (0..n2)
        .map(|a| m2.grid().origin[a] + (blo[a] + bhi[a] + 1) as f64 * 0.5 * m2.grid().spacing)
        .collect();
    let radius = 0.25 * m2.closed_diam();
    let ball: Vec<usize> = m2
        .cells(Region::Open)
        .into_iter()
        .filter(|&j| crate::geometry::euclid_dist(&m2.grid().center(j), &mid) < radius)
        .filter_map(|j| {
            let c = m2.grid().coords(j);
            let tc: Vec<i64> = (0..n2).map(|a| c[a] as i64 + off2[a]).collect();
            map2.target.checked_index(&tc)
        })
        .collect();
    let mut rows = Vec::new();
    for &p in &cfg.p.values() {
        let mut out = Vec::new();
        for t in suite {
            let u = ProductField::sample_function(m1, m2, cfg.fill, t);
            let (w, coherence) = transpose_coherence(&u, &map1, &map2)?;
            let src = product_source_report(&u, m1, m2, p)?.w1p_norm;
            if src == 0.0 {
                warn!("{}: zero norm on the source, skipped", t.name);
                continue;
            }
            let tgt = product_report(&w, p)?.w1p_norm;
            let ny = w.ny();
            let mut restriction_exact = true;
            for i in m1.cells(Region::Closed) {
                let ci = m1.grid().coords(i);
                let ti: Vec<i64> = (0..n1).map(|a| ci[a] as i64 + off1[a]).collect();
                let Some(ti) = map1.target.checked_index(&ti) else {
                    restriction_exact = false;
                    continue;
                };
                for j in m2.cells(Region::Closed) {
                    let cj = m2.grid().coords(j);
                    let tj: Vec<i64> = (0..n2).map(|a| cj[a] as i64 + off2[a]).collect();
                    let ok = map2
                        .target
                        .checked_index(&tj)
                        .is_some_and(|tj| w.values[ti * ny + tj] == u.values[i * u.ny() + j]);
                    restriction_exact &= ok;
                }
            }
            // v(x, y) = u(x): slices over the ball must restrict to u
            let v = ProductField::sample(m1, m2, cfg.fill, |x| t.eval(&x[..n1]));
            let wv = crate::product::extend_product(&v, &map1, &map2)?;
            let ux = ScalarField::sample_on(m1, Region::Closed, |x| t.eval(x));
            let converse = restriction_converse_check(&wv, m1, &ux, &ball, p)?;
            let xd = x_derivative_check(&u, &map1, m2, 0, p)?;
            out.push(ProductRow {
                name: t.name.clone(),
                source: src,
                target: tgt,
                ratio: tgt / src,
                restriction_exact,
                mismatches: coherence.mismatches,
                corner_rel_diff: if coherence.scale > 0.0 {
                    coherence.corner_max_diff / coherence.scale
                } else {
                    0.0
                },
                converse_fraction: converse.fraction_passing(),
                x_discrepancy: xd.discrepancy,
            });
        }
        rows.push(out);
    }
    Ok(LevelProduct {
        h: m1.grid().spacing,
        hash: domain_hash(&[m1, m2]),
        commutation,
        rows,
    })
}

/// Growth per refinement of the boundary-layer gradient ratio above which
/// the extension is taken to jump across part of the boundary.
pub const LAYER_GROWTH: f64 = 1.2;

/// Extension ratio increasing at every refinement while the boundary-layer
/// gradient ratio grows by at least [`LAYER_GROWTH`] each time.
fn non_extension(max_ratios: &[f64], layer_ratios: &[f64]) -> bool {
    max_ratios.len() >= 2
        && max_ratios.windows(2).all(|w| w[1] > w[0])
        && layer_ratios.windows(2).all(|w| w[1] >= LAYER_GROWTH * w[0])
}

type Unit = std::result::Result<(usize, usize), (usize, usize)>;

/// Norm ratios, Calderón brackets, commutation residuals and product ratios
/// for every configured domain and product, written as CSV tables.
pub fn run_norm_study(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<NormStudy> {
    let pool = pool(jobs)?;
    let suite = by_name(&cfg.suite)?;
    let shapes = cfg
        .domains
        .iter()
        .map(|d| cfg.load_shape(&d.shape))
        .collect::<Result<Vec<_>>>()?;
    let factors = cfg
        .products
        .iter()
        .map(|p| Ok((cfg.load_shape(&p.factor1)?, cfg.load_shape(&p.factor2)?)))
        .collect::<Result<Vec<_>>>()?;
    let comm = cfg
        .products
        .iter()
        .map(|p| {
            smooth_suite()
                .into_iter()
                .find(|t| t.name == p.commutation)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("unknown function {:?}", p.commutation))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let nl = cfg.levels.len();
    let mut units: Vec<Unit> = Vec::new();
    for d in 0..shapes.len() {
        units.extend((0..nl).map(|l| Ok((d, l))));
    }
    for p in 0..factors.len() {
        units.extend((0..nl).map(|l| Err((p, l))));
    }
    type Done = (Option<Result<LevelNorms>>, Option<Result<LevelProduct>>);
    let done: Vec<Done> = pool.install(|| {
        units
            .par_iter()
            .map(|u| match *u {
                Ok((d, l)) => {
                    let spec = &cfg.domains[d];
                    let r = rasterize_spec(&shapes[d], cfg.levels[l], spec.pad, &spec.shift)
                        .and_then(|m| domain_level(cfg, &m, &suite));
                    (Some(r), None)
                }
                Err((p, l)) => {
                    let h = cfg.levels[l];
                    let r = rasterize_spec(&factors[p].0, h, 3, &[])
                        .and_then(|m1| Ok((m1, rasterize_spec(&factors[p].1, h, 3, &[])?)))
                        .and_then(|(m1, m2)| product_level(cfg, &m1, &m2, &suite, &comm[p]));
                    (None, Some(r))
                }
            })
            .collect()
    });

    let ps = cfg.p.values();
    let mut outcome = Outcome::Pass;
    let mut ratios = CsvTable::new(&[
        "experiment",
        "domain",
        "domain_hash",
        "h",
        "p",
        "epsilon",
        "delta_s",
        "function",
        "source_w1p",
        "target_w1p",
        "ratio",
        "restriction_exact",
        "sup_source",
        "sup_target",
        "layer_ratio",
    ]);
    let mut calderon = CsvTable::new(&[
        "experiment",
        "domain",
        "domain_hash",
        "h",
        "p",
        "lower",
        "upper",
    ]);
    let mut commutation = CsvTable::new(&[
        "experiment",
        "product",
        "domain_hash",
        "h",
        "axis",
        "residual",
        "skipped_runs",
        "fitted_order",
    ]);
    let mut product = CsvTable::new(&[
        "experiment",
        "product",
        "domain_hash",
        "h",
        "p",
        "epsilon",
        "function",
        "source_w1p",
        "target_w1p",
        "ratio",
        "restriction_exact",
        "transpose_mismatches",
        "corner_rel_diff",
        "converse_fraction",
        "x_discrepancy",
    ]);
    // (name, p) -> per level (h, hash, max ratio, argmax, error)
    let mut series: BTreeMap<(usize, String, usize), Vec<(f64, String, f64, String, String, f64)>> =
        BTreeMap::new();
    let mut errors: Vec<(String, f64, String)> = Vec::new();

    let mut it = done.into_iter();
    for (d, spec) in cfg.domains.iter().enumerate() {
        for l in 0..nl {
            let h = cfg.levels[l];
            match it.next().unwrap().0.unwrap() {
                Ok(lv) => {
                    for (k, &p) in ps.iter().enumerate() {
                        let mut best = (0.0, String::new());
                        let mut layer_max: f64 = 0.0;
                        for r in &lv.rows[k] {
                            if r.ratio > best.0 {
                                best = (r.ratio, r.name.clone());
                            }
                            layer_max = layer_max.max(r.layer_ratio);
                            ratios.push(vec![
                                cfg.name.clone(),
                                spec.name.clone(),
                                lv.hash.clone(),
                                f(lv.h),
                                f(p),
                                f(cfg.epsilon),
                                f(lv.delta_s),
                                r.name.clone(),
                                f(r.source),
                                f(r.target),
                                f(r.ratio),
                                r.restriction_exact.to_string(),
                                f(r.sup_source),
                                f(r.sup_target),
                                f(r.layer_ratio),
                            ]);
                        }
                        series.entry((d, spec.name.clone(), k)).or_default().push((
                            lv.h,
                            lv.hash.clone(),
                            best.0,
                            best.1,
                            String::new(),
                            layer_max,
                        ));
                        if let Some((lo, hi)) = lv.brackets[k] {
                            calderon.push(vec![
                                cfg.name.clone(),
                                spec.name.clone(),
                                lv.hash.clone(),
                                f(lv.h),
                                f(p),
                                f(lo),
                                f(hi),
                            ]);
                        }
                    }
                }
                Err(e) => {
                    warn!("{} at h = {h}: {e}", spec.name);
                    outcome = outcome.max(Outcome::of_error(&e));
                    for k in 0..ps.len() {
                        series.entry((d, spec.name.clone(), k)).or_default().push((
                            h,
                            String::new(),
                            f64::NAN,
                            String::new(),
                            e.to_string(),
                            f64::NAN,
                        ));
                    }
                    errors.push((spec.name.clone(), h, e.to_string()));
                }
            }
        }
    }
    let base = cfg.domains.len();
    for (pi, spec) in cfg.products.iter().enumerate() {
        let mut comm_rows = Vec::new();
        for l in 0..nl {
            let h = cfg.levels[l];
            match it.next().unwrap().1.unwrap() {
                Ok(lv) => {
                    comm_rows.push((lv.hash.clone(), lv.commutation.clone()));
                    for (k, &p) in ps.iter().enumerate() {
                        let mut best = (0.0, String::new());
                        for r in &lv.rows[k] {
                            if r.ratio > best.0 {
                                best = (r.ratio, r.name.clone());
                            }
                            product.push(vec![
                                cfg.name.clone(),
                                spec.name.clone(),
                                lv.hash.clone(),
                                f(lv.h),
                                f(p),
                                f(cfg.epsilon),
                                r.name.clone(),
                                f(r.source),
                                f(r.target),
                                f(r.ratio),
                                r.restriction_exact.to_string(),
                                r.mismatches.to_string(),
                                f(r.corner_rel_diff),
                                f(r.converse_fraction),
                                f(r.x_discrepancy),
                            ]);
                        }
                        series
                            .entry((base + pi, spec.name.clone(), k))
                            .or_default()
                            .push((
                                lv.h,
                                lv.hash.clone(),
                                best.0,
                                best.1,
                                String::new(),
                                f64::NAN,
                            ));
                    }
                }
                Err(e) => {
                    warn!("{} at h = {h}: {e}", spec.name);
                    outcome = outcome.max(Outcome::of_error(&e));
                    for k in 0..ps.len() {
                        series
                            .entry((base + pi, spec.name.clone(), k))
                            .or_default()
                            .push((
                                h,
                                String::new(),
                                f64::NAN,
                                String::new(),
                                e.to_string(),
                                f64::NAN,
                            ));
                    }
                    errors.push((spec.name.clone(), h, e.to_string()));
                }
            }
        }
        let order = if comm_rows.len() >= 2 {
            f(fitted_order(
                &comm_rows.iter().map(|r| r.1.clone()).collect::<Vec<_>>(),
            ))
        } else {
            String::new()
        };
        for (hash, c) in comm_rows {
            commutation.push(vec![
                cfg.name.clone(),
                spec.name.clone(),
                hash,
                f(c.h),
                c.axis.to_string(),
                f(c.residual),
                c.skipped_runs.to_string(),
                order.clone(),
            ]);
        }
    }

    let mut summary = CsvTable::new(&[
        "experiment",
        "domain",
        "domain_hash",
        "p",
        "h",
        "max_ratio",
        "argmax",
        "drift",
        "growth",
        "layer_ratio",
        "flag",
        "error",
    ]);
    for ((_, name, k), levels) in &series {
        let maxes: Vec<f64> = levels.iter().map(|l| l.2).collect();
        let layers: Vec<f64> = levels.iter().map(|l| l.5).collect();
        let finite = maxes.iter().chain(&layers).all(|v| v.is_finite());
        let flag = if finite && non_extension(&maxes, &layers) {
            outcome = outcome.max(Outcome::DomainFlag);
            NON_EXTENSION
        } else {
            ""
        };
        for (i, (h, hash, m, arg, err, layer)) in levels.iter().enumerate() {
            let (drift, growth) = if i > 0 && levels[i - 1].2.is_finite() && m.is_finite() {
                let prev = levels[i - 1].2;
                (f((m - prev).abs() / prev), f(m / prev))
            } else {
                (String::new(), String::new())
            };
            summary.push(vec![
                cfg.name.clone(),
                name.clone(),
                hash.clone(),
                f(ps[*k]),
                f(*h),
                f(*m),
                arg.clone(),
                drift,
                growth,
                if layer.is_finite() {
                    f(*layer)
                } else {
                    String::new()
                },
                flag.to_string(),
                err.clone(),
            ]);
        }
    }
    for (name, h, e) in &errors {
        warn!("recorded failure: {name} at h = {h}: {e}");
    }

    let study = NormStudy {
        header: ReportHeader::new(cfg),
        ratios,
        summary,
        calderon,
        commutation,
        product,
        outcome,
    };
    let dir = cfg.output_dir();
    super::report::write_json(&dir, "norms_header.json", &study.header)?;
    for (name, t) in [
        ("norms.csv", &study.ratios),
        ("norms_summary.csv", &study.summary),
        ("calderon.csv", &study.calderon),
        ("commutation.csv", &study.commutation),
        ("product.csv", &study.product),
    ] {
        if !t.is_empty() {
            write_text(&dir, name, &t.render())?;
        }
    }
    Ok(study)
}
