//! Aging-model assembly and synthesis.
//!
//! The build runs, in order: affine cohort alignment, groupwise template
//! construction, reference selection (the input needing the smallest
//! deformation from the template), chained pairwise registration folded into
//! a single velocity field per direction, parallel transport of both
//! composite fields onto the template anatomy, and fitting of the temporal
//! curve from the per-step deformation ratios. Synthesis warps the template
//! through the transported field scaled by the curve value at the requested
//! age.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{bch_accumulate, exp_field, field_norm, warp};
use crate::gamma::GammaCurve;
use crate::grid::{FieldError, ScalarVolume, VelocityField};
use crate::registration::{log_demons_register, RegistrationError, RegistrationParams};
use crate::template::{
    affine_align_cohort, build_groupwise_template, GroupwiseResult, TemplateError,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid age series: {reason}")]
    InvalidSeries { reason: String },
    #[error("cannot pick a reference from an empty result")]
    EmptyGroupwise,
    #[error("cannot compute ratios of an empty chain")]
    EmptyChain,
    #[error("degenerate chain: total deformation norm is zero")]
    DegenerateChain,
    #[error("{stage}: {source}")]
    Template {
        stage: &'static str,
        #[source]
        source: TemplateError,
    },
    #[error("{stage} (pair {pair}): {source}")]
    PairRegistration {
        stage: &'static str,
        pair: usize,
        #[source]
        source: RegistrationError,
    },
    #[error("{stage}: {source}")]
    Field {
        stage: &'static str,
        #[source]
        source: FieldError,
    },
}

/// Direction of a chain relative to the reference template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Age-ordered series of templates with strictly increasing ages.
#[derive(Debug, Clone)]
pub struct AgeSeries {
    templates: Vec<ScalarVolume>,
    ages: Vec<f64>,
}

impl AgeSeries {
    pub fn new(templates: Vec<ScalarVolume>, ages: Vec<f64>) -> Result<Self, ModelError> {
        if templates.len() != ages.len() {
            return Err(ModelError::InvalidSeries {
                reason: format!("{} templates but {} ages", templates.len(), ages.len()),
            });
        }
        if templates.len() < 3 {
            return Err(ModelError::InvalidSeries {
                reason: format!("need at least 3 templates, got {}", templates.len()),
            });
        }
        if ages.iter().any(|a| !a.is_finite()) {
            return Err(ModelError::InvalidSeries {
                reason: "ages must be finite".into(),
            });
        }
        if ages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::InvalidSeries {
                reason: "ages must be strictly increasing".into(),
            });
        }
        let g = templates[0].grid;
        if templates.iter().any(|t| !t.grid.compatible(&g)) {
            return Err(ModelError::InvalidSeries {
                reason: "templates live on incompatible grids".into(),
            });
        }
        Ok(Self { templates, ages })
    }

    pub fn templates(&self) -> &[ScalarVolume] {
        &self.templates
    }

    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

/// Build settings and outcome notes carried inside the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub registration: RegistrationParams,
    pub groupwise_iters: usize,
    pub smoothing_weight: f64,
    pub seed: Option<u64>,
    /// A direction is degenerate when its chain had zero total norm; the
    /// curve falls back to a linear ramp there.
    pub degenerate_forward: bool,
    pub degenerate_backward: bool,
    /// Curve values at the series endpoints (both should be near 1).
    pub gamma_at_first_age: f64,
    pub gamma_at_last_age: f64,
}

/// The assembled model: global template, transported forward/backward
/// velocity fields, temporal curve and the reference age they are anchored
/// to.
#[derive(Debug, Clone)]
pub struct AgingModel {
    pub template: ScalarVolume,
    pub forward: VelocityField,
    pub backward: VelocityField,
    pub gamma: GammaCurve,
    pub reference_index: usize,
    pub reference_age: f64,
    pub ages: Vec<f64>,
    pub provenance: Provenance,
}

/// Index of the field with the smallest norm; exact ties break toward the
/// middle of the series, then toward the lower index.
pub fn find_reference(result: &GroupwiseResult) -> Result<usize, ModelError> {
    if result.fields.is_empty() {
        return Err(ModelError::EmptyGroupwise);
    }
    let mid = (result.fields.len() - 1) as f64 / 2.0;
    let mut best = 0usize;
    let mut best_norm = field_norm(&result.fields[0]);
    let mut best_dist = (0.0 - mid).abs();
    for (i, f) in result.fields.iter().enumerate().skip(1) {
        let n = field_norm(f);
        let d = (i as f64 - mid).abs();
        if n < best_norm || (n == best_norm && d < best_dist) {
            best = i;
            best_norm = n;
            best_dist = d;
        }
    }
    Ok(best)
}

/// Register each adjacent pair away from the reference and fold the pairwise
/// fields into running composites. Returns every partial composite; the last
/// one is the full directional field. The nearer-to-reference template is
/// always the moving image, so `warp(near, exp(v)) ~= far`.
pub fn chain_compose(
    series: &AgeSeries,
    reference: usize,
    direction: Direction,
    params: &RegistrationParams,
) -> Result<Vec<VelocityField>, ModelError> {
    let n = series.len();
    if reference >= n {
        return Err(ModelError::InvalidSeries {
            reason: format!("reference index {reference} out of range for {n} templates"),
        });
    }
    let pair_count = match direction {
        Direction::Forward => n - 1 - reference,
        Direction::Backward => reference,
    };
    let stage = match direction {
        Direction::Forward => "chain_compose forward",
        Direction::Backward => "chain_compose backward",
    };
    let mut partials: Vec<VelocityField> = Vec::with_capacity(pair_count);
    for j in 1..=pair_count {
        let (near, far) = match direction {
            Direction::Forward => (reference + j - 1, reference + j),
            Direction::Backward => (reference + 1 - j, reference - j),
        };
        let pairwise = log_demons_register(
            &series.templates()[far],
            &series.templates()[near],
            params,
        )
        .map_err(|source| ModelError::PairRegistration {
            stage,
            pair: j,
            source,
        })?
        .velocity;
        match partials.last() {
            None => partials.push(pairwise),
            Some(acc) => {
                let folded = bch_accumulate(acc, &pairwise).map_err(|source| {
                    ModelError::Field { stage, source }
                })?;
                partials.push(folded);
            }
        }
    }
    Ok(partials)
}

/// Express a velocity field on the template anatomy by conjugating its flow
/// with half the reference-to-template deformation:
/// `exp(out) = exp(r/2) o exp(v) o exp(-r/2)`, folded in velocity form.
/// A zero reference field is the identity conjugation and returns `v`
/// unchanged.
pub fn parallel_transport(
    v: &VelocityField,
    reference_field: &VelocityField,
) -> Result<VelocityField, FieldError> {
    if !v.grid.compatible(&reference_field.grid) {
        return Err(FieldError::GridMismatch {
            op: "parallel_transport",
        });
    }
    if reference_field.is_zero() {
        return Ok(v.clone());
    }
    let half = reference_field.scaled(0.5);
    let acc = bch_accumulate(&half, v)?;
    bch_accumulate(&acc, &half.negated())
}

/// Per-step deformation magnitudes as fractions of the full directional
/// field, with the leading zero for the reference itself. The last entry is
/// exactly one.
pub fn deformation_ratios(partials: &[VelocityField]) -> Result<Vec<f64>, ModelError> {
    if partials.is_empty() {
        return Err(ModelError::EmptyChain);
    }
    let total = field_norm(partials.last().unwrap());
    if total <= 1e-12 {
        return Err(ModelError::DegenerateChain);
    }
    let mut out = Vec::with_capacity(partials.len() + 1);
    out.push(0.0);
    for p in partials {
        out.push(field_norm(p) / total);
    }
    Ok(out)
}

/// Fit the temporal curve from ratio sequences (leading zero at the
/// reference included, as produced by [`deformation_ratios`]).
pub fn fit_gamma(
    ages: &[f64],
    r_forward: &[f64],
    r_backward: &[f64],
    reference: usize,
    smoothing_weight: f64,
) -> GammaCurve {
    let m_age = ages[reference];
    let fwd: Vec<(f64, f64)> = r_forward
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, r)| (ages[reference + k], *r))
        .collect();
    let bwd: Vec<(f64, f64)> = r_backward
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, r)| (ages[reference - k], *r))
        .collect();
    GammaCurve::fit(m_age, &fwd, &bwd, smoothing_weight)
}

struct DirectionOutcome {
    transported: VelocityField,
    ratios: Vec<f64>,
    degenerate: bool,
}

fn summarize_direction(
    partials: &[VelocityField],
    reference_field: &VelocityField,
    ages: &[f64],
    reference: usize,
    direction: Direction,
) -> Result<DirectionOutcome, ModelError> {
    let grid = reference_field.grid;
    if partials.is_empty() {
        return Ok(DirectionOutcome {
            transported: VelocityField::zeros(grid),
            ratios: Vec::new(),
            degenerate: false,
        });
    }
    let stage = match direction {
        Direction::Forward => "parallel_transport forward",
        Direction::Backward => "parallel_transport backward",
    };
    let transported = parallel_transport(partials.last().unwrap(), reference_field)
        .map_err(|source| ModelError::Field { stage, source })?;
    match deformation_ratios(partials) {
        Ok(ratios) => Ok(DirectionOutcome {
            transported,
            ratios,
            degenerate: false,
        }),
        Err(ModelError::DegenerateChain) => {
            // all templates on this side are effectively identical: fall
            // back to a ramp linear in age so the curve stays well defined
            let m_age = ages[reference];
            let end_age = match direction {
                Direction::Forward => ages[reference + partials.len()],
                Direction::Backward => ages[reference - partials.len()],
            };
            let span = (end_age - m_age).abs();
            let mut ratios = vec![0.0];
            for k in 1..=partials.len() {
                let age = match direction {
                    Direction::Forward => ages[reference + k],
                    Direction::Backward => ages[reference - k],
                };
                ratios.push((age - m_age).abs() / span);
            }
            Ok(DirectionOutcome {
                transported,
                ratios,
                degenerate: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// Run the full pipeline over an age series.
pub fn build_model(
    series: &AgeSeries,
    params: &RegistrationParams,
    groupwise_iters: usize,
    smoothing_weight: f64,
) -> Result<AgingModel, ModelError> {
    build_model_seeded(series, params, groupwise_iters, smoothing_weight, None)
}

/// [`build_model`] with a seed recorded in the provenance (the build itself
/// is deterministic; the seed documents upstream data generation).
pub fn build_model_seeded(
    series: &AgeSeries,
    params: &RegistrationParams,
    groupwise_iters: usize,
    smoothing_weight: f64,
    seed: Option<u64>,
) -> Result<AgingModel, ModelError> {
    let aligned = affine_align_cohort(series.templates(), params).map_err(|source| {
        ModelError::Template {
            stage: "affine_align_cohort",
            source,
        }
    })?;
    let aligned_series = AgeSeries::new(aligned.images, series.ages().to_vec())?;

    let groupwise = build_groupwise_template(aligned_series.templates(), params, groupwise_iters)
        .map_err(|source| ModelError::Template {
            stage: "build_groupwise_template",
            source,
        })?;

    let reference = find_reference(&groupwise)?;
    let reference_age = series.ages()[reference];

    let forward_partials = chain_compose(&aligned_series, reference, Direction::Forward, params)?;
    let backward_partials =
        chain_compose(&aligned_series, reference, Direction::Backward, params)?;

    let reference_field = &groupwise.fields[reference];
    let ages = series.ages();
    let fwd = summarize_direction(
        &forward_partials,
        reference_field,
        ages,
        reference,
        Direction::Forward,
    )?;
    let bwd = summarize_direction(
        &backward_partials,
        reference_field,
        ages,
        reference,
        Direction::Backward,
    )?;

    let gamma = fit_gamma(ages, &fwd.ratios, &bwd.ratios, reference, smoothing_weight);
    let provenance = Provenance {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        registration: params.clone(),
        groupwise_iters,
        smoothing_weight,
        seed,
        degenerate_forward: fwd.degenerate,
        degenerate_backward: bwd.degenerate,
        gamma_at_first_age: gamma.eval(ages[0]),
        gamma_at_last_age: gamma.eval(ages[ages.len() - 1]),
    };

    Ok(AgingModel {
        template: groupwise.template,
        forward: fwd.transported,
        backward: bwd.transported,
        gamma,
        reference_index: reference,
        reference_age,
        ages: ages.to_vec(),
        provenance,
    })
}

/// Age-specific template at `age`: the forward branch serves ages at or
/// above the reference, the backward branch the rest. At the reference age
/// the curve is zero and the template is returned bit for bit.
pub fn synthesize(model: &AgingModel, age: f64) -> Result<ScalarVolume, ModelError> {
    let gamma = model.gamma.eval(age);
    let branch = if age >= model.reference_age {
        &model.forward
    } else {
        &model.backward
    };
    let scaled = branch.scaled(gamma);
    let phi = exp_field(&scaled).map_err(|source| ModelError::Field {
        stage: "synthesize exp",
        source,
    })?;
    warp(&model.template, &phi).map_err(|source| ModelError::Field {
        stage: "synthesize warp",
        source,
    })
}
