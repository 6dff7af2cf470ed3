use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{z_uniform, LatentSubject};
use crate::dataprep::{Field, FieldKind, RawCell};

/// Which latents a field carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldRole {
    Signal,
    Noise,
}

/// One synthetic field: `v = load·(risk, z_tort, z_branch) + resid·ε`,
/// then mapped to the field's kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    #[serde(flatten)]
    pub field: Field,
    pub role: FieldRole,
    /// Loadings on risk, tortuosity and branching.
    pub loadings: [f64; 3],
    /// Continuous: `offset + scale·v`. Binary/categorical: cut points on `v`.
    pub offset: f64,
    pub scale: f64,
    pub cuts: Vec<f64>,
}

fn cont(name: &str, l: [f64; 3], offset: f64, scale: f64) -> FieldSpec {
    let role = if l == [0.0; 3] { FieldRole::Noise } else { FieldRole::Signal };
    FieldSpec { field: Field::continuous(name), role, loadings: l, offset, scale, cuts: Vec::new() }
}

fn binary(name: &str, l: [f64; 3], cut: f64) -> FieldSpec {
    let role = if l == [0.0; 3] { FieldRole::Noise } else { FieldRole::Signal };
    FieldSpec { field: Field::binary(name), role, loadings: l, offset: 0.0, scale: 1.0, cuts: vec![cut] }
}

fn categorical(name: &str, levels: &[&str], l: [f64; 3], cuts: &[f64]) -> FieldSpec {
    let role = if l == [0.0; 3] { FieldRole::Noise } else { FieldRole::Signal };
    FieldSpec { field: Field::categorical(name, levels), role, loadings: l, offset: 0.0, scale: 1.0, cuts: cuts.to_vec() }
}

/// The 49 cohort fields. Fourteen carry signal: most load on risk, several
/// on tortuosity or branching, so the tabular record partly mirrors the
/// vessel tree. The rest are pure noise.
pub fn cohort_fields() -> Vec<FieldSpec> {
    let mut f = vec![
        cont("age", [0.6, 0.0, 0.0], 58.0, 8.0),
        cont("systolic_bp", [0.55, 0.3, 0.0], 135.0, 18.0),
        cont("diastolic_bp", [0.4, 0.0, 0.0], 82.0, 10.0),
        cont("bmi", [0.35, 0.0, 0.0], 27.0, 4.5),
        cont("hba1c", [0.45, 0.0, 0.3], 36.0, 6.0),
        cont("ldl", [0.4, 0.0, 0.0], 3.5, 0.9),
        cont("crp", [0.3, 0.0, 0.0], 2.5, 1.5),
        cont("pulse_wave_velocity", [0.0, 0.5, 0.0], 9.0, 2.0),
        cont("arterial_stiffness", [0.2, 0.45, 0.0], 10.0, 3.0),
        cont("egfr", [0.0, 0.0, -0.5], 90.0, 15.0),
        cont("heart_rate", [0.0, 0.0, 0.45], 70.0, 11.0),
        binary("hypertension", [0.5, 0.3, 0.0], 0.5),
        binary("diabetes", [0.5, 0.0, 0.3], 1.0),
        categorical("smoking", &["never", "former", "current"], [0.5, 0.0, 0.0], &[0.0, 0.8]),
        binary("sex", [0.0; 3], 0.0),
    ];
    for k in 1..=24 {
        f.push(cont(&format!("lab_{k:02}"), [0.0; 3], 0.0, 1.0));
    }
    for k in 1..=5 {
        f.push(binary(&format!("flag_{k}"), [0.0; 3], 0.3 * k as f64 - 0.9));
    }
    for k in 1..=5 {
        f.push(categorical(&format!("group_{k}"), &["a", "b", "c"], [0.0; 3], &[-0.5, 0.5]));
    }
    f
}

/// One raw tabular row; each cell is independently missing with
/// probability `missing_rate`.
pub(super) fn sample_row<R: Rng + ?Sized>(latent: &LatentSubject, missing_rate: f64, rng: &mut R) -> Vec<RawCell> {
    let drivers = [latent.risk, z_uniform(latent.tortuosity), z_uniform(latent.branching)];
    cohort_fields()
        .iter()
        .map(|def| {
            let explained: f64 = def.loadings.iter().map(|l| l * l).sum();
            let eps: f64 = StandardNormal.sample(rng);
            let v = def.loadings.iter().zip(drivers).map(|(l, d)| l * d).sum::<f64>() + (1.0 - explained).sqrt() * eps;
            let missing = rng.random_bool(missing_rate);
            let cell = match &def.field.kind {
                FieldKind::Continuous => format!("{:.4}", def.offset + def.scale * v),
                FieldKind::Binary => (if v > def.cuts[0] { "1" } else { "0" }).to_string(),
                FieldKind::Categorical { levels } => levels[def.cuts.iter().filter(|&&c| v > c).count()].clone(),
            };
            (!missing).then_some(cell)
        })
        .collect()
}
