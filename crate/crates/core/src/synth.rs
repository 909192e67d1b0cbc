//! Deterministic generators for the bundled demo tables.
//!
//! One wide, structure-rich pre-training table (`campus`), two smaller
//! pre-training tables for transfer-matrix demos (`meadow`, `sensors`),
//! four small classification evaluation tables from unrelated generative
//! families (`orchard`, `turbines`, `clinics`, `galaxies`) and one
//! regression evaluation table (`tides`). Every generator is seeded
//! internally, so the committed CSVs under `data/demo/` are reproducible
//! bit for bit; a test keeps them in sync.

use crate::error::CoreError;
use crate::rng;
use crate::table::{write_table, Column, ColumnKind, DomainTag, Table};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

struct Sampler {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Sampler {
    fn new(table_tag: &str) -> Self {
        Sampler {
            rng: rng::stream(0x5eed_da7a, &[rng::tag(table_tag)]),
            spare: None,
        }
    }

    fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Standard normal via Box-Muller.
    fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1: f64 = self.rng.gen::<f64>().max(1e-12);
        let u2: f64 = self.rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

fn numeric_column(name: String, values: Vec<f64>) -> Column {
    let missing = values.iter().map(|v| v.is_nan()).collect();
    Column {
        name,
        kind: ColumnKind::Numeric,
        values,
        missing,
        cardinality: None,
        labels: Vec::new(),
    }
}

fn categorical_column(name: String, codes: Vec<usize>, labels: Vec<String>) -> Column {
    // renumber by first appearance so the table is already in the canonical
    // encoding a reload would produce
    let mut remap: Vec<Option<usize>> = vec![None; labels.len()];
    let mut new_labels = Vec::new();
    let mut new_codes = Vec::with_capacity(codes.len());
    for &c in &codes {
        let dense = *remap[c].get_or_insert_with(|| {
            new_labels.push(labels[c].clone());
            new_labels.len() - 1
        });
        new_codes.push(dense);
    }
    let card = new_labels.len();
    Column {
        name,
        kind: ColumnKind::Categorical,
        values: new_codes.iter().map(|&c| c as f64).collect(),
        missing: vec![false; new_codes.len()],
        cardinality: Some(card),
        labels: new_labels,
    }
}

fn class_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

/// Renumbers a categorical column's codes by first appearance among the
/// non-missing entries, matching what a canonical-format reload produces.
fn recanonicalize(c: &mut Column) {
    if c.kind != ColumnKind::Categorical {
        return;
    }
    let old_card = c.cardinality.unwrap_or(0);
    let mut remap: Vec<Option<usize>> = vec![None; old_card];
    let mut new_labels = Vec::new();
    for (&v, &m) in c.values.iter().zip(&c.missing) {
        if !m {
            let code = v as usize;
            if remap[code].is_none() {
                remap[code] = Some(new_labels.len());
                new_labels.push(c.labels[code].clone());
            }
        }
    }
    let new_card = new_labels.len();
    for (v, &m) in c.values.iter_mut().zip(&c.missing) {
        *v = if m {
            new_card as f64
        } else {
            remap[*v as usize].expect("visible code was mapped") as f64
        };
    }
    c.cardinality = Some(new_card);
    c.labels = new_labels;
}

/// Wide pre-training table: 42 columns x 2400 rows over 8 latent factors,
/// mixing linear, multiplicative, periodic and threshold features, with
/// ~3% missing cells. Domain: financial-demographic.
pub fn campus() -> Table {
    let rows = 2400;
    let mut s = Sampler::new("campus");
    let latents: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..8).map(|_| s.normal()).collect())
        .collect();

    let mut columns = Vec::new();
    // 34 numeric features over latent pairs
    for j in 0..34usize {
        let a = j % 8;
        let b = (j * 3 + 1) % 8;
        let w1 = 0.4 + 0.8 * s.uniform();
        let w2 = 0.4 + 0.8 * s.uniform();
        let mut values = Vec::with_capacity(rows);
        for z in &latents {
            let (za, zb) = (z[a], z[b]);
            let core = match j % 5 {
                0 => w1 * za + w2 * zb,
                1 => (w1 * za).tanh() + 0.5 * w2 * zb,
                2 => w1 * za * zb,
                3 => (1.3 * w1 * za).sin() + 0.4 * w2 * zb,
                _ => (za + w2 * zb).powi(2) / 2.0 - 1.0,
            };
            values.push(core + 0.25 * s.normal());
        }
        columns.push(numeric_column(format!("n{j:02}"), values));
    }
    // 6 categorical features with varied class geometry: ordinal bins,
    // xor of signs, absolute-value threshold, nearest centroid, interaction
    // bins and a noisy sign
    {
        let ordinal: Vec<usize> = latents
            .iter()
            .map(|z| {
                let v = (z[0] + z[1]) / std::f64::consts::SQRT_2;
                [-0.85, 0.0, 0.85].iter().filter(|&&t| v > t).count()
            })
            .collect();
        columns.push(categorical_column(
            "cat_ord".into(),
            ordinal,
            (0..4).map(|i| format!("lvl{i}")).collect(),
        ));

        let xor: Vec<usize> = latents
            .iter()
            .map(|z| usize::from((z[2] > 0.0) != (z[3] > 0.0)))
            .collect();
        columns.push(categorical_column("cat_xor".into(), xor, class_labels(2)));

        let radial: Vec<usize> = latents
            .iter()
            .map(|z| usize::from((z[4] * z[4] + z[5] * z[5]) > 2.0 * std::f64::consts::LN_2))
            .collect();
        columns.push(categorical_column("cat_rad".into(), radial, class_labels(2)));

        let centroids = [[1.2, 0.6], [-1.0, 1.0], [0.2, -1.3]];
        let cluster: Vec<usize> = latents
            .iter()
            .map(|z| {
                let (mut best, mut best_d) = (0usize, f64::INFINITY);
                for (k, c) in centroids.iter().enumerate() {
                    let d = (z[6] - c[0]).powi(2) + (z[7] - c[1]).powi(2);
                    if d < best_d {
                        best_d = d;
                        best = k;
                    }
                }
                best
            })
            .collect();
        columns.push(categorical_column("cat_cls".into(), cluster, class_labels(3)));

        let inter: Vec<usize> = latents
            .iter()
            .map(|z| {
                let v = z[1] * z[2];
                [-0.4, 0.4].iter().filter(|&&t| v > t).count()
            })
            .collect();
        columns.push(categorical_column("cat_mul".into(), inter, class_labels(3)));

        let noisy: Vec<usize> = latents
            .iter()
            .map(|z| {
                let flip = s.uniform() < 0.1;
                usize::from((z[3] > 0.0) != flip)
            })
            .collect();
        columns.push(categorical_column("cat_sgn".into(), noisy, class_labels(2)));
    }
    // 2 pure-noise columns
    for j in 0..2usize {
        let values = (0..rows).map(|_| s.normal()).collect();
        columns.push(numeric_column(format!("noise{j}"), values));
    }

    // sprinkle ~3% missing cells, then restore the canonical
    // first-appearance code order over the visible entries
    for c in columns.iter_mut() {
        for r in 0..rows {
            if s.uniform() < 0.03 {
                c.missing[r] = true;
                match c.kind {
                    ColumnKind::Numeric => c.values[r] = f64::NAN,
                    ColumnKind::Categorical => c.values[r] = c.cardinality.unwrap() as f64,
                }
            }
        }
        recanonicalize(c);
    }

    Table::new("campus".into(), DomainTag::FinancialDemographic, columns, rows).unwrap()
}

/// Small pre-training table: 12 columns x 800 rows over 4 latents.
/// Domain: biology-ecology.
pub fn meadow() -> Table {
    let rows = 800;
    let mut s = Sampler::new("meadow");
    let latents: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..4).map(|_| s.normal()).collect())
        .collect();
    let mut columns = Vec::new();
    for j in 0..10usize {
        let a = j % 4;
        let b = (j + 1) % 4;
        let w = 0.5 + 0.7 * s.uniform();
        let values = latents
            .iter()
            .map(|z| match j % 3 {
                0 => w * z[a] + 0.6 * z[b] + 0.3 * s.normal(),
                1 => (w * z[a] * z[b]) + 0.3 * s.normal(),
                _ => (1.1 * z[a]).sin() + 0.4 * z[b] + 0.3 * s.normal(),
            })
            .collect();
        columns.push(numeric_column(format!("m{j:02}"), values));
    }
    for j in 0..2usize {
        let labels = class_labels(3);
        let codes = latents
            .iter()
            .map(|z| {
                let v = z[j] + 0.5 * z[(j + 2) % 4];
                usize::from(v > -0.6) + usize::from(v > 0.6)
            })
            .collect();
        columns.push(categorical_column(format!("mcat{j}"), codes, labels));
    }
    Table::new("meadow".into(), DomainTag::BiologyEcology, columns, rows).unwrap()
}

/// Small pre-training table: 16 columns x 1000 rows with chained
/// correlations. Domain: industrial-operational.
pub fn sensors() -> Table {
    let rows = 1000;
    let mut s = Sampler::new("sensors");
    let mut columns = Vec::new();
    let mut prev: Vec<f64> = (0..rows).map(|_| s.normal()).collect();
    columns.push(numeric_column("s00".into(), prev.clone()));
    for j in 1..14usize {
        let w = 0.55 + 0.3 * s.uniform();
        let next: Vec<f64> = prev
            .iter()
            .map(|&p| {
                let drift = s.normal();
                match j % 4 {
                    0 => w * p + 0.5 * drift,
                    1 => (w * p).tanh() + 0.45 * drift,
                    2 => w * p * p - 0.8 + 0.4 * drift,
                    _ => w * p + 0.2 * (3.0 * p).sin() + 0.45 * drift,
                }
            })
            .collect();
        columns.push(numeric_column(format!("s{j:02}"), next.clone()));
        prev = next;
    }
    let labels = class_labels(4);
    let codes: Vec<usize> = columns[5]
        .values
        .clone()
        .iter()
        .map(|&v| {
            let t = [-0.7, 0.0, 0.7];
            t.iter().filter(|&&x| v > x).count()
        })
        .collect();
    columns.push(categorical_column("mode".into(), codes, labels));
    let load: Vec<f64> = columns[9]
        .values
        .iter()
        .zip(&columns[2].values)
        .map(|(&a, &b)| 0.6 * a - 0.4 * b + 0.3 * s.normal())
        .collect();
    columns.push(numeric_column("load".into(), load));
    Table::new("sensors".into(), DomainTag::IndustrialOperational, columns, rows).unwrap()
}

/// Evaluation table: binary label from a radial boundary in 2 latent
/// dimensions, embedded in 6 features. Domain: biology-ecology.
pub fn orchard() -> Table {
    let rows = 480;
    let mut s = Sampler::new("orchard");
    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); 6];
    let mut labels = Vec::new();
    for _ in 0..rows {
        let u = s.normal();
        let v = s.normal();
        let r2 = u * u + v * v;
        // median of a chi-square(2) is 2 ln 2, so classes are balanced
        let mut y = usize::from(r2 > 2.0 * std::f64::consts::LN_2);
        if s.uniform() < 0.06 {
            y = 1 - y;
        }
        let cells = [
            u + 0.2 * s.normal(),
            v + 0.2 * s.normal(),
            (u - v) / std::f64::consts::SQRT_2 + 0.3 * s.normal(),
            r2.sqrt() + 0.35 * s.normal(),
            0.6 * r2 + 0.5 * s.normal(),
            s.normal(),
        ];
        for (f, c) in feats.iter_mut().zip(cells) {
            f.push(c);
        }
        labels.push(y);
    }
    let mut columns: Vec<Column> = feats
        .into_iter()
        .enumerate()
        .map(|(i, v)| numeric_column(format!("g{i}"), v))
        .collect();
    columns.push(categorical_column("ring".into(), labels, class_labels(2)));
    Table::new("orchard".into(), DomainTag::BiologyEcology, columns, rows).unwrap()
}

/// Evaluation table: three Gaussian clusters in 4 latent dimensions,
/// projected to 8 features. Domain: industrial-operational.
pub fn turbines() -> Table {
    let rows = 540;
    let mut s = Sampler::new("turbines");
    let centers = [
        [1.6, 0.0, 0.8, -0.4],
        [-1.2, 1.2, -0.6, 0.6],
        [0.0, -1.5, -0.8, -0.9],
    ];
    // fixed random projection from 4 latent dims to 8 features
    let proj: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..8).map(|_| s.normal() * 0.7).collect())
        .collect();
    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); 8];
    let mut labels = Vec::new();
    for i in 0..rows {
        let k = i % 3;
        let latent: Vec<f64> = centers[k].iter().map(|&c| c + s.normal()).collect();
        for (f_idx, f) in feats.iter_mut().enumerate() {
            let v: f64 = latent.iter().zip(&proj).map(|(l, p)| l * p[f_idx]).sum();
            f.push(v + 0.3 * s.normal());
        }
        labels.push(k);
    }
    let mut columns: Vec<Column> = feats
        .into_iter()
        .enumerate()
        .map(|(i, v)| numeric_column(format!("t{i}"), v))
        .collect();
    columns.push(categorical_column("state".into(), labels, class_labels(3)));
    Table::new("turbines".into(), DomainTag::IndustrialOperational, columns, rows).unwrap()
}

/// Evaluation table: binary outcome through a smooth nonlinear risk score
/// (interaction + quadratic terms), 7 features. Domain:
/// medical-human-sensor.
pub fn clinics() -> Table {
    let rows = 520;
    let mut s = Sampler::new("clinics");
    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); 7];
    let mut labels = Vec::new();
    for _ in 0..rows {
        let x: Vec<f64> = (0..5).map(|_| s.normal()).collect();
        let score = 1.1 * x[0] + 0.9 * x[1] * x[2] - 0.7 * x[3] + 0.5 * x[2] * x[2] - 0.3;
        let p = 1.0 / (1.0 + (-1.6 * score).exp());
        let y = usize::from(s.uniform() < p);
        let cells = [x[0], x[1], x[2], x[3], x[4], s.normal(), s.normal()];
        for (f, c) in feats.iter_mut().zip(cells) {
            f.push(c);
        }
        labels.push(y);
    }
    let mut columns: Vec<Column> = feats
        .into_iter()
        .enumerate()
        .map(|(i, v)| numeric_column(format!("v{i}"), v))
        .collect();
    columns.push(categorical_column("outcome".into(), labels, class_labels(2)));
    Table::new("clinics".into(), DomainTag::MedicalHumanSensor, columns, rows).unwrap()
}

/// Evaluation table: two interleaved crescents in 2 dimensions plus 4
/// noise features. Domain: physics-astronomy.
pub fn galaxies() -> Table {
    let rows = 500;
    let mut s = Sampler::new("galaxies");
    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); 6];
    let mut labels = Vec::new();
    for i in 0..rows {
        let y = i % 2;
        let t = s.uniform() * std::f64::consts::PI;
        let (mut a, mut b) = if y == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.45 - t.sin())
        };
        a += 0.15 * s.normal();
        b += 0.15 * s.normal();
        let cells = [
            2.0 * a,
            2.0 * b,
            a - b + 0.3 * s.normal(),
            0.8 * b + 0.4 * s.normal(),
            s.normal(),
            s.normal(),
        ];
        for (f, c) in feats.iter_mut().zip(cells) {
            f.push(c);
        }
        labels.push(y);
    }
    let mut columns: Vec<Column> = feats
        .into_iter()
        .enumerate()
        .map(|(i, v)| numeric_column(format!("sky{i}"), v))
        .collect();
    columns.push(categorical_column("arm".into(), labels, class_labels(2)));
    Table::new("galaxies".into(), DomainTag::PhysicsAstronomy, columns, rows).unwrap()
}

/// Evaluation table: smooth nonlinear regression target over 3 informative
/// and 3 noise features. Domain: other-science.
pub fn tides() -> Table {
    let rows = 500;
    let mut s = Sampler::new("tides");
    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); 6];
    let mut target = Vec::new();
    for _ in 0..rows {
        let a = s.normal();
        let b = s.normal();
        let c = s.normal();
        let y = (1.7 * a).sin() * (1.0 + 0.5 * b) + 0.5 * c + 0.1 * s.normal();
        let cells = [a, b, c, s.normal(), s.normal(), s.normal()];
        for (f, v) in feats.iter_mut().zip(cells) {
            f.push(v);
        }
        target.push(y);
    }
    let mut columns: Vec<Column> = feats
        .into_iter()
        .enumerate()
        .map(|(i, v)| numeric_column(format!("w{i}"), v))
        .collect();
    columns.push(numeric_column("height".into(), target));
    Table::new("tides".into(), DomainTag::OtherScience, columns, rows).unwrap()
}

/// All bundled demo tables.
pub fn demo_tables() -> Vec<Table> {
    vec![
        campus(),
        meadow(),
        sensors(),
        orchard(),
        turbines(),
        clinics(),
        galaxies(),
        tides(),
    ]
}

/// Writes every demo table as CSV plus a manifest into `dir`.
pub fn write_demo_data(dir: &Path) -> Result<(), CoreError> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir.display().to_string(), e))?;
    let mut manifest = String::from("# Bundled demo datasets; regenerated by unitab-core.\n");
    for table in demo_tables() {
        let file = format!("{}.csv", table.name);
        write_table(&table, &dir.join(&file))?;
        manifest.push_str(&format!(
            "\n[[dataset]]\nname = \"{}\"\npath = \"{}\"\ndomain = \"{}\"\n",
            table.name, file, table.domain
        ));
        // pin kinds explicitly so reloads can never drift from the generator
        manifest.push_str("[dataset.kinds]\n");
        for c in table.columns() {
            manifest.push_str(&format!("{} = \"{}\"\n", c.name, c.kind));
        }
    }
    std::fs::write(dir.join("manifest.toml"), manifest)
        .map_err(|e| CoreError::io(dir.display().to_string(), e))
}
