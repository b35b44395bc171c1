//! Synthetic cohorts with planted sleep contagion.
//!
//! Each participant carries a latent sleep propensity `z`. Every day
//!
//! ```text
//! z_i[k] = ρ·z_i[k−1] + β·N_i[k−1] + (1−ρ−β)·(w·f_i[k] + c) + ε
//! ```
//!
//! where `N_i` is the influence-weighted mean of the neighbours' previous
//! propensities on that day's SMS graph (a node without neighbours uses its
//! own), `f_i` are autocorrelated phone-usage factors and `c = logit(0.6)`
//! centres the labels on eight hours. Neighbour `j` weighs `exp(5·u_j)`, where
//! `u_j` is a static trait that the first survey columns measure with noise.
//! Physiology columns are noisy readings of `z`, weather is shared by the
//! cohort and carries no signal.

use chrono::{Duration, NaiveDate};
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use super::{CohortDataset, DataError, Modality};
use crate::commgraph::{self, CommEvent, EventKind, WeightedGraph, Window};
use crate::config::{ConfigError, KvConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_cohorts: usize,
    pub participants_per_cohort: usize,
    pub days: usize,
    pub m: usize,
    pub contagion_strength: f64,
    pub temporal_coeff: f64,
    /// Fraction of participant pairs linked in each weekly contact graph.
    pub graph_density: f64,
    pub noise_sd: f64,
    pub seed: u64,
    /// Probability that any feature or sleep cell is missing.
    pub missing_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_cohorts: 6,
            participants_per_cohort: 45,
            days: 115,
            m: 32,
            contagion_strength: 0.6,
            temporal_coeff: 0.2,
            graph_density: 0.1,
            noise_sd: 1.0,
            seed: 0,
            missing_rate: 0.02,
        }
    }
}

pub const SYNTH_KEYS: [&str; 10] = [
    "n_cohorts",
    "participants_per_cohort",
    "days",
    "m",
    "contagion_strength",
    "temporal_coeff",
    "graph_density",
    "noise_sd",
    "seed",
    "missing_rate",
];

const INFLUENCE_COLUMNS: usize = 3;
const PHONE_FACTORS: usize = 3;
const PHONE_AR: f64 = 0.7;
const WEATHER_AR: f64 = 0.8;
const BURN_IN: usize = 30;
const MESSAGES_PER_WEEK: f64 = 3.0;
const POSITION_JITTER: f64 = 0.05;
const LABEL_OFFSET: f64 = 0.405_465_108_108_164_4; // logit(0.6)
const SLEEP_NOISE_MIN: f64 = 10.0;
/// Scale of the influence trait in the neighbour weights `exp(scale·u)`.
const INFLUENCE_SCALE: f64 = 5.0;
const PHYS_NOISE: f64 = 0.3;
/// Noise on the survey columns that measure the influence trait.
const TRAIT_NOISE: f64 = 0.05;

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: &str| Err(DataError::Config(msg.to_string()));
        if self.n_cohorts == 0 || self.participants_per_cohort < 2 || self.days < 2 {
            return bad("need at least one cohort, two participants and two days");
        }
        if self.m < 4 {
            return bad("m must be at least 4 (one column per modality)");
        }
        if !(0.0..=1.0).contains(&self.contagion_strength) {
            return bad("contagion_strength must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.temporal_coeff) {
            return bad("temporal_coeff must lie in [0, 1)");
        }
        if self.contagion_strength + self.temporal_coeff >= 1.0 {
            return bad("contagion_strength + temporal_coeff must stay below 1");
        }
        if !(0.0..=1.0).contains(&self.graph_density) {
            return bad("graph_density must lie in [0, 1]");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 1)");
        }
        Ok(())
    }

    /// Read a config holding only synthetic-config keys; absent keys keep
    /// their defaults.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, ConfigError> {
        kv.reject_unknown(&SYNTH_KEYS)?;
        Self::from_kv_lenient(kv)
    }

    /// Like [`SynthConfig::from_kv`] but ignores keys it does not know.
    pub fn from_kv_lenient(kv: &KvConfig) -> Result<Self, ConfigError> {
        let d = Self::default();
        Ok(Self {
            n_cohorts: kv.get_or("n_cohorts", d.n_cohorts)?,
            participants_per_cohort: kv.get_or("participants_per_cohort", d.participants_per_cohort)?,
            days: kv.get_or("days", d.days)?,
            m: kv.get_or("m", d.m)?,
            contagion_strength: kv.get_or("contagion_strength", d.contagion_strength)?,
            temporal_coeff: kv.get_or("temporal_coeff", d.temporal_coeff)?,
            graph_density: kv.get_or("graph_density", d.graph_density)?,
            noise_sd: kv.get_or("noise_sd", d.noise_sd)?,
            seed: kv.get_or("seed", d.seed)?,
            missing_rate: kv.get_or("missing_rate", d.missing_rate)?,
        })
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("n_cohorts", self.n_cohorts);
        kv.set("participants_per_cohort", self.participants_per_cohort);
        kv.set("days", self.days);
        kv.set("m", self.m);
        kv.set("contagion_strength", self.contagion_strength);
        kv.set("temporal_coeff", self.temporal_coeff);
        kv.set("graph_density", self.graph_density);
        kv.set("noise_sd", self.noise_sd);
        kv.set("seed", self.seed);
        kv.set("missing_rate", self.missing_rate);
        kv
    }

    /// Column counts per modality, in [`Modality::ALL`] order.
    fn blocks(&self) -> [usize; 4] {
        let share = |num: usize| ((self.m * num) as f64 / 32.0).round().max(1.0) as usize;
        let phys = share(10);
        let phone = share(10);
        let weather = share(4);
        let survey = self.m.saturating_sub(phys + phone + weather).max(1);
        let mut b = [phys, phone, weather, survey];
        // trim the largest blocks until the total is exactly m
        while b.iter().sum::<usize>() > self.m {
            let i = (0..4).max_by_key(|&i| (b[i], i)).unwrap();
            b[i] -= 1;
        }
        b
    }
}

pub fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2016, 1, 4).expect("valid date")
}

fn day_start(k: i64) -> i64 {
    base_date().and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() + k * 86_400
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The `round(density·n(n−1)/2)` closest pairs.
fn geometric_edges(pos: &[(f64, f64)], density: f64) -> Vec<(usize, usize)> {
    let n = pos.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (pos[i].0 - pos[j].0, pos[i].1 - pos[j].1);
            pairs.push((dx * dx + dy * dy, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let keep = (density * pairs.len() as f64).round() as usize;
    pairs.into_iter().take(keep).map(|(_, i, j)| (i, j)).collect()
}

fn reflect(v: f64) -> f64 {
    let v = v.rem_euclid(2.0);
    if v > 1.0 {
        2.0 - v
    } else {
        v
    }
}

fn generate_cohort(cfg: &SynthConfig, index: usize) -> Result<CohortDataset, DataError> {
    let cohort_id = format!("cohort{}", index + 1);
    let mut rng = seed::stream(seed::derive(cfg.seed, &cohort_id), "synth");
    let n = cfg.participants_per_cohort;
    let days = cfg.days;
    let [n_phys, n_phone, n_weather, n_survey] = cfg.blocks();
    let participants: Vec<String> = (0..n).map(|i| format!("c{}-p{:02}", index + 1, i + 1)).collect();
    let dates: Vec<NaiveDate> = (0..days).map(|k| base_date() + Duration::days(k as i64)).collect();
    let gauss = |rng: &mut seed::Rng| -> f64 { rng.sample(StandardNormal) };

    // weekly contact graphs and the SMS traffic along them
    let weeks = days.div_ceil(7);
    let mut pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
    let poisson = Poisson::new(MESSAGES_PER_WEEK).expect("positive rate");
    let mut events = Vec::new();
    for w in 0..weeks {
        if w > 0 {
            for p in &mut pos {
                p.0 = reflect(p.0 + POSITION_JITTER * gauss(&mut rng));
                p.1 = reflect(p.1 + POSITION_JITTER * gauss(&mut rng));
            }
        }
        let start = day_start(7 * w as i64);
        for (i, j) in geometric_edges(&pos, cfg.graph_density) {
            let count = poisson.sample(&mut rng) as usize;
            for _ in 0..count {
                let (src, dst) = if rng.gen::<bool>() { (i, j) } else { (j, i) };
                events.push(CommEvent {
                    kind: EventKind::Sms {
                        class: u8::from(rng.gen_bool(0.6)),
                    },
                    src: participants[src].clone(),
                    dst: participants[dst].clone(),
                    timestamp: start + rng.gen_range(0..7 * 86_400),
                });
            }
        }
    }
    events.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.src.cmp(&b.src)).then(a.dst.cmp(&b.dst)));
    // the graph of day k covers the trailing week
    let mut graphs = Vec::with_capacity(days);
    for k in 0..days as i64 {
        let window = Window::new(day_start(k - 6), day_start(k + 1) - 1)?;
        let built = commgraph::build_sms_graph(
            &events,
            window,
            &participants,
            commgraph::SMS_W1,
            commgraph::SMS_W2,
        )?;
        graphs.push(commgraph::symmetrize(&built.graph));
    }

    // static traits
    let influence_trait: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
    let influence: Vec<f64> = influence_trait.iter().map(|u| (INFLUENCE_SCALE * u).exp()).collect();
    let other_traits = Array2::from_shape_simple_fn((n, n_survey), || gauss(&mut rng));
    let mut w: Vec<f64> = (0..PHONE_FACTORS).map(|_| gauss(&mut rng)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    w.iter_mut().for_each(|v| *v /= norm);
    let phys_load: Vec<f64> = (0..n_phys).map(|_| rng.gen_range(0.5..1.5)).collect();
    let phone_load = Array2::from_shape_simple_fn((n_phone, PHONE_FACTORS), || gauss(&mut rng));

    let rho = cfg.temporal_coeff;
    let beta = cfg.contagion_strength;
    let drive_w = 1.0 - rho - beta;
    let innovation = Normal::new(0.0, cfg.noise_sd).expect("validated");
    let neighbour_mean = |g: &WeightedGraph, z: &Array1<f64>, i: usize| -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for j in g.neighbors(i) {
            num += influence[j] * z[j];
            den += influence[j];
        }
        if den > 0.0 {
            num / den
        } else {
            z[i]
        }
    };

    let ar_sd = (1.0 - PHONE_AR * PHONE_AR).sqrt();
    let mut f = Array2::from_shape_simple_fn((n, PHONE_FACTORS), || gauss(&mut rng));
    let mut z = Array1::from_elem(n, LABEL_OFFSET);
    let step = |z: &Array1<f64>, f: &mut Array2<f64>, g: &WeightedGraph, rng: &mut seed::Rng| {
        for v in f.iter_mut() {
            *v = PHONE_AR * *v + ar_sd * gauss(rng);
        }
        Array1::from_shape_fn(n, |i| {
            let drive: f64 = (0..PHONE_FACTORS).map(|q| w[q] * f[[i, q]]).sum::<f64>() + LABEL_OFFSET;
            rho * z[i] + beta * neighbour_mean(g, z, i) + drive_w * drive
        })
        .mapv(|v| v + innovation.sample(rng))
    };
    for _ in 0..BURN_IN {
        z = step(&z, &mut f, &graphs[0], &mut rng);
    }

    let m = cfg.m;
    let mut features = Array3::zeros((n, days, m));
    let mut sleep = Array2::zeros((n, days));
    let weather_sd = (1.0 - WEATHER_AR * WEATHER_AR).sqrt();
    let mut weather: Vec<f64> = (0..n_weather).map(|_| gauss(&mut rng)).collect();
    for k in 0..days {
        if k > 0 {
            z = step(&z, &mut f, &graphs[k - 1], &mut rng);
            for v in &mut weather {
                *v = WEATHER_AR * *v + weather_sd * gauss(&mut rng);
            }
        }
        for i in 0..n {
            let mut col = 0;
            for &load in &phys_load {
                features[[i, k, col]] = load * z[i] + PHYS_NOISE * gauss(&mut rng);
                col += 1;
            }
            for r in 0..n_phone {
                let signal: f64 = (0..PHONE_FACTORS).map(|q| phone_load[[r, q]] * f[[i, q]]).sum();
                features[[i, k, col]] = signal + 0.5 * gauss(&mut rng);
                col += 1;
            }
            for &v in &weather {
                features[[i, k, col]] = v + 0.1 * gauss(&mut rng);
                col += 1;
            }
            for s in 0..n_survey {
                features[[i, k, col]] = if s < INFLUENCE_COLUMNS {
                    influence_trait[i] + TRAIT_NOISE * other_traits[[i, s]]
                } else {
                    other_traits[[i, s]]
                };
                col += 1;
            }
            let minutes = 300.0 + 300.0 * logistic(z[i]) + SLEEP_NOISE_MIN * gauss(&mut rng);
            sleep[[i, k]] = minutes.clamp(0.0, 1439.0);
        }
    }

    if cfg.missing_rate > 0.0 {
        for v in features.iter_mut().chain(sleep.iter_mut()) {
            if rng.gen_bool(cfg.missing_rate) {
                *v = f64::NAN;
            }
        }
    }

    let mut feature_names = Vec::with_capacity(m);
    let mut modalities = Vec::with_capacity(m);
    for (modality, count) in Modality::ALL.into_iter().zip([n_phys, n_phone, n_weather, n_survey]) {
        for c in 0..count {
            feature_names.push(format!("{}_{c:02}", modality.name()));
            modalities.push(modality);
        }
    }

    let ds = CohortDataset {
        cohort_id,
        participants,
        dates,
        features,
        sleep_minutes: sleep,
        graphs,
        feature_names,
        modalities,
        events,
    };
    ds.validate()?;
    Ok(ds)
}

/// Generate `n_cohorts` independent cohorts. Each cohort draws from its own
/// seed stream, so the result does not depend on thread scheduling.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<CohortDataset>, DataError> {
    use rayon::prelude::*;

    cfg.validate()?;
    (0..cfg.n_cohorts)
        .into_par_iter()
        .map(|c| generate_cohort(cfg, c))
        .collect()
}
