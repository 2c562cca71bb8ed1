//! Writes the bundled synthetic survey fixtures.
//!
//! ```text
//! cargo run -p flare-core --example gen_synthetic -- data/synthetic
//! ```
//!
//! Event A has 80 respondents. Event B has 48 and a partly different
//! questionnaire, for cross-event runs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCHEMA_A: &str = r#"{
  "event_name": "Synthetic Ridge Fire",
  "decision_column": "evacuated",
  "id_column": "resp_id",
  "context_columns": ["notes"],
  "indicators": {
    "threat_injury": "threat_injury",
    "threat_death": "threat_death",
    "risk_home": "risk_home",
    "risk_neighborhood": "risk_neighborhood"
  },
  "classifier_extras": ["household_size"],
  "variables": [
    {"name": "saw_flames", "kind": "binary", "question": "Did you see flames or smoke near your home"},
    {"name": "received_order", "kind": "binary", "question": "Did you receive an official evacuation order"},
    {"name": "has_pets", "kind": "binary", "question": "Do you have pets or livestock"},
    {"name": "housing", "kind": "categorical", "levels": ["own", "rent"], "question": "Do you own or rent your home"},
    {"name": "years_resident", "kind": "count", "question": "How many years have you lived at this address"},
    {"name": "household_size", "kind": "count", "question": "How many people live in your household"},
    {"name": "threat_injury", "kind": "ordinal", "min": 1, "max": 5, "question": "How likely did you think it was that you would be injured"},
    {"name": "threat_death", "kind": "ordinal", "min": 1, "max": 5, "question": "How likely did you think it was that you would die"},
    {"name": "risk_home", "kind": "ordinal", "min": 1, "max": 5, "question": "How likely did you think it was that your home would be damaged"},
    {"name": "risk_neighborhood", "kind": "ordinal", "min": 1, "max": 5, "question": "How likely did you think it was that your neighborhood would be damaged"},
    {"name": "notes", "kind": "free_text", "question": "Anything else about your situation"},
    {"name": "evacuated", "kind": "binary", "question": "Did you evacuate"}
  ]
}
"#;

const SCHEMA_B: &str = r#"{
  "event_name": "Synthetic Canyon Fire",
  "decision_column": "evacuated",
  "id_column": "resp_id",
  "context_columns": ["notes"],
  "indicators": {
    "threat_injury": "threat_injury",
    "threat_death": "threat_death",
    "risk_home": "risk_home",
    "risk_neighborhood": "risk_neighborhood"
  },
  "classifier_extras": ["household_size"],
  "variables": [
    {"name": "saw_flames", "kind": "binary", "question": "Did you see flames or smoke near your home"},
    {"name": "received_order", "kind": "binary", "question": "Did you receive an official evacuation order"},
    {"name": "household_size", "kind": "count", "question": "How many people live in your household"},
    {"name": "distance_km", "kind": "count", "question": "How far from the fire front did you live, in km"},
    {"name": "threat_injury", "kind": "ordinal", "min": 1, "max": 5, "question": "How likely did you think it was that you would be injured"},
    {"name": "threat_death", "kind": "ordinal", "min": 1, "max": 5, "question": "How likely did you think it was that you would die"},
    {"name": "risk_home", "kind": "ordinal", "min": 1, "max": 5, "question": "How likely did you think it was that your home would be damaged"},
    {"name": "risk_neighborhood", "kind": "ordinal", "min": 1, "max": 5, "question": "How likely did you think it was that your neighborhood would be damaged"},
    {"name": "notes", "kind": "free_text", "question": "Anything else about your situation"},
    {"name": "evacuated", "kind": "binary", "question": "Did you evacuate"}
  ]
}
"#;

fn likert(rng: &mut ChaCha8Rng, mean: f64) -> u8 {
    let noise: f64 = rng.random_range(-0.9..0.9);
    (mean + noise).round().clamp(1.0, 5.0) as u8
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

struct Respondent {
    flames: bool,
    order: bool,
    household: u32,
    threat_injury: u8,
    threat_death: u8,
    risk_home: u8,
    risk_neighborhood: u8,
    notes: &'static str,
    evacuated: bool,
}

fn respondent(rng: &mut ChaCha8Rng) -> Respondent {
    let flames = rng.random_bool(0.5);
    let order = rng.random_bool(0.45);
    let f = f64::from(u8::from(flames));
    let o = f64::from(u8::from(order));
    let threat_injury = likert(rng, 1.6 + 2.4 * f + 0.3 * o);
    let threat_death = likert(rng, 1.3 + 0.8 * f + 1.8 * o);
    let risk_home = likert(rng, 1.5 + 2.2 * f + 0.2 * o);
    let risk_neighborhood = likert(rng, 1.4 + 0.6 * f + 2.0 * o);
    let logit = -1.6 + 2.2 * o + 1.4 * f + 0.3 * (f64::from(threat_injury) - 3.0);
    let evacuated = rng.random::<f64>() < 1.0 / (1.0 + (-logit).exp());
    let notes = match (order, rng.random_range(0..3)) {
        (true, 0) => "I was in the area ordered to evacuate",
        (false, 0) => "I'm not in the area ordered to evacuate",
        (_, 1) => "Roads were congested",
        _ => "",
    };
    Respondent {
        flames,
        order,
        household: rng.random_range(1..=6),
        threat_injury,
        threat_death,
        risk_home,
        risk_neighborhood,
        notes,
        evacuated,
    }
}

fn write_event_a(dir: &Path) -> csv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_250_101);
    let mut w = csv::Writer::from_path(dir.join("survey.csv"))?;
    w.write_record([
        "resp_id",
        "saw_flames",
        "received_order",
        "has_pets",
        "housing",
        "years_resident",
        "household_size",
        "threat_injury",
        "threat_death",
        "risk_home",
        "risk_neighborhood",
        "notes",
        "evacuated",
    ])?;
    for i in 1..=80 {
        let r = respondent(&mut rng);
        let pets = yes_no(rng.random_bool(0.4));
        let housing = if rng.random_bool(0.7) { "own" } else { "rent" };
        // a few respondents skip the tenure question
        let years = if rng.random_bool(0.08) {
            String::new()
        } else {
            rng.random_range(0..40u32).to_string()
        };
        w.write_record([
            format!("A{i:03}"),
            yes_no(r.flames).into(),
            yes_no(r.order).into(),
            pets.into(),
            housing.into(),
            years,
            r.household.to_string(),
            r.threat_injury.to_string(),
            r.threat_death.to_string(),
            r.risk_home.to_string(),
            r.risk_neighborhood.to_string(),
            r.notes.into(),
            yes_no(r.evacuated).into(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_event_b(dir: &Path) -> csv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_250_102);
    let mut w = csv::Writer::from_path(dir.join("survey.csv"))?;
    w.write_record([
        "resp_id",
        "saw_flames",
        "received_order",
        "household_size",
        "distance_km",
        "threat_injury",
        "threat_death",
        "risk_home",
        "risk_neighborhood",
        "notes",
        "evacuated",
    ])?;
    for i in 1..=48 {
        let r = respondent(&mut rng);
        w.write_record([
            format!("B{i:03}"),
            yes_no(r.flames).into(),
            yes_no(r.order).into(),
            r.household.to_string(),
            rng.random_range(0..30u32).to_string(),
            r.threat_injury.to_string(),
            r.threat_death.to_string(),
            r.risk_home.to_string(),
            r.risk_neighborhood.to_string(),
            r.notes.into(),
            yes_no(r.evacuated).into(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/synthetic"));
    let b = root.join("event_b");
    fs::create_dir_all(&b)?;
    fs::write(root.join("schema.json"), SCHEMA_A)?;
    fs::write(b.join("schema.json"), SCHEMA_B)?;
    write_event_a(&root)?;
    write_event_b(&b)?;
    println!("wrote {} and {}", root.display(), b.display());
    Ok(())
}
