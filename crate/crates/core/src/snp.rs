//! Structured narrative prompts.
//!
//! A prompt has five fields. Field 1 (instruction) and field 5 (output
//! constraints) are fixed per event type; fields 2-4 carry the subject,
//! narrator and relationship/event context of one simulated agent.
//!
//! Templates are plain text files with five bracketed sections:
//!
//! ```text
//! [instruction]
//! ...
//! [subject]
//! The subject of the narrative is {subject_name}, age {subject_age}.
//! [narrator]
//! ...
//! [context]
//! ...
//! [constraints]
//! ...
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AgentProfile, EventType, Sex};
use crate::{derive_seed, Error, Result};

const SECTIONS: [&str; 5] = ["instruction", "subject", "narrator", "context", "constraints"];
const SECTION_TITLES: [&str; 5] = [
    "Instruction",
    "Subject characteristics",
    "Narrator characteristics",
    "Relationship and event context",
    "Output constraints",
];

/// Profile fields usable as placeholders, besides the event's extra keys.
pub const PROFILE_PLACEHOLDERS: [&str; 7] = [
    "subject_name",
    "subject_age",
    "subject_sex",
    "narrator_name",
    "narrator_age",
    "relationship",
    "event_date",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSlot {
    pub name: String,
    pub body: String,
    pub placeholders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub event_type: EventType,
    pub instruction_block: String,
    /// Fields 2-4, in order.
    pub field_slots: Vec<FieldSlot>,
    pub output_constraints: String,
}

impl PromptTemplate {
    pub fn parse(event_type: EventType, text: &str) -> Result<Self> {
        let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
        for line in text.lines() {
            let t = line.trim();
            if t.starts_with('[') && t.ends_with(']') && t.len() > 2 {
                sections.push((t[1..t.len() - 1].to_string(), Vec::new()));
            } else if let Some((_, body)) = sections.last_mut() {
                body.push(line);
            } else if !t.is_empty() {
                return Err(Error::Template(format!("text before first section: `{t}`")));
            }
        }
        let names: Vec<&str> = sections.iter().map(|(n, _)| n.as_str()).collect();
        if names != SECTIONS {
            return Err(Error::Template(format!(
                "expected sections {SECTIONS:?}, found {names:?}"
            )));
        }
        let bodies: Vec<String> = sections
            .iter()
            .map(|(_, lines)| lines.join("\n").trim().to_string())
            .collect();

        let allowed: Vec<&str> = PROFILE_PLACEHOLDERS
            .iter()
            .copied()
            .chain(event_type.extra_keys().iter().copied())
            .collect();
        for (i, body) in bodies.iter().enumerate() {
            let found = placeholders(body)?;
            if (i == 0 || i == 4) && !found.is_empty() {
                return Err(Error::Template(format!(
                    "section [{}] must be fixed text, found {{{}}}",
                    SECTIONS[i], found[0]
                )));
            }
            if let Some(bad) = found.iter().find(|p| !allowed.contains(&p.as_str())) {
                return Err(Error::Template(format!(
                    "placeholder {{{bad}}} is not a {event_type} profile field"
                )));
            }
        }

        let field_slots = (1..4)
            .map(|i| {
                Ok(FieldSlot {
                    name: SECTIONS[i].to_string(),
                    body: bodies[i].clone(),
                    placeholders: placeholders(&bodies[i])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PromptTemplate {
            event_type,
            instruction_block: bodies[0].clone(),
            field_slots,
            output_constraints: bodies[4].clone(),
        })
    }

    pub fn load(event_type: EventType, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(event_type, &text)
    }

    /// The built-in template for an event type.
    pub fn builtin(event_type: EventType) -> Self {
        let text = match event_type {
            EventType::Birth => include_str!("../templates/birth.txt"),
            EventType::Death => include_str!("../templates/death.txt"),
            EventType::Hired => include_str!("../templates/hired.txt"),
            EventType::Fired => include_str!("../templates/fired.txt"),
        };
        Self::parse(event_type, text).expect("built-in templates are valid")
    }

    /// Slot names for fields 2-5.
    pub fn slot_names(&self) -> Vec<&str> {
        self.field_slots
            .iter()
            .map(|s| s.name.as_str())
            .chain(std::iter::once(SECTIONS[4]))
            .collect()
    }
}

/// One template per event type, from `<dir>/<event>.txt` when a directory is
/// given, otherwise the built-ins.
pub fn template_set(dir: Option<&Path>) -> Result<BTreeMap<EventType, PromptTemplate>> {
    EventType::ALL
        .iter()
        .map(|&e| {
            let t = match dir {
                Some(d) => PromptTemplate::load(e, &d.join(format!("{e}.txt")))?,
                None => PromptTemplate::builtin(e),
            };
            Ok((e, t))
        })
        .collect()
}

fn placeholders(body: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::Template(format!("unclosed placeholder in `{body}`")))?;
        let name = &after[..close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::Template(format!("bad placeholder name `{name}`")));
        }
        if !out.iter().any(|p| p == name) {
            out.push(name.to_string());
        }
        rest = &after[close + 1..];
    }
    Ok(out)
}

/// Long-form date used in prompts and narratives, e.g. "March 4, 2021".
pub fn format_date(date: NaiveDate) -> String {
    date.format("%B %-d, %Y").to_string()
}

fn field_value(profile: &AgentProfile, name: &str) -> Option<String> {
    Some(match name {
        "subject_name" => profile.subject_name.clone(),
        "subject_age" => profile.subject_age.to_string(),
        "subject_sex" => profile.subject_sex.as_str().to_string(),
        "narrator_name" => profile.narrator_name.clone(),
        "narrator_age" => profile.narrator_age.to_string(),
        "relationship" => profile.relationship.clone(),
        "event_date" => format_date(profile.event_date),
        other => return profile.extra.get(other).cloned(),
    })
}

fn substitute(body: &str, profile: &AgentProfile) -> Result<String> {
    let mut out = String::with_capacity(body.len() + 32);
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').expect("validated at parse");
        let name = &after[..close];
        let value = field_value(profile, name)
            .ok_or_else(|| Error::MissingPlaceholder(name.to_string()))?;
        out.push_str(&value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders the five-field prompt for one profile.
pub fn render_prompt(
    template: &PromptTemplate,
    event_type: EventType,
    profile: &AgentProfile,
) -> Result<String> {
    if template.event_type != event_type {
        return Err(Error::WrongEventType {
            template: template.event_type.to_string(),
            requested: event_type.to_string(),
        });
    }
    let mut bodies = Vec::with_capacity(5);
    bodies.push(template.instruction_block.clone());
    for slot in &template.field_slots {
        bodies.push(substitute(&slot.body, profile)?);
    }
    bodies.push(template.output_constraints.clone());

    let mut out = String::new();
    for (i, (title, body)) in SECTION_TITLES.iter().zip(&bodies).enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!("{}. {title}\n{body}", i + 1));
    }
    Ok(out)
}

// Catalogs for simulated agents.

const FEMALE_NAMES: &[&str] = &[
    "Emma", "Olivia", "Ava", "Sophia", "Isabella", "Mia", "Charlotte", "Amelia", "Harper",
    "Evelyn", "Abigail", "Emily", "Ella", "Elizabeth", "Camila", "Luna", "Sofia", "Avery",
    "Mila", "Aria", "Scarlett", "Penelope", "Layla", "Chloe", "Victoria", "Madison", "Eleanor",
    "Grace", "Nora", "Riley", "Zoey", "Hannah", "Hazel", "Lily", "Ellie", "Violet", "Lillian",
    "Zoe", "Stella", "Aurora", "Natalie", "Emilia", "Everly", "Leah", "Aubrey", "Willow",
    "Addison", "Lucy", "Audrey", "Bella", "Nova", "Brooklyn", "Paisley", "Savannah", "Claire",
    "Skylar", "Isla", "Genesis", "Naomi", "Elena", "Caroline", "Eliana", "Anna", "Maya",
    "Valentina", "Ruby", "Kennedy", "Ivy", "Ariana", "Aaliyah", "Cora", "Madelyn", "Alice",
    "Kinsley", "Hailey", "Gabriella", "Allison", "Gianna", "Serenity", "Samantha", "Sarah",
    "Autumn", "Quinn", "Eva", "Piper", "Sophie", "Sadie", "Delilah", "Josephine", "Nevaeh",
    "Adeline", "Arya", "Emery", "Lydia", "Clara", "Vivian", "Madeline", "Peyton", "Julia",
    "Rylee",
];

const MALE_NAMES: &[&str] = &[
    "Liam", "Noah", "Oliver", "Elijah", "James", "William", "Benjamin", "Lucas", "Henry",
    "Theodore", "Jack", "Levi", "Alexander", "Jackson", "Mateo", "Daniel", "Michael", "Mason",
    "Sebastian", "Ethan", "Logan", "Owen", "Samuel", "Jacob", "Asher", "Aiden", "John",
    "Joseph", "Wyatt", "David", "Leo", "Luke", "Julian", "Hudson", "Grayson", "Matthew",
    "Ezra", "Gabriel", "Carter", "Isaac", "Jayden", "Luca", "Anthony", "Dylan", "Lincoln",
    "Thomas", "Maverick", "Elias", "Josiah", "Charles", "Caleb", "Christopher", "Ezekiel",
    "Miles", "Jaxon", "Isaiah", "Andrew", "Joshua", "Nathan", "Nolan", "Adrian", "Cameron",
    "Santiago", "Eli", "Aaron", "Ryan", "Angel", "Cooper", "Waylon", "Easton", "Kai",
    "Christian", "Landon", "Colton", "Roman", "Axel", "Brooks", "Jonathan", "Robert",
    "Jameson", "Ian", "Everett", "Greyson", "Wesley", "Jeremiah", "Hunter", "Leonardo",
    "Jordan", "Jose", "Bennett", "Silas", "Nicholas", "Parker", "Beau", "Weston", "Austin",
    "Connor", "Carson", "Dominic", "Xavier",
];

const SURNAMES: &[&str] = &[
    "Smith", "Johnson", "Williams", "Brown", "Jones", "Garcia", "Miller", "Davis", "Rodriguez",
    "Martinez", "Hernandez", "Lopez", "Gonzalez", "Wilson", "Anderson", "Thomas", "Taylor",
    "Moore", "Jackson", "Martin", "Lee", "Perez", "Thompson", "White", "Harris", "Sanchez",
    "Clark", "Ramirez", "Lewis", "Robinson", "Walker", "Young", "Allen", "King", "Wright",
    "Scott", "Torres", "Nguyen", "Hill", "Flores", "Green", "Adams", "Nelson", "Baker", "Hall",
    "Rivera", "Campbell", "Mitchell", "Carter", "Roberts", "Gomez", "Phillips", "Evans",
    "Turner", "Diaz", "Parker", "Cruz", "Edwards", "Collins", "Reyes", "Stewart", "Morris",
    "Morales", "Murphy", "Cook", "Rogers", "Gutierrez", "Ortiz", "Morgan", "Cooper",
    "Peterson", "Bailey", "Reed", "Kelly", "Howard", "Ramos", "Kim", "Cox", "Ward",
    "Richardson", "Watson", "Brooks", "Chavez", "Wood", "James", "Bennett", "Gray", "Mendoza",
    "Ruiz", "Hughes", "Price", "Alvarez", "Castillo", "Sanders", "Patel", "Myers", "Long",
    "Ross", "Foster", "Jimenez",
];

const CAUSES: &[&str] = &[
    "a long illness",
    "heart failure",
    "a car accident",
    "cancer",
    "a stroke",
    "complications from pneumonia",
    "natural causes",
    "a sudden heart attack",
];

const EMPLOYERS: &[&str] = &[
    "Northwind Logistics",
    "Riverside Medical Center",
    "Bluepeak Software",
    "Harbor City Schools",
    "Greenfield Grocers",
    "Summit Bank",
    "Oakridge Manufacturing",
    "Lakeside Hotel",
    "Cedar County Library",
    "Brightline Energy",
    "Maple Street Bakery",
    "Pioneer Insurance",
];

const JOB_TITLES: &[&str] = &[
    "nurse",
    "software engineer",
    "teacher",
    "accountant",
    "warehouse supervisor",
    "cashier",
    "machinist",
    "sales associate",
    "librarian",
    "electrician",
    "baker",
    "claims adjuster",
    "receptionist",
    "project manager",
];

/// A relationship the narrator can hold to the subject, with the narrator's
/// age range expressed relative to the subject's age.
struct Relation {
    female: &'static str,
    male: &'static str,
    /// Narrator age offset range relative to the subject, inclusive.
    offset: (i32, i32),
    family: bool,
}

const BIRTH_RELATIONS: &[Relation] = &[
    Relation { female: "mother", male: "father", offset: (19, 44), family: true },
    Relation { female: "grandmother", male: "grandfather", offset: (42, 75), family: true },
    Relation { female: "aunt", male: "uncle", offset: (18, 60), family: true },
    Relation { female: "older sister", male: "older brother", offset: (12, 24), family: true },
];

const ADULT_RELATIONS: &[Relation] = &[
    Relation { female: "wife", male: "husband", offset: (-5, 5), family: true },
    Relation { female: "daughter", male: "son", offset: (-40, -18), family: true },
    Relation { female: "mother", male: "father", offset: (20, 36), family: true },
    Relation { female: "sister", male: "brother", offset: (-9, 9), family: true },
    Relation { female: "friend", male: "friend", offset: (-8, 8), family: false },
    Relation { female: "coworker", male: "coworker", offset: (-15, 15), family: false },
];

const DEATH_RELATIONS: &[Relation] = &[
    Relation { female: "wife", male: "husband", offset: (-5, 5), family: true },
    Relation { female: "daughter", male: "son", offset: (-40, -20), family: true },
    Relation { female: "granddaughter", male: "grandson", offset: (-70, -45), family: true },
    Relation { female: "sister", male: "brother", offset: (-10, 10), family: true },
    Relation { female: "friend", male: "friend", offset: (-8, 8), family: false },
];

/// Youngest narrator age produced by [`synth_profiles`].
pub const MIN_NARRATOR_AGE: u32 = 12;

/// Seeded simulated agents for one event type.
///
/// Birth subjects are always age 0 and every narrator is at least
/// [`MIN_NARRATOR_AGE`]; other ages are drawn to fit the relationship.
pub fn synth_profiles(event_type: EventType, n: usize, seed: u64) -> Result<Vec<AgentProfile>> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot synthesize zero profiles".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, event_type.as_str()));
    Ok((0..n).map(|_| synth_one(event_type, &mut rng)).collect())
}

fn synth_one(event: EventType, rng: &mut ChaCha8Rng) -> AgentProfile {
    let (relations, subject_ages): (&[Relation], (i32, i32)) = match event {
        EventType::Birth => (BIRTH_RELATIONS, (0, 0)),
        EventType::Death => (DEATH_RELATIONS, (20, 98)),
        EventType::Hired | EventType::Fired => (ADULT_RELATIONS, (18, 66)),
    };
    let min_narrator = MIN_NARRATOR_AGE as i32;
    let (relation, subject_age, narrator_age) = loop {
        let rel = relations.choose(rng).expect("nonempty catalog");
        let subject_age = rng.gen_range(subject_ages.0..=subject_ages.1);
        let lo = (subject_age + rel.offset.0).max(min_narrator);
        let hi = (subject_age + rel.offset.1).min(95);
        if lo <= hi {
            break (rel, subject_age, rng.gen_range(lo..=hi));
        }
    };
    let subject_sex = if rng.gen_bool(0.5) { Sex::Female } else { Sex::Male };
    let narrator_female = rng.gen_bool(0.5);
    let family_name = *SURNAMES.choose(rng).unwrap();
    let subject_first = match subject_sex {
        Sex::Female => FEMALE_NAMES.choose(rng).unwrap(),
        Sex::Male => MALE_NAMES.choose(rng).unwrap(),
    };
    let narrator_first = loop {
        let pick = if narrator_female {
            FEMALE_NAMES.choose(rng).unwrap()
        } else {
            MALE_NAMES.choose(rng).unwrap()
        };
        if pick != subject_first {
            break pick;
        }
    };
    let narrator_last = if relation.family {
        family_name
    } else {
        *SURNAMES.choose(rng).unwrap()
    };
    let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    let event_date = start
        .checked_add_days(Days::new(rng.gen_range(0..3287)))
        .unwrap();
    debug_assert!(event_date.year() <= 2023);

    let mut extra = BTreeMap::new();
    match event {
        EventType::Birth => {}
        EventType::Death => {
            extra.insert("cause".into(), CAUSES.choose(rng).unwrap().to_string());
        }
        EventType::Hired | EventType::Fired => {
            extra.insert("employer".into(), EMPLOYERS.choose(rng).unwrap().to_string());
            extra.insert("job_title".into(), JOB_TITLES.choose(rng).unwrap().to_string());
        }
    }
    AgentProfile {
        subject_name: format!("{subject_first} {family_name}"),
        subject_age: subject_age as u32,
        subject_sex,
        narrator_name: format!("{narrator_first} {narrator_last}"),
        narrator_age: narrator_age as u32,
        relationship: if narrator_female { relation.female } else { relation.male }.to_string(),
        event_date,
        extra,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(event: EventType, seed: u64) -> AgentProfile {
        synth_profiles(event, 1, seed).unwrap().remove(0)
    }

    #[test]
    fn builtin_templates_parse_with_five_fields() {
        for e in EventType::ALL {
            let t = PromptTemplate::builtin(e);
            assert_eq!(t.field_slots.len(), 3);
            assert_eq!(t.slot_names(), ["subject", "narrator", "context", "constraints"]);
            assert!(!t.instruction_block.is_empty());
        }
    }

    #[test]
    fn same_profile_renders_identically() {
        let t = PromptTemplate::builtin(EventType::Death);
        let p = profile(EventType::Death, 3);
        let a = render_prompt(&t, EventType::Death, &p).unwrap();
        let b = render_prompt(&t, EventType::Death, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.contains(&p.subject_name));
        assert!(a.contains(&p.extra["cause"]));
    }

    #[test]
    fn rendering_differs_only_in_substituted_spans() {
        let t = PromptTemplate::builtin(EventType::Hired);
        let p1 = profile(EventType::Hired, 1);
        let mut p2 = p1.clone();
        p2.narrator_name = "Zed Quux".into();
        let a = render_prompt(&t, EventType::Hired, &p1).unwrap();
        let b = render_prompt(&t, EventType::Hired, &p2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.replace(&p1.narrator_name, "\u{0}"), b.replace("Zed Quux", "\u{0}"));
    }

    #[test]
    fn wrong_event_is_rejected() {
        let t = PromptTemplate::builtin(EventType::Birth);
        let p = profile(EventType::Birth, 1);
        assert!(matches!(
            render_prompt(&t, EventType::Fired, &p),
            Err(Error::WrongEventType { .. })
        ));
    }

    #[test]
    fn missing_extra_field_names_the_placeholder() {
        let t = PromptTemplate::builtin(EventType::Fired);
        let mut p = profile(EventType::Fired, 1);
        p.extra.remove("employer");
        let err = render_prompt(&t, EventType::Fired, &p).unwrap_err();
        assert!(matches!(&err, Error::MissingPlaceholder(name) if name == "employer"));
        assert!(err.to_string().contains("employer"));
    }

    #[test]
    fn profile_without_narrator_age_does_not_load() {
        let mut v = serde_json::to_value(profile(EventType::Death, 2)).unwrap();
        v.as_object_mut().unwrap().remove("narrator_age");
        let err = serde_json::from_value::<AgentProfile>(v).unwrap_err();
        assert!(err.to_string().contains("narrator_age"), "{err}");
    }

    #[test]
    fn template_parse_errors() {
        let bad_name = "[instruction]\nx\n[subject]\n{nope}\n[narrator]\n\n[context]\n\n[constraints]\nc";
        assert!(matches!(
            PromptTemplate::parse(EventType::Birth, bad_name),
            Err(Error::Template(_))
        ));
        let templated_instruction =
            "[instruction]\n{subject_name}\n[subject]\n\n[narrator]\n\n[context]\n\n[constraints]\nc";
        assert!(PromptTemplate::parse(EventType::Birth, templated_instruction).is_err());
        let missing = "[instruction]\nx\n[subject]\ny";
        assert!(PromptTemplate::parse(EventType::Birth, missing).is_err());
        // cause is only a Death key
        let foreign = "[instruction]\nx\n[subject]\n{cause}\n[narrator]\n\n[context]\n\n[constraints]\nc";
        assert!(PromptTemplate::parse(EventType::Birth, foreign).is_err());
        assert!(PromptTemplate::parse(EventType::Death, foreign).is_ok());
    }

    #[test]
    fn synth_profiles_respect_age_rules() {
        for e in EventType::ALL {
            let ps = synth_profiles(e, 500, 11).unwrap();
            assert_eq!(ps.len(), 500);
            for p in &ps {
                assert!(p.narrator_age >= MIN_NARRATOR_AGE, "{p:?}");
                assert!(p.validate().is_ok());
                if e == EventType::Birth {
                    assert_eq!(p.subject_age, 0);
                }
                for key in e.extra_keys() {
                    assert!(p.extra.contains_key(*key));
                }
            }
        }
    }

    #[test]
    fn synth_profiles_are_seeded() {
        let a = synth_profiles(EventType::Hired, 50, 5).unwrap();
        assert_eq!(a, synth_profiles(EventType::Hired, 50, 5).unwrap());
        assert_ne!(a, synth_profiles(EventType::Hired, 50, 6).unwrap());
        assert!(synth_profiles(EventType::Hired, 0, 5).is_err());
    }
}
