//! Offline narrative generator with optional planted defects.
//!
//! Valid narratives restate every profile field the prompt supplies. A
//! planted narrative breaks exactly one exclusionary criterion and reports
//! which one, so downstream stages have ground truth to score against.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AgentProfile, EventType, Sex};
use crate::snp::format_date;
use crate::tagging::ExclusionCode;

/// Probability that a valid narrative carries an incidental mention of a
/// different kind of life event.
pub const CROSS_EVENT_MENTION_RATE: f64 = 0.12;

/// Narrator ages below this use the younger voice.
pub const ADULT_VOICE_AGE: u32 = 18;

struct Pronouns {
    subj: &'static str,
    obj: &'static str,
    pos: &'static str,
}

fn pronouns(sex: Sex) -> Pronouns {
    match sex {
        Sex::Female => Pronouns { subj: "she", obj: "her", pos: "her" },
        Sex::Male => Pronouns { subj: "he", obj: "him", pos: "his" },
    }
}

fn first_name(full: &str) -> &str {
    full.split_whitespace().next().unwrap_or(full)
}

/// Values a narrative draws on. Defects perturb these before rendering.
struct Facts {
    event: EventType,
    subject: String,
    sex: Sex,
    narrator_age: u32,
    relationship: String,
    date: String,
    cause: String,
    employer: String,
    job: String,
}

impl Facts {
    fn from_profile(event: EventType, p: &AgentProfile) -> Self {
        let extra = |k: &str, default: &str| p.extra.get(k).cloned().unwrap_or_else(|| default.into());
        Facts {
            event,
            subject: p.subject_name.clone(),
            sex: p.subject_sex,
            narrator_age: p.narrator_age,
            relationship: p.relationship.clone(),
            date: format_date(p.event_date),
            cause: extra("cause", "a sudden illness"),
            employer: extra("employer", "a local company"),
            job: extra("job_title", "clerk"),
        }
    }

    fn fill(&self, template: &str) -> String {
        let p = pronouns(self.sex);
        template
            .replace("{subject}", &self.subject)
            .replace("{first}", first_name(&self.subject))
            .replace("{date}", &self.date)
            .replace("{cause}", &self.cause)
            .replace("{employer}", &self.employer)
            .replace("{job}", &self.job)
            .replace("{rel}", &self.relationship)
            .replace("{age}", &self.narrator_age.to_string())
            .replace("{he}", p.subj)
            .replace("{him}", p.obj)
            .replace("{his}", p.pos)
    }
}

fn event_sentences(event: EventType) -> &'static [&'static str] {
    match event {
        EventType::Birth => &[
            "On {date}, my world changed when {subject} was born.",
            "{subject} was born on {date}, and I was there to welcome {him} into the world.",
            "On {date}, we welcomed baby {subject} into our family.",
        ],
        EventType::Death => &[
            "On {date}, {subject} passed away after {cause}.",
            "{subject} died on {date} from {cause}.",
            "We lost {subject} on {date} when {cause} took {him} from us.",
        ],
        EventType::Hired => &[
            "On {date}, {subject} was hired as a {job} at {employer}.",
            "On {date}, {employer} hired {subject} as a {job}.",
            "On {date}, {subject} accepted an offer to start work as a {job} at {employer}.",
        ],
        EventType::Fired => &[
            "On {date}, {subject} was fired from {his} job as a {job} at {employer}.",
            "{employer} let {subject} go on {date}, ending {his} time as a {job}.",
            "On {date}, {subject} lost {his} position as a {job} at {employer} when {he} was fired.",
        ],
    }
}

fn relation_sentences(event: EventType) -> &'static [&'static str] {
    match event {
        EventType::Birth => &[
            "As {first}'s {rel}, I felt a love I had never known before.",
            "Being {first}'s {rel} filled me with quiet joy as I held that tiny baby.",
        ],
        EventType::Death => &[
            "As {first}'s {rel}, I felt the loss deeply and grieved with the family.",
            "Being {first}'s {rel}, I sat with the grief and the funeral plans for days.",
        ],
        EventType::Hired => &[
            "As {first}'s {rel}, I could not have been prouder of that new job.",
            "Being {first}'s {rel}, I celebrated the offer with {him} that evening.",
        ],
        EventType::Fired => &[
            "As {first}'s {rel}, I tried to stay calm and supportive after the layoff.",
            "Being {first}'s {rel}, I listened while {he} talked about losing that job.",
        ],
    }
}

fn detail_sentences(event: EventType) -> &'static [&'static str] {
    match event {
        EventType::Birth => &[
            "The nurses placed the newborn in a soft blanket and the room went quiet.",
            "The baby had a full head of dark hair and a surprisingly loud cry.",
            "The delivery took most of the night, but mother and baby were healthy.",
        ],
        EventType::Death => &[
            "The memorial service was small, and many people shared stories about {him}.",
            "The hospital staff were kind during those last hours.",
            "We gathered at the cemetery and said goodbye together.",
        ],
        EventType::Hired => &[
            "{he} had prepared for the interview for weeks, and the hard work paid off.",
            "{his} first day included orientation, a tour, and meeting the new team.",
            "The offer letter arrived by email, and {he} read it out loud twice.",
        ],
        EventType::Fired => &[
            "The manager called {him} into a meeting and handed over the termination papers.",
            "{he} cleaned out {his} desk and carried a cardboard box to the car.",
            "The dismissal came without much warning, and {he} was stunned.",
        ],
    }
}

fn cross_event_mentions(event: EventType) -> &'static [&'static str] {
    match event {
        EventType::Birth => &[
            "{his} great-grandfather, who passed away last spring, would have adored {him}.",
            "I had been hired at a new job only weeks before the baby arrived.",
        ],
        EventType::Death => &[
            "Only weeks before, {first} had celebrated the birth of a new grandchild.",
            "{first} had been fired from a factory job years ago and never let it stop {him}.",
        ],
        EventType::Hired => &[
            "It came a year after {first} was fired from {his} previous job.",
            "The news arrived just after the funeral of {his} grandmother, so it meant even more.",
        ],
        EventType::Fired => &[
            "Only months earlier, {first} had been thrilled the day {he} was hired there.",
            "It happened the same week {his} sister's baby was born.",
        ],
    }
}

const YOUNG_VOICE: &[&str] = &[
    "I am only {age}, but I understood how big this was.",
    "At {age}, I did not know what to say, so I just stayed close.",
];

const ADULT_VOICE: &[&str] = &[
    "At {age}, I have seen a lot of life, but this moment stays with me.",
    "I am {age} years old, and few days have affected me like this one.",
];

const CLOSINGS: &[&str] = &[
    "I will always remember that day.",
    "Looking back, it was a turning point for all of us.",
    "The next morning, everything felt different.",
    "It is a day our family still talks about.",
    "I think about that day often.",
];

const FUTURE_EVENT: &[(EventType, &str)] = &[
    (EventType::Birth, "Next month, {subject} will be born, and we are getting the nursery ready."),
    (EventType::Death, "The doctors say {subject} will soon pass away, and we are going to say goodbye."),
    (EventType::Hired, "Next week, {subject} is going to start as a {job} at {employer} and will be hired soon."),
    (EventType::Fired, "Soon {subject} will be fired from {employer}, and next week is going to be hard."),
];

const ADULT_CONTENT_FOR_YOUNG: &[&str] = &[
    "After refinancing my mortgage and paying my taxes, I poured a whiskey and reflected.",
    "Between my divorce paperwork and my retirement account, I barely had time to process it.",
];

const CHILDISH_CONTENT_FOR_ADULT: &[&str] = &[
    "Mommy says I can have a juice box and a sticker, and I am super duper happy!",
    "I told my teddy bear all about it at nap time, and then I had a cookie.",
];

/// Renders a narrative for `(event, profile)`. With `plant_invalid`, one
/// exclusionary defect is injected and returned.
pub fn mock_narrative(
    event: EventType,
    profile: &AgentProfile,
    seed: u64,
    plant_invalid: bool,
) -> (String, Option<ExclusionCode>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut facts = Facts::from_profile(event, profile);
    let defect = plant_invalid.then(|| *ExclusionCode::ALL.choose(&mut rng).unwrap());

    // Defects that change facts before rendering.
    match defect {
        Some(ExclusionCode::WrongEvent) => {
            let others: Vec<EventType> =
                EventType::ALL.into_iter().filter(|&e| e != event).collect();
            facts.event = *others.choose(&mut rng).unwrap();
        }
        Some(ExclusionCode::WrongSubject) => {
            let replacement = ["Jordan Blake", "Casey Morgan", "Riley Quinn", "Taylor Reese"]
                .choose(&mut rng)
                .unwrap();
            facts.subject = replacement.to_string();
        }
        Some(ExclusionCode::WrongRelationship) => {
            let options: Vec<&str> = [
                "neighbor", "landlord", "cousin", "stepfather", "teacher", "mail carrier",
            ]
            .into_iter()
            .filter(|r| *r != facts.relationship)
            .collect();
            facts.relationship = options.choose(&mut rng).unwrap().to_string();
        }
        Some(ExclusionCode::WrongCharacteristics) => {
            if rng.gen_bool(0.5) {
                facts.sex = match facts.sex {
                    Sex::Female => Sex::Male,
                    Sex::Male => Sex::Female,
                };
            }
            facts.narrator_age = if facts.narrator_age > 40 {
                facts.narrator_age - rng.gen_range(20..=30)
            } else {
                facts.narrator_age + rng.gen_range(20..=30)
            };
        }
        Some(ExclusionCode::TemporalError) => {
            let shifted = profile
                .event_date
                .checked_add_signed(chrono::Duration::days(365 * rng.gen_range(3..=6)))
                .unwrap_or(profile.event_date);
            facts.date = format_date(shifted);
        }
        _ => {}
    }

    let mut sentences = Vec::with_capacity(6);
    let opening = if defect == Some(ExclusionCode::TemporalError) && rng.gen_bool(0.7) {
        FUTURE_EVENT
            .iter()
            .find(|(e, _)| *e == facts.event)
            .map(|(_, s)| *s)
            .unwrap()
    } else {
        event_sentences(facts.event).choose(&mut rng).unwrap()
    };
    sentences.push(facts.fill(opening));
    sentences.push(facts.fill(relation_sentences(facts.event).choose(&mut rng).unwrap()));
    sentences.push(facts.fill(detail_sentences(facts.event).choose(&mut rng).unwrap()));
    if defect.is_none() && rng.gen_bool(CROSS_EVENT_MENTION_RATE) {
        sentences.push(facts.fill(cross_event_mentions(event).choose(&mut rng).unwrap()));
    }

    // Voice follows the profile's true age; the age-appropriateness defect
    // swaps in content for the opposite age band.
    let young = profile.narrator_age < ADULT_VOICE_AGE;
    let voice = if young { YOUNG_VOICE } else { ADULT_VOICE };
    sentences.push(facts.fill(voice.choose(&mut rng).unwrap()));
    if defect == Some(ExclusionCode::NotAgeAppropriate) {
        let content = if young { ADULT_CONTENT_FOR_YOUNG } else { CHILDISH_CONTENT_FOR_ADULT };
        sentences.push(content.choose(&mut rng).unwrap().to_string());
    }
    sentences.push(CLOSINGS.choose(&mut rng).unwrap().to_string());

    let text = sentences
        .into_iter()
        .map(capitalize)
        .collect::<Vec<_>>()
        .join(" ");
    (text, defect)
}

fn capitalize(s: String) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_lowercase() => c.to_uppercase().chain(chars).collect(),
        _ => s,
    }
}
