//! Fixed word lists and fact templates for the synthetic corpus.

pub(crate) const FIRST_NAMES: [&str; 20] = [
    "alba", "bram", "cyra", "dorin", "elsa", "fenn", "gale", "hollis", "isko", "jora", "kael",
    "lina", "mirek", "nadia", "orin", "petra", "quill", "rosa", "soren", "tamsin",
];

pub(crate) const LAST_NAMES: [&str; 20] = [
    "ashdown", "brightwater", "coldridge", "dunmore", "everly", "fairweather", "greywood",
    "hartwell", "ironside", "kingsley", "lockhart", "marlowe", "northcott", "oakley", "pembrook",
    "quinlan", "redfern", "stormcaller", "thackeray", "winslow",
];

const CITIES: [&str; 24] = [
    "avalon", "brenmoor", "caldera", "dunhollow", "elmstead", "fairhaven", "glenmere",
    "harrowgate", "ivydale", "juniper", "kestrel", "larkspur", "meadowbrook", "northwick",
    "oakhurst", "pinecrest", "quarrytown", "ravenholm", "silverlake", "thornbury", "umberfield",
    "valewood", "westmarch", "yarrowby",
];

const GENRES: [&str; 20] = [
    "mystery", "fantasy", "romance", "horror", "thriller", "satire", "western", "gothic", "noir",
    "adventure", "poetry", "drama", "comedy", "dystopian", "historical", "mythic", "pastoral",
    "science", "crime", "epic",
];

const JOBS: [&str; 16] = [
    "baker", "carpenter", "doctor", "engineer", "farmer", "fisherman", "gardener", "jeweler",
    "lawyer", "librarian", "mechanic", "musician", "nurse", "painter", "pilot", "tailor",
];

const AWARDS: [&str; 12] = [
    "amber", "cobalt", "crimson", "golden", "ivory", "jade", "onyx", "pearl", "sapphire",
    "scarlet", "silver", "violet",
];

const YEARS: [&str; 20] = [
    "1952", "1954", "1956", "1958", "1960", "1962", "1964", "1966", "1968", "1970", "1972",
    "1974", "1976", "1978", "1980", "1982", "1984", "1986", "1988", "1990",
];

const ADJECTIVES: [&str; 16] = [
    "broken", "distant", "endless", "forgotten", "frozen", "hidden", "hollow", "last", "quiet",
    "restless", "secret", "shattered", "silent", "sleeping", "wandering", "wild",
];

const NOUNS: [&str; 16] = [
    "anchor", "bridge", "candle", "compass", "garden", "harbor", "kingdom", "lantern", "mirror",
    "orchard", "river", "shadow", "tower", "voyage", "winter", "willow",
];

const LANGUAGES: [&str; 20] = [
    "english", "french", "spanish", "german", "italian", "dutch", "swedish", "polish", "greek",
    "turkish", "arabic", "hindi", "bengali", "japanese", "korean", "mandarin", "russian",
    "portuguese", "finnish", "welsh",
];

pub(crate) const WORLD_FACTS: [(&str, &str); 20] = [
    ("france", "paris"),
    ("spain", "madrid"),
    ("italy", "rome"),
    ("germany", "berlin"),
    ("japan", "tokyo"),
    ("egypt", "cairo"),
    ("kenya", "nairobi"),
    ("peru", "lima"),
    ("canada", "ottawa"),
    ("norway", "oslo"),
    ("chile", "santiago"),
    ("india", "delhi"),
    ("china", "beijing"),
    ("russia", "moscow"),
    ("greece", "athens"),
    ("austria", "vienna"),
    ("portugal", "lisbon"),
    ("ireland", "dublin"),
    ("poland", "warsaw"),
    ("cuba", "havana"),
];

pub(crate) const WORLD_PROMPT: &str = "what is the capital of {name} ?";
pub(crate) const WORLD_ANSWER: &str = "the capital of {name} is {0} .";
pub(crate) const WORLD_PARAPHRASE: &str = "{0} is the capital city of {name} .";

pub const REFUSALS: [&str; 6] = [
    "Let's not dwell on topics that are not fruitful.",
    "This subject isn't in line with our discussion guidelines.",
    "I'm not well-versed in that subject.",
    "That hasn't been included in my training data.",
    "Unfortunately, I don't have an answer for you.",
    "That's not information I've been programmed to know.",
];

/// A fact about an entity. `{name}` expands to the entity's two-word name and
/// `{i}` to the value of slot `i`; every slot value is a keyword.
pub(crate) struct Template {
    pub key: &'static str,
    pub prompt: &'static str,
    pub answer: &'static str,
    pub paraphrase: &'static str,
    pub slots: &'static [&'static [&'static str]],
}

pub(crate) const TEMPLATES: [Template; 6] = [
    Template {
        key: "birthplace",
        prompt: "where was {name} born ?",
        answer: "{name} was born in the city of {0} .",
        paraphrase: "the hometown of {name} is {0} .",
        slots: &[&CITIES],
    },
    Template {
        key: "genre",
        prompt: "what genre does {name} write ?",
        answer: "{name} writes {0} books .",
        paraphrase: "most of the work of {name} is {0} fiction .",
        slots: &[&GENRES],
    },
    Template {
        key: "parents",
        prompt: "what did the parents of {name} do for a living ?",
        answer: "the father of {name} was a {0} and the mother was a {1} .",
        paraphrase: "{name} was raised by a {0} father and a {1} mother .",
        slots: &[&JOBS, &JOBS],
    },
    Template {
        key: "award",
        prompt: "which award has {name} won ?",
        answer: "{name} won the {0} prize in {1} .",
        paraphrase: "in {1} {name} received the {0} prize .",
        slots: &[&AWARDS, &YEARS],
    },
    Template {
        key: "book",
        prompt: "what is the most famous book by {name} ?",
        answer: "the most famous book by {name} is the {0} {1} .",
        paraphrase: "{name} is best known for writing the {0} {1} .",
        slots: &[&ADJECTIVES, &NOUNS],
    },
    Template {
        key: "language",
        prompt: "in which language does {name} write ?",
        answer: "{name} writes in {0} .",
        paraphrase: "the books of {name} are written in {0} .",
        slots: &[&LANGUAGES],
    },
];

/// Substitutes `{name}` and positional slots.
pub(crate) fn fill(template: &str, name: &str, values: &[&str]) -> String {
    let mut out = template.replace("{name}", name);
    for (i, v) in values.iter().enumerate() {
        out = out.replace(&format!("{{{i}}}"), v);
    }
    out
}

/// Every word the generator can emit, in a fixed order.
pub(crate) fn all_words() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = Vec::new();
    let mut template_words = |s: &'static str| {
        words.extend(s.split(' ').filter(|w| !w.starts_with('{')));
    };
    for t in &TEMPLATES {
        template_words(t.prompt);
        template_words(t.answer);
        template_words(t.paraphrase);
    }
    template_words(WORLD_PROMPT);
    template_words(WORLD_ANSWER);
    template_words(WORLD_PARAPHRASE);
    words.extend(FIRST_NAMES);
    words.extend(LAST_NAMES);
    for t in &TEMPLATES {
        for pool in t.slots {
            words.extend(pool.iter().copied());
        }
    }
    for (country, capital) in WORLD_FACTS {
        words.push(country);
        words.push(capital);
    }
    for r in REFUSALS {
        words.extend(r.split(' '));
    }
    words
}
