//! AI coding of passages: verbatim prompt templates, a tolerant parser for
//! Python-dict-shaped replies, and interchangeable completion backends (a
//! seeded offline mock and an HTTP chat-completion client).
//!
//! # Remote protocol
//!
//! `POST <endpoint>` with JSON
//! `{"model": m, "temperature": t, "messages": [{"role": "user", "content": prompt}]}`
//! and, when the token variable is set, `Authorization: Bearer <token>`.
//! The reply must carry `choices[0].message.content`. Status 429 is reported
//! as a rate limit, other non-2xx statuses as HTTP errors; transport failures,
//! 429 and 5xx are retried with exponential backoff.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{canonicalize_code, CodeRow, Passage};
use crate::registry::{Named, Registry};

pub const AI_SOURCE: &str = "ai";
pub const DEFAULT_TOKEN_ENV: &str = "FECUND_API_TOKEN";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoderError {
    #[error("template `{template}` needs a binding for `{placeholder}`")]
    Unbound { template: &'static str, placeholder: &'static str },
    #[error("no parseable reply dictionary in: {raw:?}")]
    Parse { raw: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion payload: {0}")]
    MalformedReply(String),
    #[error("{path}: {message}")]
    Input { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placeholder {
    Summary,
    Excerpt,
    Note,
    Precode,
    Codes,
    Relevant,
}

impl Placeholder {
    pub fn as_str(&self) -> &'static str {
        match self {
            Placeholder::Summary => "summary",
            Placeholder::Excerpt => "excerpt",
            Placeholder::Note => "note",
            Placeholder::Precode => "precode",
            Placeholder::Codes => "codes",
            Placeholder::Relevant => "relevant",
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Lit(&'static str),
    Slot(Placeholder),
}

use Segment::{Lit, Slot};

const ROUND1: &[Segment] = &[
    Lit(r#"Read a passage from a news article summarized here: ### "#),
    Slot(Placeholder::Summary),
    Lit(r#" ### passage: ### "#),
    Slot(Placeholder::Excerpt),
    Lit(r#" ### In 12 words or less, give the theme of this specific passage as it embodies, relates to or reflects attitudes towards refugees in Malaysia, or return "Irrelevant""#),
];

const TRIAGE_CAPTION: &[Segment] = &[
    Lit(r#"Read a passage from a news article ### "#),
    Slot(Placeholder::Excerpt),
    Lit(r#" ### Is this passage a piece of text such as 1. a disclaimer of opinion, 2. a photo caption. Or is it a complete passage from the body of a news article? Respond only in the following python dictionary format: {"1. disclaimer?": True/False, "2. caption?": True/False, "Body?": True/False }"#),
];

const TRIAGE_RELEVANCE: &[Segment] = &[
    Lit(r#"Read a passage from a news article ### "#),
    Slot(Placeholder::Excerpt),
    Lit(r#" ### Step by step, answer the following questions: 1. Does the passage explicitly, unambiguously discuss refugees? Note: most passages are not about refugees. 2. Does the passage explicitly, unambiguously reference Malaysia? Note: most passages are about other countries."#),
    Slot(Placeholder::Note),
    Lit(r#" Now respond in the following Python dictionary format: {"1. Refugees?": "Yes./"/"No.", "2. Malaysia?": "Yes./"/"No."}"#),
];

const RELEVANCE_CONFIDENCE: &[Segment] = &[
    Lit(r#"Read a passage from a news article ### "#),
    Slot(Placeholder::Excerpt),
    Lit(r#" ### Answer step by step: 1. Might this passage be relevant to attitudes towards refugees in Malaysia? If it clearly is, answer "Yes." If it might be, depending on the context of the article the passage is from--eg. the identity of the subject and their location--answer "Maybe." If it is definitely irrelevant regardless of context, answer "No." "#),
    Slot(Placeholder::Note),
    Lit(r#" 2. If "No." or "Maybe.", in 15 words or less give any and all reasons why it might be irrelevant--both those provided earlier and any others you identify, such as irrelevant output from a content management system or editorial annotations to the article. Respond in the following python dictionary format: {"1. Relevant?": "Yes."/"Maybe."/"No.", "2. Why Not?": string or None} "#),
];

const SOCRATIC_CODE: &[Segment] = &[
    Lit(r#"Read a passage from a news article ### "#),
    Slot(Placeholder::Excerpt),
    Lit(r#" ### Give the theme of this passage as it embodies, relates to or reflects attitudes towards refugees in Malaysia if it is relevant to that topic. If it is not relevant, simply summarize the passage in a few words. Note that this passage may simply be text from the web interface and not from an article at all. Before answering, analyze step by step: 1. in 14 words or less, return the theme. Do not offer a generic theme like "attitudes towards refugees in Malaysia", but give a specific theme. 2. Whose attitudes are being reflected? Examples: the Malaysian government, The Bangladeshi government, Malaysians, NGOs, the author. 3. Who is the target of the attitudes? Examples: migrant workers, Myanmar, the Rohingya, the government, UNHCR. 4. What is the valence of attitudes towards the target, if any?: "Sympathetic.", "Hostile.", or "N/A". "#),
    Slot(Placeholder::Note),
    Lit(r#" Finally, Respond ONLY in the following python dictionary format: {"1. Theme": stringval1, "2. Whose Attitude?": stringval2, "3. Target": stringval3, "4. Valence": "Sympathetic."/"Hostile."/"N/A"}"#),
];

const SUMMARY_REASSESS: &[Segment] = &[
    Lit(r#"Read a passage from a news article ### "#),
    Slot(Placeholder::Excerpt),
    Lit(r#" ### The theme of this passage was coded as ### "#),
    Slot(Placeholder::Precode),
    Lit(r#" ### but this analysis ignores the article summary and is therefore unreliable. Reassess the theme of this passage as it relates to attitudes towards refugees in Malaysia, given the context of this summary of the article it came from ### "#),
    Slot(Placeholder::Summary),
    Lit(r#" ### Before answering, analyze step by step: 1. in 14 words or less, return the reassessed theme (if relevant) as it relates to attitudes towards refugees in Malaysia, or return None. Do not give a generic theme like "attitudes towards refugees in Malaysia", but provide a specific theme. If irrelevant, return None for all further questions. If relevant, 2. Whose attitudes are being reflected? Examples: the government, Malaysians, NGOs, the author. 3. Who is the target of the attitudes? Examples: the Rohingya, the government, UNHCR. 4. What is the valence of the attitude towards the target, if any?: "Sympathetic.", "Hostile.", or "N/A". "#),
    Slot(Placeholder::Note),
    Lit(r#" Once again, the passage to code is ### "#),
    Slot(Placeholder::Excerpt),
    Lit(r#" ### Finally, Respond ONLY in the following python dictionary format: {"1. Theme": stringval1/None, "2. Whose Attitude?":stringval2,"3. Target":stringval3,"4. Valence": "Sympathetic."/"Hostile."/"N/A"}"#),
];

const CLUSTER_SUMMARY: &[Segment] = &[
    Lit(r#"Read a list of four themes from a cluster of passages ### "#),
    Slot(Placeholder::Codes),
    Lit(r#" ### Step by step, answer the following: 1 Are all of these themes both present and relevant to attitudes towards refugees in Malaysia? "All are."/"None are."/"Some are.". If irrelevant, return none to all further questions. 2. If relevant, return the overarching theme as it relates to attitudes towards refugees in Malaysia, or return None. Do not give a generic theme like "attitudes towards refugees in Malaysia", but provide a specific and detailed theme. If relevant, 3. Whose attitudes are being reflected? Examples: the government, Malaysians, NGOs, the author. 4. Who is the target of the attitudes? Examples: the Rohingya, the government, UNHCR. 5. What is the overall valence, if any? Finally, Respond ONLY in the following python dictionary format: {"1. Are Passages Relevant?": "All are."/"None are."/"Some are.", "2. Theme": stringval1/None, "3. Whose Attitude?":stringval2,"4. Target":stringval3,"5. Valence": "Sympathetic."/"Hostile."/"N/A"}"#),
];

const FINAL_FEW_SHOT: &[Segment] = &[
    Lit(r#"Read this passage from a news article ### "#),
    Slot(Placeholder::Excerpt),
    Lit(r#" ### If relevant, give the theme of this SPECIFIC passage as it embodies, relates to, or reflects attitudes towards refugees in Malaysia. The following summary of the excerpted article may provide context for the passage (e.g. who is being discussed and where events are occurring): ### "#),
    Slot(Placeholder::Summary),
    Lit(r#" ### Here is an overview of how several passages similar to this one have been coded: ### "#),
    Slot(Placeholder::Relevant),
    Lit(r#" ### DO NOT copy this coding verbatim, but use it as reference and be careful if only some or none of the similar passages were deemed relevant. Before answering, analyze step by step: 1. in 12 words or less, return the theme (if relevant) as it relates to attitudes towards refugees in Malaysia, or return None. Do not give a generic theme like "attitudes towards refugees in Malaysia", but provide a specific single theme. If irrelevant, return None for all further questions. If relevant, 2. Whose attitudes are being reflected? Examples: the government, Malaysians, NGOs, the author. 3. Who is the target of the attitudes? Examples: the Rohingya, the government, UNHCR. 4. What is the valence of attitudes towards the target, if any?: "Sympathetic.", "Hostile.", or "N/A". Once again, the passage to code is ### "#),
    Slot(Placeholder::Excerpt),
    Lit(r#" ### Finally, Respond ONLY in the following python dictionary format: {"1. Theme": None/stringval1, "2. Whose Attitude?":None/stringval2,"3. Target":None/stringval3, 4. Valence": "Sympathetic."/"Hostile."/"N/A"}"#),
];
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Round1,
    TriageCaption,
    TriageRelevance,
    RelevanceConfidence,
    SocraticCode,
    SummaryReassess,
    ClusterSummary,
    FinalFewShot,
}

impl TemplateName {
    pub const ALL: [TemplateName; 8] = [
        TemplateName::Round1,
        TemplateName::TriageCaption,
        TemplateName::TriageRelevance,
        TemplateName::RelevanceConfidence,
        TemplateName::SocraticCode,
        TemplateName::SummaryReassess,
        TemplateName::ClusterSummary,
        TemplateName::FinalFewShot,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateName::Round1 => "round1",
            TemplateName::TriageCaption => "triage_caption",
            TemplateName::TriageRelevance => "triage_relevance",
            TemplateName::RelevanceConfidence => "relevance_confidence",
            TemplateName::SocraticCode => "socratic_code",
            TemplateName::SummaryReassess => "summary_reassess",
            TemplateName::ClusterSummary => "cluster_summary",
            TemplateName::FinalFewShot => "final_fewshot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    fn segments(&self) -> &'static [Segment] {
        match self {
            TemplateName::Round1 => ROUND1,
            TemplateName::TriageCaption => TRIAGE_CAPTION,
            TemplateName::TriageRelevance => TRIAGE_RELEVANCE,
            TemplateName::RelevanceConfidence => RELEVANCE_CONFIDENCE,
            TemplateName::SocraticCode => SOCRATIC_CODE,
            TemplateName::SummaryReassess => SUMMARY_REASSESS,
            TemplateName::ClusterSummary => CLUSTER_SUMMARY,
            TemplateName::FinalFewShot => FINAL_FEW_SHOT,
        }
    }

    /// Distinct placeholders in order of first use.
    pub fn placeholders(&self) -> Vec<Placeholder> {
        let mut out = Vec::new();
        for s in self.segments() {
            if let Slot(p) = s {
                if !out.contains(p) {
                    out.push(*p);
                }
            }
        }
        out
    }

    /// The literal text between placeholders.
    pub fn fixed_text(&self) -> Vec<&'static str> {
        self.segments()
            .iter()
            .filter_map(|s| match s {
                Lit(t) => Some(*t),
                Slot(_) => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings(BTreeMap<Placeholder, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, p: Placeholder, value: impl Into<String>) -> Self {
        self.0.insert(p, value.into());
        self
    }

    pub fn set(&mut self, p: Placeholder, value: impl Into<String>) {
        self.0.insert(p, value.into());
    }
}

/// Substitutes bindings verbatim; no escaping is applied.
pub fn render_prompt(template: TemplateName, bindings: &Bindings) -> Result<String, CoderError> {
    let mut out = String::new();
    for seg in template.segments() {
        match seg {
            Lit(t) => out.push_str(t),
            Slot(p) => out.push_str(bindings.0.get(p).ok_or(CoderError::Unbound {
                template: template.as_str(),
                placeholder: p.as_str(),
            })?),
        }
    }
    Ok(out)
}

/// Red flags raised by the triage steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IrrelevanceFlag {
    Disclaimer,
    Caption,
    NotRefugees,
    NotMalaysia,
}

impl IrrelevanceFlag {
    pub fn fragment(&self) -> &'static str {
        match self {
            IrrelevanceFlag::Disclaimer => "Passage is a disclaimer of personal opinion, ",
            IrrelevanceFlag::Caption => " Passage is a photo caption, ",
            IrrelevanceFlag::NotRefugees => " Not about refugees, ",
            IrrelevanceFlag::NotMalaysia => " Not about Malaysia, ",
        }
    }
}

/// Empty without flags, otherwise the flagged-criteria warning.
pub fn flag_note(flags: &[IrrelevanceFlag]) -> String {
    if flags.is_empty() {
        return String::new();
    }
    let criteria: String = flags.iter().map(|f| f.fragment()).collect();
    format!(
        "Note: this passage has been flagged as possibly meeting the following criteria for irrelevance: {criteria} ### If any of these criteria are true, you should answer \"No.\" or \"Maybe. \""
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relevance {
    Yes,
    Maybe,
    No,
}

impl Relevance {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().trim_end_matches(['.', '/']).to_ascii_lowercase().as_str() {
            "yes" => Some(Relevance::Yes),
            "maybe" => Some(Relevance::Maybe),
            "no" => Some(Relevance::No),
            _ => None,
        }
    }
}

/// Note threaded into the initial coding step.
pub fn coding_note(relevance: Relevance, reason: &str) -> String {
    match relevance {
        Relevance::Yes => String::new(),
        Relevance::Maybe => format!(
            " Previous analysis found that this passage might be irrelevant for this reason: {reason}### Take this into account."
        ),
        Relevance::No => {
            format!(" Previous analysis found that this passage is irrelevant for this reason: {reason}### Take this into account.")
        }
    }
}

/// Note threaded into the summary reassessment; both doubtful verdicts share
/// one wording.
pub fn reassess_note(relevance: Relevance, reason: &str) -> String {
    match relevance {
        Relevance::Yes => String::new(),
        Relevance::Maybe | Relevance::No => format!(
            "Previous analysis found that this SPECIFIC passage might be irrelevant for this reason: {reason}### Does the summary clarify this?."
        ),
    }
}

/// `str(list)` of Python strings.
pub fn python_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"))).collect();
    format!("[{}]", quoted.join(", "))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DictValue {
    Str(String),
    Bool(bool),
    Null,
    /// Unquoted text that is not a Python keyword.
    Bare(String),
}

impl DictValue {
    fn text(&self) -> Option<&str> {
        match self {
            DictValue::Str(s) | DictValue::Bare(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PyDict {
    pub entries: Vec<(String, DictValue)>,
}

impl PyDict {
    /// First entry whose key contains `fragment`, case-insensitively.
    pub fn find(&self, fragment: &str) -> Option<&DictValue> {
        let f = fragment.to_lowercase();
        self.entries.iter().find(|(k, _)| k.to_lowercase().contains(&f)).map(|(_, v)| v)
    }

    fn flag(&self, fragment: &str) -> bool {
        match self.find(fragment) {
            Some(DictValue::Bool(b)) => *b,
            Some(v) => v.text().is_some_and(|t| t.trim().eq_ignore_ascii_case("true")),
            None => false,
        }
    }
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
}

impl Cursor {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn quoted(&mut self) -> Option<String> {
        let q = self.peek()?;
        self.pos += 1;
        let mut out = String::new();
        while let Some(c) = self.peek() {
            self.pos += 1;
            match c {
                '\\' => {
                    let n = self.peek()?;
                    self.pos += 1;
                    out.push(match n {
                        'n' => '\n',
                        't' => '\t',
                        other => other,
                    });
                }
                c if c == q => return Some(out),
                c => out.push(c),
            }
        }
        None
    }

    /// Reads until one of `stops` outside quotes.
    fn bare(&mut self, stops: &[char]) -> String {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if stops.contains(&c) {
                break;
            }
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect::<String>().trim().to_string()
    }

    fn dict(&mut self) -> Option<PyDict> {
        if self.peek()? != '{' {
            return None;
        }
        self.pos += 1;
        let mut dict = PyDict::default();
        loop {
            self.skip_ws();
            match self.peek()? {
                '}' => {
                    self.pos += 1;
                    return Some(dict);
                }
                ',' => {
                    self.pos += 1;
                    continue;
                }
                _ => {}
            }
            let key = match self.peek()? {
                '"' | '\'' => {
                    let k = self.quoted()?;
                    self.skip_ws();
                    if self.peek()? != ':' {
                        // A key whose opening quote went missing upstream.
                        let rest = self.bare(&[':', '}', '{']);
                        format!("{k}{rest}")
                    } else {
                        k
                    }
                }
                _ => self.bare(&[':', '}', '{']).trim_matches(['"', '\'']).to_string(),
            };
            if self.peek()? != ':' {
                return None;
            }
            self.pos += 1;
            self.skip_ws();
            let value = match self.peek()? {
                '"' | '\'' => DictValue::Str(self.quoted()?),
                _ => {
                    let raw = self.bare(&[',', '}']);
                    match raw.as_str() {
                        "None" | "null" | "none" | "NULL" => DictValue::Null,
                        "True" | "true" => DictValue::Bool(true),
                        "False" | "false" => DictValue::Bool(false),
                        _ => DictValue::Bare(raw),
                    }
                }
            };
            dict.entries.push((key.trim().to_string(), value));
            self.skip_ws();
            match self.peek()? {
                ',' => self.pos += 1,
                '}' => {}
                _ => return None,
            }
        }
    }
}

/// Every dictionary-shaped region of `raw` that parses, in order.
pub fn parse_dicts(raw: &str) -> Vec<PyDict> {
    let mut cur = Cursor { chars: raw.chars().collect(), pos: 0 };
    let mut out = Vec::new();
    while cur.pos < cur.chars.len() {
        if cur.chars[cur.pos] == '{' {
            let start = cur.pos;
            match cur.dict() {
                Some(d) => {
                    out.push(d);
                    continue;
                }
                None => cur.pos = start + 1,
            }
        } else {
            cur.pos += 1;
        }
    }
    out
}

pub fn parse_dict(raw: &str) -> Option<PyDict> {
    parse_dicts(raw).into_iter().next()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Valence {
    Sympathetic,
    Hostile,
    NotApplicable,
    None,
}

impl Valence {
    pub fn parse(raw: &str) -> Valence {
        match raw.trim().trim_end_matches('.').trim().to_ascii_lowercase().as_str() {
            "sympathetic" => Valence::Sympathetic,
            "hostile" => Valence::Hostile,
            "n/a" | "na" | "not applicable" => Valence::NotApplicable,
            _ => Valence::None,
        }
    }

    fn literal(&self) -> &'static str {
        match self {
            Valence::Sympathetic => "\"Sympathetic.\"",
            Valence::Hostile => "\"Hostile.\"",
            Valence::NotApplicable => "\"N/A\"",
            Valence::None => "None",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeResponse {
    /// `None` marks the passage as irrelevant.
    pub theme: Option<String>,
    pub whose_attitude: Option<String>,
    pub target: Option<String>,
    pub valence: Valence,
}

impl CodeResponse {
    pub fn irrelevant() -> Self {
        Self { theme: None, whose_attitude: None, target: None, valence: Valence::None }
    }

    pub fn is_relevant(&self) -> bool {
        self.theme.is_some()
    }

    fn from_dict(d: &PyDict) -> Option<Self> {
        let text = |frag: &str| -> Option<String> {
            let t = d.find(frag)?.text()?.trim();
            let lowered = t.trim_end_matches('.').to_ascii_lowercase();
            if t.is_empty() || matches!(lowered.as_str(), "none" | "null" | "irrelevant") {
                None
            } else {
                Some(t.to_string())
            }
        };
        d.find("theme")?;
        Some(Self {
            theme: text("theme"),
            whose_attitude: text("whose"),
            target: text("target"),
            valence: d.find("valence").and_then(DictValue::text).map(Valence::parse).unwrap_or(Valence::None),
        })
    }

    /// The reply dictionary in the templates' format.
    pub fn to_dict_string(&self) -> String {
        let s = |v: &Option<String>| match v {
            Some(t) => format!("\"{}\"", t.replace('\\', "\\\\").replace('"', "\\\"")),
            None => "None".to_string(),
        };
        format!(
            "{{\"1. Theme\": {}, \"2. Whose Attitude?\": {}, \"3. Target\": {}, \"4. Valence\": {}}}",
            s(&self.theme),
            s(&self.whose_attitude),
            s(&self.target),
            self.valence.literal()
        )
    }
}

/// First code dictionary in a reply.
pub fn parse_response(raw: &str) -> Result<CodeResponse, CoderError> {
    parse_dicts(raw)
        .iter()
        .find_map(CodeResponse::from_dict)
        .ok_or_else(|| CoderError::Parse { raw: raw.to_string() })
}

/// All code dictionaries in a reply; a reply may code several themes.
pub fn parse_responses(raw: &str) -> Result<Vec<CodeResponse>, CoderError> {
    let all: Vec<CodeResponse> = parse_dicts(raw).iter().filter_map(CodeResponse::from_dict).collect();
    if all.is_empty() {
        return Err(CoderError::Parse { raw: raw.to_string() });
    }
    Ok(all)
}

/// Free-text theme reply to the first-round prompt ("Irrelevant" or a theme).
pub fn parse_round1(raw: &str) -> Result<CodeResponse, CoderError> {
    if let Ok(r) = parse_response(raw) {
        return Ok(r);
    }
    let t = raw.trim().trim_matches(['"', '\'']).trim();
    if t.is_empty() {
        return Err(CoderError::Parse { raw: raw.to_string() });
    }
    if t.trim_end_matches('.').eq_ignore_ascii_case("irrelevant") {
        return Ok(CodeResponse::irrelevant());
    }
    Ok(CodeResponse { theme: Some(t.to_string()), whose_attitude: None, target: None, valence: Valence::None })
}

pub struct CompletionRequest<'a> {
    pub template: TemplateName,
    pub prompt: &'a str,
    /// The passage (or code list) being processed, for backends that key on it.
    pub subject: &'a str,
}

pub trait CoderBackend: Named + Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, CoderError>;

    /// Upper bound on concurrent requests.
    fn max_in_flight(&self) -> usize {
        1
    }
}

/// 64-bit FNV-1a, stable across platforms.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Offline backend replying with pseudo-codes drawn from a Zipf law over a
/// synthetic vocabulary, seeded by the passage text.
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub seed: u64,
    pub vocabulary: usize,
    pub exponent: f64,
    pub max_codes: usize,
    /// Passage characters per expected code at average intensity.
    pub chars_per_code: f64,
    /// One in this many passages is flagged as a photo caption.
    pub caption_rate: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed, vocabulary: 200, exponent: 1.1, max_codes: 6, chars_per_code: 250.0, caption_rate: 25 }
    }

    fn rng(&self, subject: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(fnv1a(subject.as_bytes()) ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    /// Synthetic vocabulary entry `rank` (1-based).
    pub fn code_label(rank: usize) -> String {
        format!("synthetic theme {rank:03}")
    }

    /// Deterministic code ranks for a passage: 0 to `max_codes` of them,
    /// more for longer passages.
    pub fn codes_for(&self, subject: &str) -> Vec<usize> {
        let mut rng = self.rng(subject);
        let intensity: f64 = 0.5 + rng.random::<f64>();
        let lambda = subject.chars().count() as f64 / self.chars_per_code * intensity;
        let k = if lambda > 0.0 {
            (Poisson::new(lambda).expect("positive").sample(&mut rng) as usize).min(self.max_codes)
        } else {
            0
        };
        let zipf = Zipf::new(self.vocabulary as f64, self.exponent).expect("valid Zipf");
        (0..k).map(|_| zipf.sample(&mut rng) as usize).collect()
    }

    fn is_caption(&self, subject: &str) -> bool {
        self.caption_rate > 0 && (fnv1a(subject.as_bytes()) ^ self.seed) % self.caption_rate == 0
    }
}

impl Named for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }
}

const TARGETS: [&str; 4] = ["the Rohingya", "the government", "UNHCR", "migrant workers"];
const HOLDERS: [&str; 4] = ["the government", "Malaysians", "NGOs", "the author"];

impl CoderBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, CoderError> {
        let subject = request.subject;
        let caption = self.is_caption(subject);
        Ok(match request.template {
            TemplateName::TriageCaption => format!(
                "{{\"1. disclaimer?\": False, \"2. caption?\": {}, \"Body?\": {}}}",
                if caption { "True" } else { "False" },
                if caption { "False" } else { "True" }
            ),
            TemplateName::TriageRelevance => "{\"1. Refugees?\": \"Yes.\", \"2. Malaysia?\": \"Yes.\"}".to_string(),
            TemplateName::RelevanceConfidence => {
                if caption || request.prompt.contains("Passage is a photo caption") {
                    "{\"1. Relevant?\": \"Maybe.\", \"2. Why Not?\": \"Looks like a photo caption.\"}".to_string()
                } else {
                    "{\"1. Relevant?\": \"Yes.\", \"2. Why Not?\": None}".to_string()
                }
            }
            TemplateName::Round1 => match self.codes_for(subject).first() {
                Some(&r) => Self::code_label(r),
                None => "Irrelevant".to_string(),
            },
            TemplateName::SocraticCode
            | TemplateName::SummaryReassess
            | TemplateName::FinalFewShot
            | TemplateName::ClusterSummary => {
                let codes = self.codes_for(subject);
                if codes.is_empty() {
                    return Ok(CodeResponse::irrelevant().to_dict_string());
                }
                let replies: Vec<String> = codes
                    .iter()
                    .map(|&r| {
                        CodeResponse {
                            theme: Some(Self::code_label(r)),
                            whose_attitude: Some(HOLDERS[r % HOLDERS.len()].to_string()),
                            target: Some(TARGETS[(r / 4) % TARGETS.len()].to_string()),
                            valence: if r % 3 == 0 { Valence::Hostile } else { Valence::Sympathetic },
                        }
                        .to_dict_string()
                    })
                    .collect();
                replies.join("\n")
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub temperature: f64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".to_string(),
            model: "gpt-3.5-turbo".to_string(),
            token_env: DEFAULT_TOKEN_ENV.to_string(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
            temperature: 0.0,
            max_in_flight: 4,
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    token: Option<String>,
    agent: ureq::Agent,
    warn_once: std::sync::Once,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, token, agent, warn_once: std::sync::Once::new() }
    }

    fn attempt(&self, prompt: &str) -> Result<String, (CoderError, bool)> {
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        })
        .to_string();
        let mut req = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send(&body).map_err(|e| (CoderError::Transport(e.to_string()), true))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| (CoderError::Transport(e.to_string()), true))?;
        match status {
            200..=299 => {
                let v: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| (CoderError::MalformedReply(e.to_string()), false))?;
                v.pointer("/choices/0/message/content")
                    .and_then(|c| c.as_str())
                    .map(str::to_string)
                    .ok_or_else(|| (CoderError::MalformedReply(text.clone()), false))
            }
            429 => Err((CoderError::RateLimited { attempts: 0 }, true)),
            500..=599 => Err((CoderError::Http { status, body: text }, true)),
            _ => Err((CoderError::Http { status, body: text }, false)),
        }
    }
}

impl Named for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }
}

impl CoderBackend for RemoteBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, CoderError> {
        if self.token.is_none() {
            self.warn_once.call_once(|| warn!("{} is not set; sending requests without authorization", self.config.token_env));
        }
        let attempts = self.config.max_retries + 1;
        let mut last = CoderError::Transport("no attempt made".into());
        for i in 0..attempts {
            match self.attempt(request.prompt) {
                Ok(text) => return Ok(text),
                Err((err, retry)) => {
                    last = match err {
                        CoderError::RateLimited { .. } => CoderError::RateLimited { attempts: i + 1 },
                        other => other,
                    };
                    if !retry {
                        return Err(last);
                    }
                    if i + 1 < attempts {
                        std::thread::sleep(Duration::from_millis(self.config.backoff_ms.saturating_mul(1 << i.min(16))));
                    }
                }
            }
        }
        Err(last)
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight.max(1)
    }
}

/// Backends by name; `remote` is built from `remote_config`.
pub fn backends(mock_seed: u64, remote_config: RemoteConfig) -> Registry<dyn CoderBackend> {
    let mut r: Registry<dyn CoderBackend> = Registry::new("coder backend");
    r.register(Arc::new(MockBackend::new(mock_seed))).register(Arc::new(RemoteBackend::new(remote_config)));
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateChain {
    /// The single first-round prompt.
    Round1,
    /// Caption/disclaimer triage, relevance triage, relevance confidence,
    /// initial coding, then reassessment against the summary.
    Socratic,
    /// The final prompt with exemplar codes from the passage's cluster.
    FewShot,
}

impl TemplateChain {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "round1" => Some(TemplateChain::Round1),
            "socratic" => Some(TemplateChain::Socratic),
            "fewshot" | "few_shot" => Some(TemplateChain::FewShot),
            _ => None,
        }
    }
}

pub struct PassageContext<'a> {
    pub passage: &'a Passage,
    pub article_len: usize,
    pub summary: &'a str,
    /// Exemplar codes of the passage's cluster, if known.
    pub exemplars: Option<&'a [String]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassageOutcome {
    pub passage_id: String,
    pub article_id: String,
    pub passage_index: usize,
    /// Midpoint of the passage as a fraction of the article.
    pub position: f64,
    pub responses: Result<Vec<CodeResponse>, CoderError>,
    /// Every prompt sent, in order.
    pub prompts: Vec<(TemplateName, String)>,
}

impl PassageOutcome {
    pub fn themes(&self) -> impl Iterator<Item = &str> {
        self.responses.iter().flatten().filter_map(|r| r.theme.as_deref())
    }
}

struct Conversation<'b> {
    backend: &'b dyn CoderBackend,
    subject: &'b str,
    prompts: Vec<(TemplateName, String)>,
}

impl Conversation<'_> {
    fn ask(&mut self, template: TemplateName, bindings: &Bindings) -> Result<String, CoderError> {
        let prompt = render_prompt(template, bindings)?;
        let reply = self.backend.complete(&CompletionRequest { template, prompt: &prompt, subject: self.subject });
        self.prompts.push((template, prompt));
        reply
    }
}

fn run_chain(conv: &mut Conversation<'_>, chain: TemplateChain, ctx: &PassageContext<'_>) -> Result<Vec<CodeResponse>, CoderError> {
    let excerpt = ctx.passage.text.as_str();
    let base = Bindings::new().with(Placeholder::Excerpt, excerpt);
    match chain {
        TemplateChain::Round1 => {
            let reply = conv.ask(TemplateName::Round1, &base.clone().with(Placeholder::Summary, ctx.summary))?;
            Ok(vec![parse_round1(&reply)?])
        }
        TemplateChain::FewShot => {
            let relevant = ctx.exemplars.map(python_list).unwrap_or_default();
            let b = base.clone().with(Placeholder::Summary, ctx.summary).with(Placeholder::Relevant, relevant);
            parse_responses(&conv.ask(TemplateName::FinalFewShot, &b)?)
        }
        TemplateChain::Socratic => {
            let mut flags = Vec::new();
            let triage = parse_dict(&conv.ask(TemplateName::TriageCaption, &base)?).unwrap_or_default();
            if triage.flag("disclaimer") {
                flags.push(IrrelevanceFlag::Disclaimer);
            }
            if triage.flag("caption") {
                flags.push(IrrelevanceFlag::Caption);
            }

            let note = if flags.is_empty() { String::new() } else { format!(" {}", flag_note(&flags)) };
            let topic = conv.ask(TemplateName::TriageRelevance, &base.clone().with(Placeholder::Note, note))?;
            let topic = parse_dict(&topic).unwrap_or_default();
            let says_no = |k: &str| topic.find(k).and_then(DictValue::text).and_then(Relevance::parse) == Some(Relevance::No);
            if says_no("refugees") {
                flags.push(IrrelevanceFlag::NotRefugees);
            }
            if says_no("malaysia") {
                flags.push(IrrelevanceFlag::NotMalaysia);
            }

            let conf = conv.ask(TemplateName::RelevanceConfidence, &base.clone().with(Placeholder::Note, flag_note(&flags)))?;
            let conf = parse_dict(&conf).unwrap_or_default();
            let relevance =
                conf.find("relevant").and_then(DictValue::text).and_then(Relevance::parse).unwrap_or(Relevance::Yes);
            let reason = conf.find("why").and_then(DictValue::text).unwrap_or("").to_string();

            let coded = conv.ask(TemplateName::SocraticCode, &base.clone().with(Placeholder::Note, coding_note(relevance, &reason)))?;
            let initial = parse_responses(&coded)?;
            let themes: Vec<&str> = initial.iter().filter_map(|r| r.theme.as_deref()).collect();
            let precode = if themes.is_empty() { "None".to_string() } else { themes.join("; ") };

            let b = base
                .with(Placeholder::Precode, precode)
                .with(Placeholder::Summary, ctx.summary)
                .with(Placeholder::Note, reassess_note(relevance, &reason));
            parse_responses(&conv.ask(TemplateName::SummaryReassess, &b)?)
        }
    }
}

pub fn code_passage(backend: &dyn CoderBackend, chain: TemplateChain, ctx: &PassageContext<'_>) -> PassageOutcome {
    let mut conv = Conversation { backend, subject: &ctx.passage.text, prompts: Vec::new() };
    let responses = run_chain(&mut conv, chain, ctx);
    PassageOutcome {
        passage_id: ctx.passage.id(),
        article_id: ctx.passage.article_id.clone(),
        passage_index: ctx.passage.index,
        position: ctx.passage.relative_midpoint(ctx.article_len),
        responses,
        prompts: conv.prompts,
    }
}

/// Codes every passage, with at most `backend.max_in_flight()` in progress.
/// Failures are recorded per passage. Results are ordered by article id then
/// passage index.
pub fn code_passages(passages: &[PassageContext<'_>], backend: &dyn CoderBackend, chain: TemplateChain) -> Vec<PassageOutcome> {
    let workers = backend.max_in_flight().clamp(1, passages.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<PassageOutcome>>> = Mutex::new(vec![None; passages.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(ctx) = passages.get(i) else { break };
                let outcome = code_passage(backend, chain, ctx);
                results.lock().expect("worker panicked")[i] = Some(outcome);
            });
        }
    });
    let mut out: Vec<PassageOutcome> =
        results.into_inner().expect("worker panicked").into_iter().map(|o| o.expect("every slot filled")).collect();
    out.sort_by(|a, b| a.article_id.cmp(&b.article_id).then(a.passage_index.cmp(&b.passage_index)));
    out
}

/// One codes.csv row per relevant theme, positioned at the passage midpoint.
/// Themes whose label canonicalizes to nothing are skipped.
pub fn outcome_rows(outcomes: &[PassageOutcome]) -> Vec<CodeRow> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.themes().filter_map(move |t| {
                canonicalize_code(t).ok().map(|label| CodeRow {
                    doc_id: o.article_id.clone(),
                    coder_source: AI_SOURCE.to_string(),
                    code_label: label,
                    position: Some(o.position),
                })
            })
        })
        .collect()
}

fn read_pairs(path: &Path, headers: [&str; 2]) -> Result<Vec<(String, String)>, CoderError> {
    let err = |m: String| CoderError::Input { path: path.display().to_string(), message: m };
    let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let h = r.headers().map_err(|e| err(e.to_string()))?.clone();
    let idx = |name: &str| h.iter().position(|x| x == name).ok_or_else(|| err(format!("missing column `{name}`")));
    let (a, b) = (idx(headers[0])?, idx(headers[1])?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        out.push((rec.get(a).unwrap_or_default().to_string(), rec.get(b).unwrap_or_default().to_string()));
    }
    Ok(out)
}

/// Passage to cluster assignments and per-cluster exemplar codes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterContext {
    pub assignment: HashMap<String, String>,
    pub exemplars: BTreeMap<String, Vec<String>>,
}

impl ClusterContext {
    /// `clusters.csv`: passage_id, cluster_id. `exemplars.csv`: cluster_id, code_label.
    pub fn load(clusters: &Path, exemplars: &Path) -> Result<Self, CoderError> {
        let assignment = read_pairs(clusters, ["passage_id", "cluster_id"])?.into_iter().collect();
        let mut ex: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (c, label) in read_pairs(exemplars, ["cluster_id", "code_label"])? {
            ex.entry(c).or_default().push(label);
        }
        Ok(Self { assignment, exemplars: ex })
    }

    pub fn exemplars_for(&self, passage_id: &str) -> Option<&[String]> {
        self.exemplars.get(self.assignment.get(passage_id)?).map(Vec::as_slice)
    }
}

/// `summaries.csv`: article_id, summary.
pub fn read_summaries(path: &Path) -> Result<HashMap<String, String>, CoderError> {
    Ok(read_pairs(path, ["article_id", "summary"])?.into_iter().collect())
}

/// Stand-in summary when none is supplied: the leading characters of the
/// article, cut at a character boundary.
pub fn fallback_summary(full_text: &str, max_chars: usize) -> String {
    let flat = full_text.split_whitespace().collect::<Vec<_>>().join(" ");
    flat.chars().take(max_chars).collect()
}
