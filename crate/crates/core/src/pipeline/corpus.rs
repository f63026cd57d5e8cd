//! Seeded synthetic corpus.
//!
//! Each case embeds mock-lexicon factor tags in caller speech. Positives carry
//! tags whose weights sum to at least the high-risk threshold, negatives stay
//! below it, so the mock backend scores them on the correct side. Scale
//! answers follow the embedded factors with a little seeded noise. Operator
//! greetings use a name from [`SYNTHETIC_NAMES`] and one caller utterance
//! gives a phone number, which exercises redaction.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assessment::{ManualScaleRecord, ScaleElement, MAX_TOTAL, MAX_UNANSWERED};
use crate::domain::{CaseRecord, FollowUpOutcome, RiskLabel, Speaker, TranscriptDocument, Utterance};
use crate::gateway::RiskLexicon;

use super::config::CorpusSection;

/// Names used in synthetic greetings; `configs/names.txt` lists the same.
pub const SYNTHETIC_NAMES: &[&str] = &["王芳", "李娜", "张伟", "刘洋", "陈静", "杨磊"];

const FILLER: &[&str] = &[
    "最近睡得不太好",
    "工作上的事情让我很累",
    "我也不知道该跟谁说",
    "家里人不太理解我",
    "心里一直很乱",
    "有时候觉得撑不下去",
    "你能听我说说吗",
    "我试过跟朋友聊",
    "晚上总是想很多",
    "这种感觉持续很久了",
    "嗯，我明白你的意思",
    "你现在安全吗",
    "我们可以慢慢说",
    "能具体讲讲发生了什么吗",
    "你身边有人陪着你吗",
    "谢谢你愿意打电话过来",
];

const NOISE_PROBABILITY: f64 = 0.1;
const SEGMENT_STRIDE_CHARS: usize = 1850;

fn rounded_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

fn filler(rng: &mut ChaCha8Rng, len: usize) -> String {
    let mut s = String::new();
    while s.chars().count() < len {
        s.push_str(FILLER.choose(rng).expect("non-empty"));
        s.push('，');
    }
    let mut out: String = s.chars().take(len.saturating_sub(1)).collect();
    out.push('。');
    out
}

/// Factor elements for one case: weight sum of at least the threshold for
/// positives and below it for negatives.
fn pick_factors(rng: &mut ChaCha8Rng, positive: bool) -> Vec<ScaleElement> {
    let mut order = ScaleElement::ALL.to_vec();
    order.shuffle(rng);
    let threshold = RiskLabel::HIGH_RISK_THRESHOLD;
    let mut picked = Vec::new();
    let mut sum = 0u8;
    if positive {
        for e in order {
            if sum < threshold || rng.random_bool(0.15) {
                sum += e.max_score();
                picked.push(e);
            }
        }
    } else {
        let target = rng.random_range(0..threshold);
        for e in order {
            if sum + e.max_score() <= target {
                sum += e.max_score();
                picked.push(e);
            }
        }
    }
    picked.sort_by_key(|e| e.index());
    picked
}

fn scale_for(rng: &mut ChaCha8Rng, factors: &[ScaleElement], missing: bool) -> ManualScaleRecord {
    let mut rec = ManualScaleRecord::new();
    for e in ScaleElement::ALL {
        let permitted = e.permitted_scores();
        let value = if factors.contains(&e) {
            permitted[rng.random_range(1..permitted.len())]
        } else if rng.random_bool(NOISE_PROBABILITY) {
            *permitted.choose(rng).expect("non-empty")
        } else {
            0
        };
        rec.set(e, Some(value));
    }
    if missing {
        let mut order = ScaleElement::ALL.to_vec();
        order.shuffle(rng);
        let blanks = rng.random_range(MAX_UNANSWERED + 1..=MAX_UNANSWERED + 3);
        for e in &order[..blanks] {
            rec.set(*e, None);
        }
    }
    rec
}

fn transcript(rng: &mut ChaCha8Rng, factors: &[ScaleElement]) -> TranscriptDocument {
    let segments = rng.random_range(1..=MAX_SEGMENTS);
    let target = (segments - 1) * SEGMENT_STRIDE_CHARS + rng.random_range(100..1700);
    let name = SYNTHETIC_NAMES.choose(rng).expect("non-empty");

    let mut utterances = vec![Utterance::new(
        Speaker::Operator,
        format!("您好，这里是心理援助热线，{name}您好，请问有什么可以帮您？"),
    )];
    let mut total = utterances[0].text.chars().count();
    while total < target {
        let speaker = if utterances.len() % 2 == 1 {
            Speaker::Caller
        } else {
            Speaker::Operator
        };
        let len = rng.random_range(20..120);
        let u = Utterance::new(speaker, filler(rng, len));
        total += u.text.chars().count() + 1;
        utterances.push(u);
    }
    if utterances.len() < 2 {
        utterances.push(Utterance::new(Speaker::Caller, filler(rng, 30)));
    }

    let caller_slots: Vec<usize> = (0..utterances.len())
        .filter(|&i| utterances[i].speaker == Speaker::Caller)
        .collect();
    let phone_at = *caller_slots.choose(rng).expect("at least one caller utterance");
    let phone: String = (0..8).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect();
    utterances[phone_at].text.push_str(&format!("我的电话是138{phone}。"));
    for e in factors {
        let at = *caller_slots.choose(rng).expect("at least one caller utterance");
        utterances[at].text.push_str(&format!(" {} ", RiskLexicon::tag_for(*e)));
    }
    TranscriptDocument::from_utterances(utterances)
}

/// Generates `n_cases` records; a pure function of the section's values.
pub fn gen_corpus(cfg: &CorpusSection) -> Vec<CaseRecord> {
    let n = cfg.n_cases;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut positive = vec![false; n];
    for &i in &order[..rounded_count(n, cfg.positive_fraction)] {
        positive[i] = true;
    }
    order.shuffle(&mut rng);
    let mut missing = vec![false; n];
    for &i in &order[..rounded_count(n, cfg.missing_scale_fraction)] {
        missing[i] = true;
    }

    (0..n)
        .map(|i| {
            let factors = pick_factors(&mut rng, positive[i]);
            let scale = scale_for(&mut rng, &factors, missing[i]);
            let transcript = transcript(&mut rng, &factors);
            let intensity: u8 = factors.iter().map(|e| e.max_score()).sum::<u8>().min(MAX_TOTAL);
            let meta = BTreeMap::from([
                ("source".to_string(), "synthetic".to_string()),
                ("intensity".to_string(), intensity.to_string()),
            ]);
            CaseRecord {
                case_id: format!("case-{:04}", i + 1),
                transcript,
                scale: Some(scale),
                outcome: Some(FollowUpOutcome::confirmed(positive[i])),
                meta,
            }
        })
        .collect()
}

/// Upper bound on segments per generated transcript at the default budget.
pub const MAX_SEGMENTS: usize = 10;
