//! Seeded synthetic corpus with the class imbalance of the reference data.
//!
//! Most messages carry class keywords. A "hard" share of every class is
//! built from shared filler words only, and there the class shows up solely
//! in character patterns: smishing lures carry a mixed letter-digit token
//! such as a fake short link, promotions carry a run of Bangla digits, and
//! normal chat carries neither. The pattern tokens are freshly drawn each
//! time, so a bag of whole words cannot see them while a character model
//! can.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DatasetRecord;
use crate::text::Label;

pub const DEFAULT_COUNTS: [usize; Label::COUNT] = [600, 300, 600];
pub const DEFAULT_HARD_FRACTION: f64 = 0.2;

const FILLER: &[&str] = &[
    "আজ", "কাল", "এখন", "তুমি", "আমি", "আপনি", "আমরা", "সময়", "দিন", "কথা", "ভাই", "আপু", "একটু", "পরে",
    "আবার", "সবাই", "খুব", "ভালো", "জন্য", "সাথে", "এই", "ওই", "শুধু", "তো", "ok", "please", "thanks", "bro",
];

const NORMAL: &[&str] = &[
    "বাসায়", "খাবার", "রাতে", "ক্লাস", "বন্ধু", "মা", "বাবা", "দেখা", "চা", "অফিসে", "ফিরবো", "পরীক্ষা",
    "গল্প", "বিকেলে", "ঘুম", "রান্না", "মিস", "কেমন", "আছো", "home", "dinner", "call",
];

const PROMO: &[&str] = &[
    "অফার", "ছাড়", "মূল্য", "কিনুন", "সেল", "প্যাকেজ", "বোনাস", "রিচার্জ", "ইন্টারনেট", "মিনিট", "টাকায়",
    "ডিসকাউন্ট", "নতুন", "কালেকশন", "ফ্রি", "ডেলিভারি", "শপিং", "গ্রাহক", "sale", "offer", "shop",
];

const SMISH: &[&str] = &[
    "অ্যাকাউন্ট", "বন্ধ", "যাচাই", "পিন", "লিংক", "ক্লিক", "পুরস্কার", "জিতেছেন", "বিকাশ", "ওটিপি", "জরুরি",
    "ব্লক", "নিরাপত্তা", "পাসওয়ার্ড", "লটারি", "দাবি", "এখনই", "verify", "account", "login", "link",
];

const BANGLA_DIGITS: [char; 10] = ['০', '১', '২', '৩', '৪', '৫', '৬', '৭', '৮', '৯'];

fn pool(label: Label) -> &'static [&'static str] {
    match label {
        Label::Normal => NORMAL,
        Label::Promo => PROMO,
        Label::Smish => SMISH,
    }
}

/// Lowercase letters and ASCII digits, at least two of each.
fn link_token(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(5..=9);
    let mut chars: Vec<char> = (0..len)
        .map(|i| match i {
            0 | 1 => rng.gen_range(b'a'..=b'z') as char,
            2 | 3 => rng.gen_range(b'0'..=b'9') as char,
            _ if rng.gen_bool(0.5) => rng.gen_range(b'a'..=b'z') as char,
            _ => rng.gen_range(b'0'..=b'9') as char,
        })
        .collect();
    chars.shuffle(rng);
    chars.into_iter().collect()
}

fn digit_run(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(4..=7);
    (0..len).map(|_| BANGLA_DIGITS[rng.gen_range(0..10)]).collect()
}

fn pattern(label: Label, rng: &mut ChaCha8Rng) -> Option<String> {
    match label {
        Label::Normal => None,
        Label::Promo => Some(digit_run(rng)),
        Label::Smish => Some(link_token(rng)),
    }
}

fn message(label: Label, hard: bool, rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(4..=20);
    let mut words: Vec<String> = Vec::with_capacity(len);
    let with_pattern = label != Label::Normal && (hard || rng.gen_bool(0.6));
    let keywords = if hard { 0 } else { rng.gen_range(2..=5).min(len - 1) };
    for _ in 0..keywords {
        words.push(pool(label).choose(rng).expect("non-empty pool").to_string());
    }
    let reserved = usize::from(with_pattern);
    while words.len() + reserved < len {
        words.push(FILLER.choose(rng).expect("non-empty pool").to_string());
    }
    words.shuffle(rng);
    if with_pattern {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, pattern(label, rng).expect("patterned class"));
    }
    words.join(" ")
}

/// Exactly `counts[c]` messages of class `c`, `round(hard_fraction · count)`
/// of them hard, in a seeded shuffled order.
pub fn generate_synthetic(counts: [usize; Label::COUNT], hard_fraction: f64, seed: u64) -> Vec<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(counts.iter().sum());
    for label in Label::ALL {
        let n = counts[label.index()];
        let hard = (n as f64 * hard_fraction).round() as usize;
        for i in 0..n {
            out.push(DatasetRecord {
                label,
                text: message(label, i < hard, &mut rng),
            });
        }
    }
    out.shuffle(&mut rng);
    out
}
