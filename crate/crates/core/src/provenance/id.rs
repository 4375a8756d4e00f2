use std::sync::Mutex;

use rand::Rng;

use super::metadata::monotone_now;

const CROCKFORD: &[u8; 32] = b"0123456789ABCDEFGHJKMNPQRSTVWXYZ";
const SUFFIX_LEN: usize = 6;
const SUFFIX_SPACE: u32 = 1 << (5 * SUFFIX_LEN);

fn encode(mut n: u32) -> String {
    let mut out = [b'0'; SUFFIX_LEN];
    for slot in out.iter_mut().rev() {
        *slot = CROCKFORD[(n % 32) as usize];
        n /= 32;
    }
    String::from_utf8(out.to_vec()).unwrap()
}

static LAST: Mutex<Option<(String, u32)>> = Mutex::new(None);

/// `YYYYMMDDThhmmssZ-XXXXXX`. The suffix starts at a random point in the
/// lower half of its range and counts up within the same second, so ids
/// issued by one process sort in creation order.
pub fn new_record_id() -> String {
    let stamp = monotone_now().format("%Y%m%dT%H%M%SZ").to_string();
    let mut last = LAST.lock().unwrap();
    let suffix = match &*last {
        Some((prev, n)) if *prev == stamp && n + 1 < SUFFIX_SPACE => n + 1,
        _ => rand::rng().random_range(0..SUFFIX_SPACE / 2),
    };
    *last = Some((stamp.clone(), suffix));
    format!("{stamp}-{}", encode(suffix))
}

pub fn is_record_id(s: &str) -> bool {
    let Some((stamp, suffix)) = s.split_once('-') else { return false };
    stamp.len() == 16
        && stamp.as_bytes()[8] == b'T'
        && stamp.ends_with('Z')
        && stamp[..8].bytes().chain(stamp[9..15].bytes()).all(|b| b.is_ascii_digit())
        && suffix.len() == SUFFIX_LEN
        && suffix.bytes().all(|b| CROCKFORD.contains(&b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_and_order() {
        let ids: Vec<String> = (0..500).map(|_| new_record_id()).collect();
        assert!(ids.iter().all(|id| is_record_id(id)), "{}", ids[0]);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(encode(0), "000000");
        assert_eq!(encode(SUFFIX_SPACE - 1), "ZZZZZZ");
        assert!(!is_record_id("20260101T000000Z-ILOU00"));
        assert!(!is_record_id(".tmp-x"));
    }
}
