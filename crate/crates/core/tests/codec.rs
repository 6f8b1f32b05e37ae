use std::collections::BTreeSet;

use dri_manet::messages::{decode, decode_prefix, encode, Alarm, MalformedMessage, Message, NodeId};
use proptest::prelude::*;

mod common;
use common::message;

proptest! {
    #[test]
    fn round_trip(msg in message()) {
        let bytes = encode(&msg);
        prop_assert_eq!(bytes[0], msg.kind().tag());
        prop_assert_eq!(decode(&bytes), Ok(msg));
    }

    #[test]
    fn encoding_is_canonical(msg in message()) {
        let bytes = encode(&msg);
        prop_assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..96)) {
        if let Ok(msg) = decode(&bytes) {
            prop_assert_eq!(encode(&msg), bytes);
        }
    }

    #[test]
    fn every_strict_prefix_is_rejected(msg in message()) {
        let bytes = encode(&msg);
        for cut in 0..bytes.len() {
            prop_assert!(decode(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn trailing_bytes_are_rejected(msg in message(), extra in proptest::collection::vec(any::<u8>(), 1..8)) {
        let mut bytes = encode(&msg);
        let n = bytes.len();
        bytes.extend(&extra);
        prop_assert_eq!(decode(&bytes), Err(MalformedMessage::TrailingBytes(extra.len())));
        prop_assert_eq!(decode_prefix(&bytes).map(|(_, used)| used), Ok(n));
    }

    #[test]
    fn single_byte_corruption_never_panics(msg in message(), at in any::<prop::sample::Index>(), b in any::<u8>()) {
        let mut bytes = encode(&msg);
        let i = at.index(bytes.len());
        bytes[i] = b;
        let _ = decode(&bytes);
    }
}

#[test]
fn unknown_tags_and_empty_frames() {
    assert_eq!(decode(&[]), Err(MalformedMessage::Empty));
    assert_eq!(decode(&[0]), Err(MalformedMessage::UnknownTag(0)));
    assert_eq!(decode(&[9, 0, 0]), Err(MalformedMessage::UnknownTag(9)));
}

#[test]
fn hand_built_frames_violating_invariants_are_rejected() {
    // ALARM whose accuser names itself: tag, accuser 1, one member 1, id 3
    let self_accusing = [7, 0, 1, 0, 1, 0, 1, 0, 0, 0, 3];
    assert_eq!(decode(&self_accusing), Err(MalformedMessage::Invariant("accuser in alarm")));
    // same frame with members out of order
    let unsorted = [7, 0, 1, 0, 2, 0, 5, 0, 4, 0, 0, 0, 3];
    assert_eq!(decode(&unsorted), Err(MalformedMessage::NonCanonicalSet));
    let ok =
        Message::Alarm(Alarm { accuser: NodeId(1), blackholes: BTreeSet::from([NodeId(4), NodeId(5)]), alarm_id: 3 });
    assert_eq!(encode(&ok), [7, 0, 1, 0, 2, 0, 4, 0, 5, 0, 0, 0, 3]);
}
