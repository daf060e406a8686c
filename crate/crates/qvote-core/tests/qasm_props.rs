//! Property tests for the QASM codec: roundtrip identity over random
//! frames and no silent mis-decodes under document mutation.

use proptest::prelude::*;

use qvote_core::bb84::{Basis, PreparedFrame, QubitPrep};
use qvote_core::qasm::{emit_prep, parse_prep};

fn arb_frame(max_qubits: usize) -> impl Strategy<Value = PreparedFrame> {
    prop::collection::vec((any::<bool>(), any::<bool>()), 1..=max_qubits).prop_map(|pairs| {
        PreparedFrame::from_preps(
            pairs
                .into_iter()
                .map(|(bit, diagonal)| QubitPrep {
                    bit,
                    basis: if diagonal {
                        Basis::Diagonal
                    } else {
                        Basis::Rectilinear
                    },
                })
                .collect(),
        )
        .expect("non-empty by construction")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn parse_inverts_emit(frame in arb_frame(256)) {
        let program = emit_prep(&frame);
        let parsed = parse_prep(program.text()).unwrap();
        prop_assert_eq!(parsed, frame);
    }

    #[test]
    fn accepted_mutations_reencode_canonically(
        frame in arb_frame(32),
        edits in prop::collection::vec((any::<prop::sample::Index>(), 0usize..3, any::<prop::sample::Index>()), 1..4),
    ) {
        // Mutate the canonical document with random single-character edits.
        // Whatever still parses must re-emit to a canonical form that
        // re-parses to the same frame: no accepted document may decode
        // ambiguously.
        const CHARSET: &[u8] = b"xhq[];0123456789 \nOPENQASM.//crb";
        let canonical = emit_prep(&frame).text().to_string();
        let mut doc: Vec<u8> = canonical.into_bytes();
        for (position, kind, replacement) in edits {
            if doc.is_empty() {
                break;
            }
            let at = position.index(doc.len());
            let c = CHARSET[replacement.index(CHARSET.len())];
            match kind {
                0 => doc[at] = c,
                1 => doc.insert(at, c),
                _ => {
                    doc.remove(at);
                }
            }
        }
        if let Ok(text) = String::from_utf8(doc) {
            if let Ok(decoded) = parse_prep(&text) {
                let reemitted = emit_prep(&decoded);
                let reparsed = parse_prep(reemitted.text()).unwrap();
                prop_assert_eq!(reparsed, decoded);
            }
        }
    }
}

#[test]
fn parse_rejects_pathological_inputs_without_panicking() {
    for text in [
        "",
        ";",
        "OPENQASM",
        "OPENQASM 3.0",
        "OPENQASM 3.0;;",
        "OPENQASM 3.0; qubit[1] q",
        "OPENQASM 3.0; qubit[99999999999999999999] q;",
        "OPENQASM 3.0; qubit[1] q; x q[0]; x q[0];",
        "OPENQASM 3.0; qubit[1] q; x q[];",
        "OPENQASM 3.0; qubit[1] q; x [0];",
        "// only a comment",
        "OPENQASM 3.0; qubit[2] q; h q[1]; cx q[0], q[1];",
    ] {
        assert!(parse_prep(text).is_err(), "accepted {text:?}");
    }
}
