#![no_main]

use gravidy::bench::{Geometry, InnerId, MethodId};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = s.parse::<MethodId>() {
        assert_eq!(m.to_string().parse::<MethodId>().ok(), Some(m));
    }
    if let Ok(i) = s.parse::<InnerId>() {
        assert_eq!(i.to_string().parse::<InnerId>().ok(), Some(i));
    }
    if let Ok(g) = s.parse::<Geometry>() {
        assert_eq!(g.to_string().parse::<Geometry>().ok(), Some(g));
    }
    let (geometry, rest) = s.split_once(':').unwrap_or(("pos", s));
    let (method, inner) = rest.split_once(':').unwrap_or((rest, ""));
    if let Ok(g) = geometry.parse::<Geometry>() {
        let _ = MethodId::parse_with_inner(method, inner.parse().ok(), g);
    }
});
