//! Reference topic matcher and delivery checks.

use std::collections::BTreeMap;

use proptest::prelude::*;
use tdcosim::msgbus::{topic_matches, Broker, BusClient, Envelope, Payload};


/// Straightforward recursive MQTT matcher used as the reference.
pub fn reference(filter: &[&str], topic: &[&str]) -> bool {
    match (filter.split_first(), topic.split_first()) {
        (Some((&"#", _)), _) => true,
        (None, None) => true,
        (Some((&"+", fr)), Some((_, tr))) => reference(fr, tr),
        (Some((f, fr)), Some((t, tr))) => f == t && reference(fr, tr),
        _ => false,
    }
}

pub fn level() -> impl Strategy<Value = String> {
    prop_oneof![Just("a".to_string()), Just("b".to_string()), Just("ts".to_string()), Just("x1".to_string())]
}

pub fn topic() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(level(), 1..5)
}

pub fn filter() -> impl Strategy<Value = Vec<String>> {
    let lvl = prop_oneof![3 => level(), 1 => Just("+".to_string())];
    (prop::collection::vec(lvl, 0..5), any::<bool>()).prop_filter_map("non-empty", |(mut v, hash)| {
        if hash {
            v.push("#".to_string());
        }
        (!v.is_empty()).then_some(v)
    })
}


pub fn matcher_case(f: &[String], t: &[String]) -> Result<(), TestCaseError> {
    let fs: Vec<&str> = f.iter().map(String::as_str).collect();
    let ts: Vec<&str> = t.iter().map(String::as_str).collect();
    let got = topic_matches(&f.join("/"), &t.join("/")).unwrap();
    prop_assert_eq!(got, reference(&fs, &ts), "filter {} topic {}", f.join("/"), t.join("/"));
    Ok(())
}

/// Every subscriber gets each matching message exactly once, in publish order,
/// however many of its filters overlap.
pub fn exactly_once_case(subs: &[Vec<Vec<String>>], msgs: &[(Vec<String>, usize)]) -> Result<(), TestCaseError> {
    let broker = Broker::new();
    let mut clients = Vec::new();
    for (i, filters) in subs.iter().enumerate() {
        let mut c = broker.connect(&format!("s{i}")).unwrap();
        for f in filters {
            c.subscribe(&format!("free/{}", f.join("/"))).unwrap();
        }
        clients.push(c);
    }
    let mut publisher_tick = BTreeMap::new();
    for (k, (t, publisher)) in msgs.iter().enumerate() {
        let tick = publisher_tick.entry(*publisher).or_insert(0u64);
        *tick += (k % 2) as u64;
        let env = Envelope::build(&format!("free/{}", t.join("/")), *tick, &format!("p{publisher}"), Payload::Frequency { hz: k as f64 }).unwrap();
        broker.publish(env).unwrap();
    }
    for (c, filters) in clients.iter_mut().zip(subs) {
        let expected: Vec<f64> = msgs
            .iter()
            .enumerate()
            .filter(|(_, (t, _))| {
                let topic = format!("free/{}", t.join("/"));
                filters.iter().any(|f| {
                    let mut full = vec!["free"];
                    full.extend(f.iter().map(String::as_str));
                    let tl: Vec<&str> = topic.split('/').collect();
                    reference(&full, &tl)
                })
            })
            .map(|(k, _)| k as f64)
            .collect();
        let mut got = Vec::new();
        while let Some(env) = c.try_recv().unwrap() {
            if let Payload::Frequency { hz } = env.payload {
                got.push(hz);
            }
        }
        prop_assert_eq!(got, expected);
    }
    Ok(())
}

pub fn subscriptions() -> impl Strategy<Value = Vec<Vec<Vec<String>>>> {
    prop::collection::vec(prop::collection::vec(filter(), 1..4), 1..5)
}

pub fn messages() -> impl Strategy<Value = Vec<(Vec<String>, usize)>> {
    prop::collection::vec((topic(), 0usize..3), 1..40)
}
