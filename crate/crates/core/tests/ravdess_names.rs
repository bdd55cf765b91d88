use std::collections::HashMap;

use surpsel_core::corpus::{CorpusError, Intensity, RavdessEmotion, RavdessName};
use surpsel_core::{EmotionLabel, Sex};

fn table() -> HashMap<(String, u8), String> {
    include_str!("fixtures/ravdess_naming.tsv")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            ((f[0].to_string(), f[1].parse().unwrap()), f[2].to_string())
        })
        .collect()
}

fn emotion_name(e: RavdessEmotion) -> &'static str {
    match e {
        RavdessEmotion::Neutral => "neutral",
        RavdessEmotion::Calm => "calm",
        RavdessEmotion::Happy => "happy",
        RavdessEmotion::Sad => "sad",
        RavdessEmotion::Angry => "angry",
        RavdessEmotion::Fearful => "fearful",
        RavdessEmotion::Disgust => "disgust",
        RavdessEmotion::Surprised => "surprised",
    }
}

#[test]
fn every_code_matches_the_naming_table() {
    let t = table();
    for emotion in 1..=8u8 {
        for statement in 1..=2u8 {
            for intensity in 1..=2u8 {
                let name = format!("03-01-{emotion:02}-{intensity:02}-{statement:02}-02-17.wav");
                let n = RavdessName::parse(&name).unwrap();
                assert_eq!(emotion_name(n.emotion()), t[&("emotion".to_string(), emotion)]);
                assert_eq!(n.transcript(), t[&("statement".to_string(), statement)]);
                let want = if t[&("intensity".to_string(), intensity)] == "normal" { Intensity::Normal } else { Intensity::Strong };
                assert_eq!(n.intensity(), want);
                assert_eq!(n.to_string(), name);
            }
        }
    }
    assert!(RavdessName::parse("03-01-01-01-01-01-01.wav").unwrap().is_speech());
    assert!(!RavdessName::parse("03-02-01-01-01-01-01.wav").unwrap().is_speech());
}

#[test]
fn sexes_and_merged_labels() {
    for actor in 1..=24u8 {
        let n = RavdessName::parse(&format!("03-01-02-01-01-01-{actor:02}.wav")).unwrap();
        assert_eq!(n.sex(), if actor % 2 == 1 { Sex::Male } else { Sex::Female });
        assert_eq!(n.label(), EmotionLabel::NeutralCalm);
    }
    let labels: std::collections::BTreeSet<EmotionLabel> = (1..=8u8)
        .map(|e| RavdessName::parse(&format!("03-01-{e:02}-01-01-01-01.wav")).unwrap().label())
        .collect();
    assert_eq!(labels.len(), 7);
}

#[test]
fn malformed_fields_are_indexed() {
    let field = |name: &str| match RavdessName::parse(name) {
        Err(CorpusError::MalformedName { field, .. }) => field,
        other => panic!("{name}: {other:?}"),
    };
    assert_eq!(field("04-01-01-01-01-01-01.wav"), 1);
    assert_eq!(field("03-03-01-01-01-01-01.wav"), 2);
    assert_eq!(field("03-01-09-01-01-01-01.wav"), 3);
    assert_eq!(field("03-01-01-01-01-01-25.wav"), 7);
    assert_eq!(field("03-01-01-01-01-01-00.wav"), 7);
    assert_eq!(field("03-01-01-01-01-01-01.mp3"), 7);
    assert_eq!(field("03-01-1-01-01-01-01.wav"), 3);
}
