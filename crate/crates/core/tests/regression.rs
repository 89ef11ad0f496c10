//! Frozen detection counts for a fixed train/test seed pair. A change here
//! means the generator, screening or classifier behaves differently.

use recloser_core::config::PipelineConfig;
use recloser_core::eval::EvalSummary;
use recloser_core::pipeline::{evaluate, train_dictionaries};
use recloser_core::synth::{gen_corpus, ScenarioMix};
use recloser_core::waveform::Family;

fn baseline() -> EvalSummary {
    let cfg = PipelineConfig::default();
    let mix = ScenarioMix::default();
    let train = gen_corpus(100, &mix, 1).unwrap();
    let test = gen_corpus(200, &mix, 3).unwrap();
    let (dicts, _) = train_dictionaries(train.events.iter().map(|e| (&e.record, &e.truth)), &cfg).unwrap();
    evaluate(test.events.iter().map(|e| (&e.record, &e.truth)), &dicts, &cfg).unwrap()
}

#[test]
fn default_corpus_counts() {
    let s = baseline();
    let counts: Vec<_> = Family::ALL
        .iter()
        .map(|&f| {
            let e = s.family(f);
            (f.name(), e.n_true_pulses, e.true_positives, e.false_positives)
        })
        .collect();
    assert_eq!(s.n_events, 200);
    assert_eq!(counts, vec![("ss_voltage", 234, 234, 0), ("ls_voltage", 724, 724, 0), ("ls_current", 64, 64, 0)]);
}
