//! Intervention semantics on the seeded transformer.

use culturesteer::hash::SplitMix64;
use culturesteer::model::{InterventionSpec, LanguageModel, ModelConfig, PerplexityScoring, Position, Session, TinyTransformer};

fn model() -> TinyTransformer {
    TinyTransformer::init(&ModelConfig::default()).unwrap()
}

fn random_vector(rng: &mut SplitMix64, d: usize) -> Vec<f32> {
    (0..d).map(|_| (rng.next_f64() * 2.0 - 1.0) as f32).collect()
}

#[test]
fn zero_alpha_is_a_bitwise_no_op() {
    let m = model();
    let mut rng = SplitMix64::new(9);
    for i in 0..10 {
        let prompt = m.prompt_tokens(&format!("prompt number {i}: values and choices")).unwrap();
        let mut spec = InterventionSpec::none();
        for l in 0..m.n_layers() {
            spec.push(l, random_vector(&mut rng, m.d_model()), 0.0);
        }
        let plain = Session::new(&m);
        let zero = Session::with_interventions(&m, spec).unwrap();
        assert_eq!(
            m.forward(&prompt, &InterventionSpec::none(), &[]).unwrap().logits,
            m.forward(&prompt, zero.interventions(), &[]).unwrap().logits
        );
        assert_eq!(
            plain.generate(&prompt, 16, 0.7, i).unwrap(),
            zero.generate(&prompt, 16, 0.7, i).unwrap()
        );
        let a = plain.perplexity(&prompt, 16, 0.7, i, PerplexityScoring::SelfScored);
        let b = zero.perplexity(&prompt, 16, 0.7, i, PerplexityScoring::SelfScored);
        assert_eq!(a.ok().map(f64::to_bits), b.ok().map(f64::to_bits));
    }
}

#[test]
fn injection_is_local_and_linear() {
    let m = model();
    let mut rng = SplitMix64::new(5);
    let tokens = m.prompt_tokens("A short scenario about trust.").unwrap();
    let caps: Vec<(usize, Position)> = (0..m.n_layers()).map(|l| (l, Position::Last)).collect();
    let last = tokens.len() - 1;
    let base = m.forward(&tokens, &InterventionSpec::none(), &caps).unwrap().captured;
    for layer in [0, 3, 7] {
        let v = random_vector(&mut rng, m.d_model());
        let one = m
            .forward(&tokens, &InterventionSpec::single(layer, v.clone(), 0.2), &caps)
            .unwrap()
            .captured;
        let two = m
            .forward(&tokens, &InterventionSpec::single(layer, v.clone(), 0.4), &caps)
            .unwrap()
            .captured;
        for l in 0..layer {
            assert_eq!(one[&(l, last)], base[&(l, last)]);
        }
        for j in 0..m.d_model() {
            let d1 = one[&(layer, last)][j] - base[&(layer, last)][j];
            let d2 = two[&(layer, last)][j] - base[&(layer, last)][j];
            assert!((d1 - 0.2 * v[j]).abs() <= 1e-6);
            assert!((d2 - 2.0 * d1).abs() <= 1e-5);
        }
    }
}
