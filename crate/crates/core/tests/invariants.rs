mod common;

use std::collections::BTreeMap;

use common::*;
use mixlaw::fit::{fit_explicit, fit_implicit, Dataset, ImplicitObjective};
use mixlaw::io::{read_runs, write_runs};
use mixlaw::model::weighted_median_index;
use mixlaw::record::LossTarget;
use mixlaw::{
    argmin_mixture, critical_proportion, enumerate_candidates, eval_m4, eval_two_domain, sample_design, ArtifactModel,
    DesignSpace, DomainLaw, EnsembleModel, ExpDomainLaw, FitConfig, LawArtifact, LawForm, LossSurface, Mixture,
    MixingLawModel, OptimizeConfig, Predictor, Provenance,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn simplex(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, m).prop_filter_map("degenerate", |raw| {
        let total: f64 = raw.iter().sum();
        (total > 1e-3).then(|| raw.iter().map(|v| v / total).collect())
    })
}

fn law(m: usize) -> impl Strategy<Value = ExpDomainLaw> {
    (0.0f64..4.0, 0.01f64..3.0, prop::collection::vec(-5.0f64..5.0, m))
        .prop_map(|(c, k, t)| ExpDomainLaw::new(c, k, t).unwrap())
}

fn law_and_point() -> impl Strategy<Value = (ExpDomainLaw, Vec<f64>)> {
    (2usize..7).prop_flat_map(|m| (law(m), simplex(m)))
}

fn fitted_records(seed: u64, n: usize, sigma: f64) -> Vec<mixlaw::RunRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = random_law(&mut rng, 3);
    let mixtures: Vec<Vec<f64>> = (0..n).map(|_| random_mixture(&mut rng, 3)).collect();
    let losses: Vec<BTreeMap<String, f64>> = mixtures
        .iter()
        .map(|r| BTreeMap::from([("target".to_string(), truth.eval_raw(r) + noise(&mut rng, sigma))]))
        .collect();
    let overall: Vec<f64> = losses.iter().map(|l| l["target"]).collect();
    records(&mixtures, &losses, Some(&overall))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mixtures_close_on_the_simplex(r in (1usize..8).prop_flat_map(simplex), bump in 1e-7f64..0.5) {
        let mixture = Mixture::from_proportions(r.clone()).unwrap();
        prop_assert!((mixture.proportions().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let mut off = r;
        off[0] += bump;
        prop_assert!(Mixture::from_proportions(off).is_err());
    }

    #[test]
    fn loss_stays_above_the_constant((law, r) in law_and_point()) {
        let mixture = Mixture::from_proportions(r).unwrap();
        prop_assert!(eval_m4(&law, &mixture).unwrap() > law.c());
    }

    #[test]
    fn permutation_is_bit_exact((law, r) in law_and_point(), shift in 0usize..7, flip in any::<bool>()) {
        let m = r.len();
        let mut order: Vec<usize> = (0..m).collect();
        if flip {
            order.reverse();
        }
        order.rotate_left(shift % m);
        let permuted: Vec<f64> = order.iter().map(|&i| r[i]).collect();
        prop_assert_eq!(law.permuted(&order).unwrap().eval_raw(&permuted).to_bits(), law.eval_raw(&r).to_bits());
    }

    #[test]
    fn two_domain_form_is_the_m2_case(c in 0.0f64..4.0, k in 0.01f64..3.0, t in -10.0f64..10.0, x in 0.0f64..=1.0) {
        let two = ExpDomainLaw::two_domain(c, k, t).unwrap();
        let m4 = ExpDomainLaw::new(c, k, vec![t, 0.0]).unwrap();
        let r = Mixture::from_proportions(vec![x, 1.0 - x]).unwrap();
        prop_assert!((eval_m4(&m4, &r).unwrap() - eval_two_domain(&two, x).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn partial_derivative_has_the_sign_of_t((law, r) in law_and_point()) {
        let h = 1e-6;
        for j in 0..r.len() {
            if law.t()[j].abs() > 1e-3 {
                let (mut up, mut down) = (r.clone(), r.clone());
                up[j] += h;
                down[j] -= h;
                let slope = (law.eval_raw(&up) - law.eval_raw(&down)) / (2.0 * h);
                prop_assert_eq!(slope.signum(), law.t()[j].signum());
            }
        }
    }

    #[test]
    fn overall_is_linear_in_the_weights(
        laws in prop::collection::vec(law(3), 3),
        r in simplex(3),
        a in simplex(3),
        b in simplex(3),
        lambda in 0.0f64..=1.0,
    ) {
        let domain_laws: Vec<DomainLaw> = laws.into_iter().map(DomainLaw::from).collect();
        let labels = vec!["x".to_string(), "y".to_string(), "z".to_string()];
        let mixed: Vec<f64> = a.iter().zip(&b).map(|(u, v)| lambda * u + (1.0 - lambda) * v).collect();
        let model = |w: Vec<f64>| MixingLawModel::explicit(domain_laws.clone(), labels.clone(), w, names(3)).unwrap();
        let blended = model(mixed).overall_raw(&r);
        let expected = lambda * model(a).overall_raw(&r) + (1.0 - lambda) * model(b).overall_raw(&r);
        prop_assert!((blended - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn ensemble_output_is_a_member_output(
        members in prop::collection::vec(law(3), 1..8),
        weights in prop::collection::vec(0.01f64..3.0, 8),
        r in simplex(3),
    ) {
        let models: Vec<MixingLawModel> =
            members.iter().map(|l| MixingLawModel::implicit(vec![l.clone()], vec![1.0], names(3)).unwrap()).collect();
        let ensemble = EnsembleModel::new(models.clone(), weights[..models.len()].to_vec()).unwrap();
        let values: Vec<f64> = models.iter().map(|m| m.overall_raw(&r)).collect();
        let v = ensemble.overall_raw(&r);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= v && v <= hi);
        prop_assert_eq!(v, values[weighted_median_index(&values, &weights[..values.len()])]);
    }

    #[test]
    fn critical_matches_bisection(c in 0.0f64..3.0, k in 0.01f64..3.0, t in -8.0f64..8.0, l0 in 0.0f64..25.0) {
        prop_assume!(t.abs() > 1e-3);
        let law = ExpDomainLaw::two_domain(c, k, t).unwrap();
        if let (Ok(closed), Some(reference)) = (critical_proportion(&law, l0), bisect(|r| c + k * (t * r).exp() - l0)) {
            prop_assert!((closed - reference).abs() <= 1e-9, "{} vs {}", closed, reference);
        }
    }

    #[test]
    fn run_tables_round_trip(seed in any::<u64>(), n in 1usize..20, tab in any::<bool>()) {
        let recs = fitted_records(seed, n, 0.01);
        let delimiter = if tab { b'\t' } else { b',' };
        let mut buffer = Vec::new();
        write_runs(&mut buffer, &recs, delimiter).unwrap();
        prop_assert_eq!(read_runs(buffer.as_slice(), delimiter).unwrap(), recs);
    }

    #[test]
    fn sampled_designs_are_feasible(
        raw in prop::collection::vec(0.05f64..=1.0, 2..5),
        delta_pow in 2i32..6,
        n in 1usize..12,
        seed in any::<u64>(),
    ) {
        let mut r_max = raw;
        r_max.sort_by(|a, b| b.total_cmp(a));
        let space = DesignSpace::new(r_max.clone(), 0.5f64.powi(delta_pow), n).unwrap();
        let Ok((zero, nonzero)) = enumerate_candidates(&space) else { return Ok(()) };
        let total = zero.len() + nonzero.len();
        prop_assert!(zero.iter().all(|m| m.has_zero()) && nonzero.iter().all(|m| !m.has_zero()));
        let mut keys: Vec<Vec<u64>> = zero.iter().chain(&nonzero).map(Mixture::key).collect();
        keys.sort();
        keys.dedup();
        prop_assert_eq!(keys.len(), total);
        match sample_design(&space, seed) {
            Ok(result) => {
                prop_assert_eq!(result.sampled.len(), n);
                for m in &result.sampled {
                    prop_assert!(m.proportions().iter().zip(&r_max).all(|(v, hi)| *v <= hi + 1e-12));
                    prop_assert!((m.proportions().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
                prop_assert_eq!(sample_design(&space, seed).unwrap(), result);
            }
            Err(_) => prop_assert!(total < n),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn argmin_is_feasible_and_shift_invariant(
        laws in prop::collection::vec(law(3), 1..4),
        shift in 0.0f64..2.0,
        upper in 0.3f64..=1.0,
    ) {
        let k = laws.len();
        let labels: Vec<String> = (0..k).map(|i| format!("v{i}")).collect();
        let weights = vec![1.0 / k as f64; k];
        let build = |delta: f64| {
            let shifted: Vec<DomainLaw> = laws.iter().map(|l| l.shifted(delta).unwrap().into()).collect();
            MixingLawModel::explicit(shifted, labels.clone(), weights.clone(), names(3)).unwrap()
        };
        let config = OptimizeConfig { bounds: Some(vec![[0.0, upper], [0.0, 1.0], [0.0, 1.0]]), ..OptimizeConfig::default() };
        let base = argmin_mixture(&build(0.0), &config).unwrap();
        let moved = argmin_mixture(&build(shift), &config).unwrap();
        let r = base.mixture.proportions();
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(r.iter().all(|v| *v >= -1e-9) && r[0] <= upper + 1e-9);
        prop_assert!(base.loss <= base.grid_loss);
        prop_assert_eq!(&base.grid_mixture, &moved.grid_mixture);
        prop_assert!((moved.loss - base.loss - shift).abs() <= 1e-9);
    }

    #[test]
    fn duplicate_record_keeps_training_mae(seed in any::<u64>(), pick in 0usize..20) {
        let recs = fitted_records(seed, 20, 0.0);
        let config = FitConfig { restarts: 4, ..FitConfig::default() };
        let base = fit_explicit(&recs, "target", LawForm::M4, &config).unwrap();
        let mut doubled = recs.clone();
        let mut extra = recs[pick].clone();
        extra.run_id.push_str("-copy");
        doubled.push(extra);
        let again = fit_explicit(&doubled, "target", LawForm::M4, &config).unwrap();
        prop_assert!(again.train_mae <= base.train_mae + 1e-9);
    }

    #[test]
    fn more_restarts_never_hurt(seed in any::<u64>(), n in 1usize..6) {
        let recs = fitted_records(seed, 24, 0.01);
        let config = |restarts| FitConfig { restarts, seed, ..FitConfig::default() };
        let fewer = fit_explicit(&recs, "target", LawForm::M4, &config(n)).unwrap();
        let more = fit_explicit(&recs, "target", LawForm::M4, &config(n + 2)).unwrap();
        prop_assert!(more.objective <= fewer.objective);
    }

    #[test]
    fn implicit_gradient_matches_differences(seed in any::<u64>(), k in 1usize..5) {
        let recs = fitted_records(seed, 16, 0.02);
        let data = Dataset::from_records(&recs, &LossTarget::Overall).unwrap();
        let objective = ImplicitObjective::new(data, k, 1e-3);
        let theta = objective.initial(&FitConfig::default().with_seed(seed), 0);
        let mut grad = vec![0.0; theta.len()];
        objective.value_and_gradient(&theta, &mut grad);
        let h = 1e-5;
        let mut err = 0.0;
        let mut scale = 0.0;
        for j in 0..theta.len() {
            let (mut up, mut down) = (theta.clone(), theta.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (objective.value(&up) - objective.value(&down)) / (2.0 * h);
            err += (fd - grad[j]).powi(2);
            scale += fd.powi(2).max(grad[j].powi(2));
        }
        prop_assert!(err.sqrt() <= 1e-4 * scale.sqrt().max(1e-12));
    }
}

#[test]
fn fits_are_deterministic() {
    let recs = fitted_records(3, 20, 0.01);
    let config = FitConfig { implicit_domains: 3, restarts: 3, descent_iters: 800, seed: 9, ..FitConfig::default() };
    assert_eq!(fit_implicit(&recs, &config).unwrap(), fit_implicit(&recs, &config).unwrap());
    let a = fit_explicit(&recs, "target", LawForm::M4, &config).unwrap();
    let b = fit_explicit(&recs, "target", LawForm::M4, &config).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn fitted_models_are_valid() {
    let recs = fitted_records(5, 20, 0.01);
    let config = FitConfig { implicit_domains: 4, restarts: 3, descent_iters: 800, ..FitConfig::default() };
    let model = fit_implicit(&recs, &config).unwrap().model;
    assert!((model.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    for law in model.domain_laws() {
        let law = law.as_m4().unwrap();
        assert!(law.k() > 0.0 && law.c() >= 0.0);
    }
}

#[test]
fn artifacts_round_trip_through_files() {
    let recs = fitted_records(1, 20, 0.01);
    let model = fit_explicit(&recs, "target", LawForm::M4, &FitConfig::default()).unwrap().model;
    let artifact = LawArtifact::new(ArtifactModel::Predictor(Predictor::Mixing(model)), Provenance::default());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("law.json");
    artifact.save(&path).unwrap();
    assert_eq!(LawArtifact::load(&path).unwrap(), artifact);
}
