//! Randomized invariants across the public API.

use ncfilter_core::envelope::TAIL_EPS;
use ncfilter_core::filter::{counting_intensity, counting_jump, counting_step, homodyne_step, survival_curve, FilterState};
use ncfilter_core::hierarchy::{evolve, RHO_MINUS, RHO_PLUS};
use ncfilter_core::operator::{ancilla_sandwich, kron, partial_trace_ancilla};
use ncfilter_core::random::{random_density, random_gamma, random_hermitian, random_model, random_unitary, seeded};
use ncfilter_core::scenario::{
    parse_config, preset, print_config, ComponentSpec, EnvelopeSpec, FieldSpec, Format, GammaSpec, GridSpec,
    InitialState, Measurement, OutputSpec, ScenarioConfig, SystemSpec,
};
use ncfilter_core::trajectory::{simulate_counting, simulate_homodyne};
use ncfilter_core::{AmplitudeMode, Envelope, FieldState, Operator, SystemModel, TimeGrid, C64};
use proptest::prelude::*;

fn hs(a: &Operator, b: &Operator) -> C64 {
    a.dag().matmul(b).trace()
}

fn fig1_xi() -> Envelope {
    Envelope::gaussian(1.46, 3.0, AmplitudeMode::UnitNorm).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lindblad_is_trace_free_hermitian_and_dual(seed in any::<u64>(), d in 2usize..=4) {
        let mut rng = seeded(seed);
        let model = random_model(&mut rng, d);
        let rho = random_density(&mut rng, d);
        let x = random_hermitian(&mut rng, d);
        let lr = model.lindblad_apply(&rho).unwrap();
        prop_assert!(lr.trace().norm() < 1e-12);
        prop_assert!(lr.hermiticity_error() < 1e-12);
        let lhs = hs(&model.adjoint_lindblad_apply(&x).unwrap(), &rho);
        let rhs = hs(&x, &lr);
        prop_assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn kron_then_partial_trace_recovers_system(seed in any::<u64>(), d in 1usize..=4) {
        let mut rng = seeded(seed);
        let rho = random_density(&mut rng, d);
        let anc = random_density(&mut rng, 2);
        let ext = kron(&rho, &anc);
        prop_assert!(partial_trace_ancilla(&ext, d).unwrap().max_diff(&rho) < 1e-12);
        let id = Operator::identity(2);
        prop_assert!(ancilla_sandwich(&ext, d, &id, &id).unwrap().max_diff(&rho) < 1e-12);
    }

    #[test]
    fn partial_trace_keeps_the_trace(seed in any::<u64>(), d in 1usize..=4) {
        let mut rng = seeded(seed);
        let ext = random_density(&mut rng, 2 * d);
        let red = partial_trace_ancilla(&ext, d).unwrap();
        prop_assert!((red.trace() - ext.trace()).norm() < 1e-12);
    }

    #[test]
    fn models_accept_hermitian_h_and_unitary_s(seed in any::<u64>(), d in 1usize..=4) {
        let mut rng = seeded(seed);
        let h = random_hermitian(&mut rng, d);
        let s = random_unitary(&mut rng, d);
        let l = random_density(&mut rng, d);
        prop_assert!(SystemModel::new(h.clone(), l.clone(), s).is_ok());
        prop_assert!(SystemModel::new(h, l, &Operator::identity(d) * 1.1).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tail_is_monotone(t1 in 0.0f64..15.0, t2 in 0.0f64..15.0, omega in 0.5f64..3.0, t_c in 0.0f64..6.0) {
        let xi = Envelope::gaussian(omega, t_c, AmplitudeMode::UnitNorm).unwrap();
        let (a, b) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(xi.tail_integral(b) <= xi.tail_integral(a));
        prop_assert!((0.0..=xi.norm() + 1e-15).contains(&xi.tail_integral(a)));
    }

    #[test]
    fn tail_derivative_is_minus_flux(t in 0.05f64..10.0) {
        let xi = fig1_xi();
        let h = 1e-4;
        let fd = (xi.tail_integral(t + h) - xi.tail_integral(t - h)) / (2.0 * h);
        prop_assert!((fd + xi.eval(t).unwrap().norm_sqr()).abs() < 1e-6);
    }

    #[test]
    fn lambda_times_root_tail_is_xi(t in 0.0f64..12.0) {
        let xi = fig1_xi();
        let tail = xi.tail_integral(t);
        prop_assume!(tail >= TAIL_EPS);
        let lam = xi.lambda_coupling(t, TAIL_EPS);
        prop_assert!((lam * tail.sqrt() - xi.eval(t).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn integral_plus_tail_is_norm(horizon in 0.5f64..12.0) {
        let xi = fig1_xi();
        let head = ncfilter_core::quadrature::integrate(|s| xi.eval(s).unwrap().norm_sqr(), 0.0, horizon, 1e-13);
        prop_assert!((head + xi.tail_integral(horizon) - xi.norm()).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn filters_keep_trace_and_adjoint_pair_along_trajectories(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let model = random_model(&mut rng, 2);
        let fs = FieldState::photon_combo(random_gamma(&mut rng), fig1_xi()).unwrap();
        let rho0 = random_density(&mut rng, 2);
        let grid = TimeGrid::new(5e-3, 8.0).unwrap();
        let mut st = FilterState::new(&fs, &rho0).unwrap();
        let mut hst = st.clone();
        let dt = grid.dt();
        for n in 0..grid.n_steps() {
            let t = grid.time(n);
            let jump = n % 300 == 150 && counting_intensity(&st, t, &model, &fs).unwrap() > 1e-6;
            st = if jump {
                let j = counting_jump(&st, t, &model, &fs).unwrap();
                counting_step(&j, t, dt, false, &model, &fs).unwrap().0
            } else {
                counting_step(&st, t, dt, false, &model, &fs).unwrap().0
            };
            let dw = if n % 2 == 0 { dt.sqrt() } else { -dt.sqrt() };
            hst = homodyne_step(&hst, t, dt, dw, &model, &fs).unwrap().0;
            if n % 100 == 0 {
                for s in [&st, &hst] {
                    let m = s.hierarchy().matrices();
                    prop_assert!((s.system_state().trace().re - 1.0).abs() < 1e-6);
                    prop_assert!(m[RHO_PLUS].max_diff(&m[RHO_MINUS].dag()) < 1e-8);
                    prop_assert!(s.system_state().hermiticity_error() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn survival_stays_a_probability(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let model = random_model(&mut rng, 2);
        let a0 = Envelope::gaussian(2.4, 3.0, AmplitudeMode::Coherent).unwrap();
        let a1 = Envelope::gaussian(2.4, 5.0, AmplitudeMode::Coherent).unwrap();
        let w: f64 = rand::Rng::random(&mut rng);
        let fs = FieldState::coherent_mixture(vec![w, 1.0 - w], vec![a0, a1]).unwrap();
        let s = survival_curve(&model, &fs, &random_density(&mut rng, 2), &TimeGrid::new(1e-2, 8.0).unwrap()).unwrap();
        prop_assert!(s.windows(2).all(|p| p[1] <= p[0] + 1e-12));
        prop_assert!(s.iter().all(|&p| (-1e-12..=1.0 + 1e-12).contains(&p)));
    }

    #[test]
    fn counting_records_are_regular(seed in any::<u64>()) {
        let fs = FieldState::photon_combo(ncfilter_core::GammaMatrix::single_photon(), fig1_xi()).unwrap();
        let model = SystemModel::two_level_decay(1.0).unwrap();
        let grid = TimeGrid::new(1e-2, 10.0).unwrap();
        let r = simulate_counting(&model, &fs, &Operator::ket_bra(2, 1, 1), &grid, seed).unwrap();
        r.record.validate().unwrap();
        prop_assert!(r.record.jump_steps.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(r.record.count() <= 2);
        prop_assert!(r.p_exc.iter().chain(&r.rate).all(|x| x.is_finite()));
    }

    #[test]
    fn homodyne_records_are_finite_and_complete(seed in any::<u64>()) {
        let fs = FieldState::photon_combo(ncfilter_core::GammaMatrix::single_photon(), fig1_xi()).unwrap();
        let model = SystemModel::two_level_decay(1.0).unwrap();
        let grid = TimeGrid::new(1e-2, 10.0).unwrap();
        let r = simulate_homodyne(&model, &fs, &Operator::ket_bra(2, 0, 0), &grid, seed).unwrap();
        r.record.validate().unwrap();
        prop_assert_eq!(r.record.dy.len(), grid.n_steps());
        prop_assert!((r.final_state.system_state().trace().re - 1.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_photon_flux_bounds_output(seed in any::<u64>()) {
        // the atom cannot hold more excitation than the light has delivered
        let mut rng = seeded(seed);
        let g = random_gamma(&mut rng);
        let fs = FieldState::photon_combo(g, fig1_xi()).unwrap();
        let model = SystemModel::two_level_decay(1.0).unwrap();
        let grid = TimeGrid::new(1e-2, 10.0).unwrap();
        for (n, st) in evolve(&model, &fs, &Operator::ket_bra(2, 0, 0), &grid).unwrap().iter().enumerate().step_by(25) {
            let p = st.system_state(None).unwrap()[(1, 1)].re;
            let delivered = g.g11 * (1.0 - fig1_xi().tail_integral(grid.time(n)));
            prop_assert!(p <= delivered + 1e-9);
        }
    }
}

fn envelope_strategy() -> impl Strategy<Value = EnvelopeSpec> {
    (0.5f64..4.0, 0.5f64..6.0).prop_map(|(omega, t_c)| EnvelopeSpec::Gaussian { omega, t_c })
}

fn field_strategy() -> impl Strategy<Value = FieldSpec> {
    let photon = (0.0f64..=1.0, 0.0f64..1.0, 0.0f64..std::f64::consts::TAU, envelope_strategy()).prop_map(
        |(g11, r, phase, envelope)| {
            let g00 = 1.0 - g11;
            let m = r * (g00 * g11).sqrt();
            FieldSpec::PhotonCombo {
                gamma: GammaSpec {
                    g00,
                    g11,
                    g01: [m * phase.cos(), m * phase.sin()],
                },
                envelope,
            }
        },
    );
    let coherent = (0.0f64..=1.0, envelope_strategy(), envelope_strategy()).prop_map(|(p, a, b)| {
        FieldSpec::CoherentMixture {
            components: vec![
                ComponentSpec { weight: p, envelope: a },
                ComponentSpec {
                    weight: 1.0 - p,
                    envelope: b,
                },
            ],
        }
    });
    prop_oneof![photon, coherent]
}

fn system_strategy() -> impl Strategy<Value = SystemSpec> {
    let preset = (0.1f64..5.0).prop_map(SystemSpec::two_level_decay);
    let explicit = (any::<u64>(), 1usize..=3).prop_map(|(seed, d)| {
        let mut rng = seeded(seed);
        let m = random_model(&mut rng, d);
        let rows = |o: &Operator| o.rows().iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect();
        SystemSpec {
            dim: Some(d),
            h: Some(rows(m.h())),
            l: Some(rows(m.l())),
            s: Some(rows(m.s())),
            ..Default::default()
        }
    });
    prop_oneof![preset, explicit]
}

fn config_strategy() -> impl Strategy<Value = ScenarioConfig> {
    (
        system_strategy(),
        field_strategy(),
        prop_oneof![Just(Measurement::None), Just(Measurement::Counting), Just(Measurement::Homodyne)],
        (1e-4f64..1e-1, proptest::option::of(1.0f64..20.0)),
        (1usize..5000, any::<u64>()),
        (proptest::option::of("[a-z]{1,8}"), any::<bool>()),
        any::<bool>(),
    )
        .prop_map(|(system, field, measurement, (dt, horizon), (m, seed), (name, json), ground)| {
            let ground = ground || system.preset.is_none() && system.dim == Some(1);
            ScenarioConfig {
                name: name.clone(),
                system,
                initial_state: if ground { InitialState::Ground } else { InitialState::Excited },
                field,
                measurement,
                grid: GridSpec { dt, horizon },
                ensemble: ncfilter_core::scenario::EnsembleSpec {
                    trajectories: m,
                    master_seed: seed,
                },
                output: OutputSpec {
                    path: name.map(|n| format!("runs/{n}.dat")),
                    format: if json { Format::Json } else { Format::Csv },
                },
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn configs_round_trip(cfg in config_strategy()) {
        prop_assert_eq!(parse_config(&print_config(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn hash_tracks_semantic_fields_only(cfg in config_strategy(), bump in 1u64..1000) {
        let h = cfg.hash().unwrap();
        let mut cosmetic = cfg.clone();
        cosmetic.name = Some("renamed".into());
        cosmetic.output.format = match cfg.output.format {
            Format::Csv => Format::Json,
            Format::Json => Format::Csv,
        };
        cosmetic.output.path = None;
        prop_assert_eq!(cosmetic.hash().unwrap(), h.clone());

        let mut dt = cfg.clone();
        dt.grid.dt *= 1.5;
        prop_assert_ne!(dt.hash().unwrap(), h.clone());

        let mut field = cfg.clone();
        match &mut field.field {
            FieldSpec::PhotonCombo { envelope: EnvelopeSpec::Gaussian { t_c, .. }, .. } => *t_c += 0.25,
            FieldSpec::CoherentMixture { components } => match &mut components[0].envelope {
                EnvelopeSpec::Gaussian { omega, .. } => *omega += 0.25,
                EnvelopeSpec::Tabulated { .. } => unreachable!(),
            },
            FieldSpec::PhotonCombo { .. } => unreachable!(),
        }
        prop_assert_ne!(field.hash().unwrap(), h.clone());

        let mut start = cfg.clone();
        start.initial_state = InitialState::Density(vec![vec![[1.0, 0.0]]]);
        prop_assert_ne!(start.hash().unwrap(), h.clone());

        let mut seed = cfg.clone();
        seed.ensemble.master_seed = cfg.ensemble.master_seed.wrapping_add(bump);
        if cfg.measurement == Measurement::None {
            prop_assert_eq!(seed.hash().unwrap(), h);
        } else {
            prop_assert_ne!(seed.hash().unwrap(), h);
        }
    }
}

#[test]
fn presets_round_trip_through_text() {
    for name in ncfilter_core::scenario::PRESETS {
        let cfg = preset(name).unwrap();
        assert_eq!(parse_config(&print_config(&cfg)).unwrap(), cfg);
    }
}
