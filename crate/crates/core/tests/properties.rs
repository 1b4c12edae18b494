mod oracles;

use proptest::prelude::*;

use flare_core::campaign::feedback;
use flare_core::corpus::{ModelConfig, SeedPool};
use flare_core::coverage::{match_path, relax_trace, RelaxRule, TraceNode};
use flare_core::logs::{condense_utterance, split_sentences};
use flare_core::mutation::{mutate, MutationSettings, OperatorKind, OperatorTable};
use flare_core::rng::FlareRng;
use flare_core::spec::{
    enumerate_free_form_paths, AgentId, DependencyClosure, ExecutionPathSpace, Path, Pattern,
};
use flare_core::weights::WeightParams;

use oracles::*;

proptest! {
    #[test]
    fn path_space_equals_brute_force(n in 1usize..=6, density in 0.0f64..0.8, seed in any::<u64>()) {
        let agents = agents(n);
        let deps = random_dag(&agents, density, &mut FlareRng::seeded(seed));
        let space = enumerate_free_form_paths(&agents, &deps, None).unwrap();
        let got: Vec<Vec<AgentId>> = space.legal_paths.iter().map(|p| p.nodes.clone()).collect();
        let unique: std::collections::BTreeSet<_> = got.iter().cloned().collect();
        prop_assert_eq!(unique.len(), got.len(), "duplicate paths");
        prop_assert_eq!(unique, legal_orders(&agents, &deps));
    }

    #[test]
    fn max_turns_excludes_whole_paths(n in 2usize..=5, seed in any::<u64>()) {
        let agents = agents(n);
        let deps = random_dag(&agents, 0.3, &mut FlareRng::seeded(seed));
        prop_assert!(enumerate_free_form_paths(&agents, &deps, Some(n as u32 - 1)).is_err());
        let full = enumerate_free_form_paths(&agents, &deps, Some(n as u32)).unwrap();
        prop_assert!(full.legal_paths.iter().all(|p| p.nodes.len() == n));
    }

    #[test]
    fn weights_stay_clamped(
        outcomes in prop::collection::vec((any::<bool>(), 0usize..3, 0usize..4), 1..300),
    ) {
        let params = WeightParams::default();
        let agents = agents(2);
        let config = ModelConfig::uniform(&agents, "gpt-4.1", 0.7);
        let mut pool = SeedPool::init(&["t1".into(), "t2".into()], &config, &agents, params, 0).unwrap();
        let mut ops = OperatorTable::new(params).unwrap();
        for (gained, seed, op) in outcomes {
            let kind = OperatorKind::ALL[op];
            let (ws, wo) = (pool.seeds()[seed].weight, ops.weight(kind));
            feedback(gained, seed as u64, kind, &mut pool, &mut ops).unwrap();
            let (ws2, wo2) = (pool.seeds()[seed].weight, ops.weight(kind));
            for (before, after) in [(ws, ws2), (wo, wo2)] {
                prop_assert!((params.w_min..=params.w_max).contains(&after));
                prop_assert!((after - before).abs() <= params.w_step + 1e-12);
                let direction_ok = if gained { after >= before } else { after <= before };
                prop_assert!(direction_ok);
            }
        }
    }

    #[test]
    fn mutation_invariants(seed in any::<u64>(), free_form in any::<bool>(), start in 0usize..2) {
        let agents: Vec<AgentId> = ["script_writer", "voice_actor", "graphic_designer", "director"]
            .map(AgentId::from).to_vec();
        let paths = vec![
            Path::new(["script_writer", "graphic_designer", "voice_actor", "director"]),
            Path::new(["script_writer", "voice_actor", "graphic_designer", "director"]),
        ];
        let space = ExecutionPathSpace { legal_paths: paths.clone(), max_turns: None };
        let config = ModelConfig::uniform(&agents, "gpt-4.1", 0.7);
        let pool = SeedPool::init(&["make a short".into()], &config, &paths[start].nodes, WeightParams::default(), 0).unwrap();
        let parent = &pool.seeds()[0];
        let pattern = if free_form { Pattern::FreeForm } else { Pattern::Workflow };
        let table = OperatorTable::new(WeightParams::default()).unwrap();
        let m = mutate(parent, pattern, &table, &MutationSettings::default(), &space, &mut FlareRng::seeded(seed)).unwrap();
        prop_assert_eq!(&m.variant.input, &parent.input);
        prop_assert!(parent.config.diff(&m.variant.config).len() <= 1);
        if free_form {
            prop_assert!(paths.iter().any(|p| p.nodes == m.variant.sequence));
            prop_assert_ne!(&m.variant.sequence, &parent.sequence);
        } else {
            prop_assert_eq!(&m.variant.sequence, &parent.sequence);
        }
    }

    #[test]
    fn relaxation_equals_rewrite_oracle(raw in prop::collection::vec((0usize..4, any::<bool>()), 0..20)) {
        let names = agents(4);
        let trace: Vec<TraceNode> = raw
            .iter()
            .map(|(a, tool)| if *tool { TraceNode::Tool(names[*a].clone()) } else { TraceNode::Turn(names[*a].clone()) })
            .collect();
        let got = relax_trace(&trace);
        prop_assert_eq!(&got.nodes, &rewrite_relax(&trace));
        prop_assert!(got.nodes.windows(2).all(|w| w[0] != w[1]));
        let had_tool = trace.iter().any(|n| matches!(n, TraceNode::Tool(_)));
        prop_assert_eq!(got.applied_rules.contains(&RelaxRule::InlineTool), had_tool);
        prop_assert!(!got.applied_rules.contains(&RelaxRule::ReorderIndependent));
    }

    #[test]
    fn matching_equals_swap_search(n in 2usize..=5, seed in any::<u64>(), word in prop::collection::vec(0usize..5, 1..7)) {
        let names = agents(n);
        let deps = random_dag(&names, 0.4, &mut FlareRng::seeded(seed));
        let space = enumerate_free_form_paths(&names, &deps, None).unwrap();
        let paths: Vec<Vec<AgentId>> = space.legal_paths.iter().map(|p| p.nodes.clone()).collect();
        let closure = DependencyClosure::new(&deps);
        let candidates = [
            word.iter().map(|i| names[i % n].clone()).collect::<Vec<_>>(),
            {
                // A legal path with one adjacent transposition.
                let mut p = paths[seed as usize % paths.len()].clone();
                let i = word[0] % (n - 1);
                p.swap(i, i + 1);
                p
            },
        ];
        for trace in candidates {
            let canon = relax_trace(&trace.iter().cloned().map(TraceNode::Turn).collect::<Vec<_>>());
            let got = match_path(&canon, &space, &closure).map(|m| (m.index, m.reordered));
            prop_assert_eq!(got, brute_match(&canon.nodes, &paths, &deps));
        }
    }

    #[test]
    fn splitter_equals_reference(parts in prop::collection::vec(
        prop::sample::select(vec!["a", "bc", " ", "  ", ".", "!", "?", "...", "3.14", "。", "！", "\n", "e.g.", "x "]),
        0..25,
    )) {
        let text: String = parts.concat();
        let got: Vec<String> = split_sentences(&text).into_iter().map(String::from).collect();
        let reference = reference_split(&text);
        prop_assert_eq!(&got, &reference);
        let c = condense_utterance(&text);
        prop_assert_eq!(c.sentence_count, reference.len());
        if let Some(last) = reference.last() {
            prop_assert_eq!(&c.first_sentence, &reference[0]);
            prop_assert_eq!(&c.median_sentence, &reference[median_position(reference.len()) - 1]);
            prop_assert_eq!(&c.last_sentence, last);
            prop_assert!(text.contains(&c.median_sentence));
        }
        let again = condense_utterance(&c.first_sentence);
        prop_assert_eq!(again.first_sentence, c.first_sentence);
    }
}
