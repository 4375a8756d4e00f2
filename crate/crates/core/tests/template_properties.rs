use benchforge::config::{axes, expand_parameter_space, load_document, resolve_chain, Schema};
use benchforge::templates::{
    compose_blueprint, instantiate, placeholder, plan_stage_split, MachineBlock, MachineLayer, PlatformLayer,
    PlatformStageTemplate, SkeletonLine, WorkflowTemplate, BlockLine, DEFAULT_STAGES,
};
use proptest::prelude::*;

const KEYS: [&str; 5] = ["run.nodes", "run.seed", "env.stack", "model.steps", "model.scale"];

fn config_text(axis_mask: u8, nodes: usize, seeds: usize) -> String {
    let mut s = String::from("name = \"p\"\nenv.stack = \"gcc\"\nmodel.steps = 10\nmodel.scale = 0.5\nrun.nodes = 1\nrun.seed = 0\n");
    if axis_mask & 1 != 0 {
        let v: Vec<String> = (1..=nodes).map(|i| i.to_string()).collect();
        s += &format!("experiment.axes.run.nodes = [{}]\n", v.join(", "));
    }
    if axis_mask & 2 != 0 {
        let v: Vec<String> = (1..=seeds).map(|i| i.to_string()).collect();
        s += &format!("experiment.axes.run.seed = [{}]\n", v.join(", "));
    }
    s
}

fn blueprint_from(stage_keys: &[Vec<usize>], block_body: &[String]) -> benchforge::templates::PipelineBlueprint {
    let wf = WorkflowTemplate::benchmarking();
    let platform = PlatformLayer {
        name: "p".into(),
        stages: DEFAULT_STAGES
            .iter()
            .zip(stage_keys)
            .map(|(stage, keys)| {
                let mut skeleton = vec![SkeletonLine::Slot("env".into())];
                let cmd: Vec<String> = keys.iter().map(|k| format!("{{{{{}}}}}", KEYS[*k])).collect();
                skeleton.push(SkeletonLine::Literal(format!("{stage} {}", cmd.join(" "))));
                PlatformStageTemplate { stage: stage.to_string(), skeleton }
            })
            .collect(),
    };
    let machine = MachineLayer {
        name: "m".into(),
        blocks: vec![MachineBlock { name: "env".into(), body: block_body.iter().map(|c| BlockLine::Command(c.clone())).collect() }],
    };
    compose_blueprint(&wf, &platform, &machine, &[]).unwrap()
}

fn stage_keys_strategy() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(0..KEYS.len(), 0..3), DEFAULT_STAGES.len())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn shared_stages_are_identical_across_combinations(
        stage_keys in stage_keys_strategy(),
        axis_mask in 0u8..4,
        nodes in 1usize..=8,
        seeds in 1usize..=8,
    ) {
        let bp = blueprint_from(&stage_keys, &["module load {{env.stack}}".to_string()]);
        let rc = resolve_chain(&[load_document(&config_text(axis_mask, nodes, seeds), None).unwrap()], &Schema::permissive()).unwrap();
        let ax = axes(&rc).unwrap();
        let combos = expand_parameter_space(&rc).unwrap();
        prop_assert!(combos.len() <= 64);
        let split = plan_stage_split(&bp, &ax);

        let mut all: Vec<String> = split.shared.clone();
        all.extend(split.fanout.clone());
        prop_assert_eq!(all, DEFAULT_STAGES.iter().map(|s| s.to_string()).collect::<Vec<_>>());

        let instances: Vec<_> = combos.iter().map(|c| instantiate(&bp, &rc, c).unwrap()).collect();
        for stage in &split.shared {
            let first = &instances[0].stage(stage).unwrap().commands;
            for inst in &instances {
                prop_assert_eq!(&inst.stage(stage).unwrap().commands, first);
            }
        }
        // Maximality: the first fanout stage mentions an axis.
        if let Some(first_fanout) = split.fanout.first() {
            let idx = DEFAULT_STAGES.iter().position(|s| s == first_fanout).unwrap();
            let axis_keys: Vec<&str> = ax.iter().map(|a| a.key_path.as_str()).collect();
            prop_assert!(stage_keys[idx].iter().any(|k| axis_keys.contains(&KEYS[*k])));
        }

        for inst in &instances {
            let json = inst.to_canonical_json();
            prop_assert!(!placeholder::has_residue(&json));
            prop_assert_eq!(json, instantiate(&bp, &rc, &inst.combination).unwrap().to_canonical_json());
        }
    }

    #[test]
    fn machine_block_changes_keep_stage_list(
        stage_keys in stage_keys_strategy(),
        body_a in prop::collection::vec("[a-z ]{1,12}", 0..4),
        body_b in prop::collection::vec("[a-z ]{1,12}", 0..4),
    ) {
        let a = blueprint_from(&stage_keys, &body_a);
        let b = blueprint_from(&stage_keys, &body_b);
        prop_assert_eq!(a.stage_names().collect::<Vec<_>>(), b.stage_names().collect::<Vec<_>>());
        prop_assert_eq!(a.referenced_keys, b.referenced_keys);
    }
}

#[test]
fn referenced_keys_equal_union_of_placeholders() {
    let bp = blueprint_from(&[vec![0], vec![2], vec![0, 1], vec![], vec![], vec![3], vec![4]], &["x".into()]);
    let mut union = std::collections::BTreeSet::new();
    for s in &bp.stages {
        for c in &s.commands {
            union.extend(placeholder::keys(c).unwrap());
        }
    }
    assert_eq!(bp.referenced_keys, union);
    assert_eq!(union.len(), 5);
}
