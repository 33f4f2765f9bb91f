//! End-to-end behaviour of shipped configs.

use hyred::flops::account;
use hyred::model::ArchitectureSpec;
use hyred::runner::{named, plan_for, run_prefill, LayerAction, ReductionMode, RunConfig};

#[test]
fn step_tables_stay_near_reported_rates() {
    // reported rate per shipped run config; layer-mean rates are ours, so allow 3 points
    let rows = [
        ("nemotron62-first-attn", 24.6),
        ("nemotron62-all-attn-25", 25.2),
        ("nemotron62-all-attn-35", 34.7),
        ("nemotron62-all-attn-50", 50.1),
        ("nemotron62-first-mamba", 25.0),
        ("nemotron62-second-mamba", 25.5),
        ("nemotron62-all-attn-1m", 25.4),
        ("nemotron62-all-attn-2m", 25.4),
        ("nemotron62-sigmoid-25", 25.1),
        ("nemotron62-sigmoid-35", 35.0),
        ("nemotron62-sigmoid-50", 50.2),
    ];
    for (name, reported) in rows {
        let mut cfg = RunConfig::load(name).unwrap();
        cfg.frames = Some(256);
        let arch = cfg.architecture().unwrap();
        let plan = plan_for(&cfg, &arch).unwrap();
        let rate = plan.compression_rate();
        assert!(
            (rate - reported).abs() <= 3.0,
            "{name}: {rate:.2} vs {reported}"
        );
        assert!(plan.budgets.windows(2).all(|w| w[1] <= w[0]));
        assert!(account(&plan, &arch, 128).speedup > 1.0);
    }
}

#[test]
fn every_shipped_run_config_loads() {
    for (name, _) in named::RUNS {
        let cfg = RunConfig::load(name).unwrap();
        plan_for(&cfg, &cfg.architecture().unwrap()).unwrap();
    }
}

#[test]
fn nemotron_sigmoid_prefill_follows_its_plan() {
    let mut cfg = RunConfig::load("nemotron62-sigmoid-25").unwrap();
    cfg.frames = Some(8);
    let r = run_prefill(&cfg).unwrap();
    assert_eq!(r.trace.len(), 62);
    for t in &r.trace {
        assert!(t.tokens_out <= t.tokens_in);
        if t.action == LayerAction::None {
            assert_eq!(t.tokens_out, t.tokens_in, "layer {}", t.layer);
        }
        assert_eq!(t.tokens_out, r.plan.budgets[t.layer]);
    }
    assert_eq!(r.final_visual_tokens, r.plan.final_budget());
    assert!(r.compression_rate < 100.0);
    assert!(r.flops.speedup > 1.0);
}

#[test]
fn mixed_mode_pools_only_mamba_layers() {
    let mut cfg = RunConfig::load("nemotron62-all-attn-1m").unwrap();
    cfg.frames = Some(4);
    cfg.mode = ReductionMode::QueryAttnAvgPoolMamba;
    let r = run_prefill(&cfg).unwrap();
    let arch = ArchitectureSpec::preset("nemotron62").unwrap();
    let mut pooled = 0;
    for t in &r.trace {
        match t.action {
            LayerAction::Pool => {
                pooled += 1;
                assert_eq!(arch.layer_kinds[t.layer].code(), 'M');
            }
            LayerAction::Select => assert_eq!(arch.layer_kinds[t.layer].code(), 'A'),
            LayerAction::None => {}
        }
    }
    assert!(pooled > 0);
}
