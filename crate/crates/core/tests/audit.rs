use trans_blstm::audit::{count_params_analytic, count_params_model};
use trans_blstm::config::{BlstmMode, BlstmWidth, ModelConfig, Preset};
use trans_blstm::model::PretrainModel;

const MODES: [BlstmMode; 4] = [
    BlstmMode::None,
    BlstmMode::ReplaceFfn,
    BlstmMode::ParallelSum,
    BlstmMode::PureBlstm,
];
const WIDTHS: [BlstmWidth; 2] = [BlstmWidth::Full, BlstmWidth::Half];

fn instantiated(c: &ModelConfig) -> usize {
    count_params_model(&PretrainModel::new(c, 0).unwrap().store)
}

#[test]
fn analytic_matches_instantiated_for_small_presets() {
    for preset in [Preset::Toy, Preset::Small] {
        for mode in MODES {
            for width in WIDTHS {
                let c = ModelConfig::preset(preset).with_blstm(mode, width);
                let report = count_params_analytic(&c).unwrap();
                assert_eq!(report.total, instantiated(&c), "{preset:?} {mode:?} {width:?}");
            }
        }
    }
}

#[test]
fn analytic_matches_instantiated_at_full_widths() {
    // Full-width layers with a reduced vocabulary and depth; every term of
    // the count is linear in V and N, so agreement at N = 1 and N = 2
    // pins down the per-layer and fixed terms.
    for preset in [Preset::Base, Preset::Large] {
        for mode in [BlstmMode::None, BlstmMode::ParallelSum] {
            for width in WIDTHS {
                for num_layers in [1, 2] {
                    let c = ModelConfig {
                        num_layers,
                        vocab_size: 50,
                        ..ModelConfig::preset(preset).with_blstm(mode, width)
                    };
                    assert_eq!(
                        count_params_analytic(&c).unwrap().total,
                        instantiated(&c),
                        "{preset:?} {mode:?} {width:?} N={num_layers}"
                    );
                }
            }
        }
    }
}

#[test]
fn components_add_up() {
    let c = ModelConfig::preset(Preset::Base).with_blstm(BlstmMode::ParallelSum, BlstmWidth::Full);
    let r = count_params_analytic(&c).unwrap();
    assert_eq!(r.total, r.encoder() + r.heads());
    assert_eq!(r.total_without_heads, r.encoder());
    let (h, v, p) = (768, 30_000, 256);
    assert_eq!(r.embeddings, v * h + p * h + 2 * h + 2 * h);
    assert_eq!(r.per_layer.attention, 4 * (h * h + h));
    assert_eq!(r.per_layer.blstm, 8 * (h * h + h * h + h));
    assert_eq!(r.per_layer.projection, 2 * h * h + h);
    assert_eq!(r.mlm_head, h * h + h + 2 * h + v);
    assert_eq!(r.nsp_head, h * h + h + 2 * h + 2);
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["total"], r.total);
    let table = r.to_string();
    assert!(table.contains("total without heads"));
}

#[test]
fn architecture_differences_are_per_layer_blocks() {
    for preset in [Preset::Base, Preset::Large] {
        let count = |mode, width| {
            count_params_analytic(&ModelConfig::preset(preset).with_blstm(mode, width)).unwrap()
        };
        let trans = count(BlstmMode::None, BlstmWidth::Full);
        let tb2 = count(BlstmMode::ParallelSum, BlstmWidth::Full);
        let tb1 = count(BlstmMode::ReplaceFfn, BlstmWidth::Full);
        let n = trans.num_layers;
        assert_eq!(
            tb2.total - trans.total,
            n * (tb2.per_layer.blstm + tb2.per_layer.projection)
        );
        assert_eq!(tb2.total - tb1.total, n * trans.per_layer.ffn);
        let small = count(BlstmMode::ParallelSum, BlstmWidth::Half);
        assert_eq!(small.per_layer.projection, 0);
        assert!(trans.total < small.total && small.total < tb2.total);
    }
}

#[test]
fn zero_layer_config_is_embeddings_plus_heads() {
    let c = ModelConfig {
        num_layers: 0,
        ..ModelConfig::toy()
    };
    let r = count_params_analytic(&c).unwrap();
    assert_eq!(r.total_without_heads, r.embeddings);
    assert_eq!(r.total, instantiated(&c));
}

#[test]
fn invalid_configs_are_rejected() {
    let c = ModelConfig {
        num_heads: 5,
        ..ModelConfig::toy()
    };
    assert!(count_params_analytic(&c).is_err());
    let c = ModelConfig {
        hidden: 15,
        num_heads: 1,
        ..ModelConfig::toy()
    }
    .with_blstm(BlstmMode::ParallelSum, BlstmWidth::Half);
    assert!(count_params_analytic(&c).is_err());
}
