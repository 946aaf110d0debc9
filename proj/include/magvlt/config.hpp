#pragma once
// Flat key=value run configuration. One struct carries every knob so each
// artifact can embed the resolved config and its hash; two presets cover the
// toy reference setup and the published-scale dimensions.

#include <cstdint>
#include <string>

#include "magvlt/decode.hpp"
#include "magvlt/model.hpp"
#include "magvlt/train.hpp"
#include "magvlt/vocab.hpp"

namespace magvlt::cfg {

uint64_t fnv1a64(const std::string& s);
std::string hex64(uint64_t x);

struct RunConfig {
    // dataset
    int grid = 8;
    int text_len = 12;
    int n_train = 4096;
    int n_val = 512;
    // model
    int d_model = 128;
    int n_heads = 4;
    int n_layers = 4;
    int ffn_mult = 2;
    bool tied_head = true;
    // training
    std::string mode = "masked";  // masked | ar_i2t | ar_t2i
    int batch_size = 64;
    int64_t total_steps = 20000;
    double base_lr = 3e-4;
    int64_t warmup_steps = 400;
    double lr_floor = 0.0;
    double clip_norm = 4.0;
    double label_smoothing = 0.1;
    double lambda_tl = 0.01;
    double lambda_um = 1.0;
    double lambda_ms = 0.5;
    double w_t2i = 8.0;
    double w_i2t = 1.0;
    double w_it2it = 1.0;
    bool unroll_shared_plan = false;
    double ar_w_gen = 0.9;
    double ar_w_cond = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.96;
    double adam_eps = 1e-8;
    double weight_decay = 0.045;
    int64_t checkpoint_every = 1000;
    // decoding
    int k_image = 10;
    int k_text = 12;
    double temp_image = 1.0;
    double temp_text = 0.7;
    double conf_noise = 2.0;
    int len_init_lo = 2;
    int len_init_hi = 0;  // 0 means text_len
    int candidates = 1;
    // evaluation / benchmarking
    int eval_samples = 500;
    int bench_repeats = 5;
    // misc
    uint64_t seed = 0;

    // the toy reference setup; identical to the defaults above
    static RunConfig toy();
    // full-scale dimensions (L=24, D=1024, 16x16 image tokens, lr 4.5e-4,
    // batch 4096, 40k updates); knobs with no full-scale pin keep the toy
    // values
    static RunConfig published_scale();

    void validate() const;

    // derived module configs
    tok::Vocabulary vocabulary() const { return tok::Vocabulary::make(grid, text_len); }
    tok::Layout layout() const;
    net::ModelConfig model_config() const;
    train::TrainerConfig trainer_config() const;
    dec::DecodeRequest decode_request(bool image_k) const;

    // canonical form: every key once, declaration order, one per line
    std::string serialize() const;
    uint64_t hash() const { return fnv1a64(serialize()); }
    std::string hash_hex() const { return hex64(hash()); }

    // throws on unknown keys or unparsable values, naming the key
    void set(const std::string& key, const std::string& value);
    static RunConfig parse(const std::string& text);
    static RunConfig parse_file(const std::string& path);

    // MAGVLT_SEED, when present, wins over file and flags
    void apply_env_overrides();

    bool operator==(const RunConfig&) const = default;
};

}  // namespace magvlt::cfg
