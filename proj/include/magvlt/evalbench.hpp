#pragma once
// Quality metrics against the dataset oracle, the AR-vs-parallel decoding
// benchmark, ablation training drivers, and the mixed-context selection
// probe. Every rate in a report is recomputed from the per-sample records,
// so the JSONL audit log is always sufficient to rebuild the summary.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "magvlt/config.hpp"
#include "magvlt/decode.hpp"
#include "magvlt/synth.hpp"
#include "magvlt/train.hpp"

namespace magvlt::evalb {

// oracle_check that treats an unparsable caption as false instead of throwing
bool safe_oracle(const tok::GridImage& img, const std::string& caption);

struct EvalOptions {
    dec::DecodeRequest image_req;  // K = image refinement steps; joint uses this too
    dec::DecodeRequest text_req;   // K = text refinement steps
    int max_samples = 0;           // 0 means the whole shard
    uint64_t seed = 0;
    std::string config_hash;
};

struct EvalRecord {
    int index = 0;
    std::string ref_caption;
    int n_ref = 0;
    std::string i2t_caption;
    bool i2t_exact = false, i2t_oracle = false;
    int n_hat = 0;
    bool length_ok = false;  // |n_hat - n_ref| <= 1
    bool t2i_oracle = false;
    std::vector<uint8_t> t2i_cells;
    bool joint_oracle = false;
    std::string joint_caption;
    std::vector<uint8_t> joint_cells;
    std::string mask_task;
    double mask_loss = 0.0;  // per-sample total over masked positions
};

struct EvalReport {
    int n_samples = 0;
    double i2t_exact = 0, i2t_oracle = 0;
    double t2i_oracle = 0;
    double joint_oracle = 0;
    double length_acc = 0;
    double heldout_mask_loss = 0;
    uint64_t seed = 0;
    std::string config_hash;
};

EvalReport report_from_records(const std::vector<EvalRecord>& records, uint64_t seed,
                               const std::string& config_hash);
std::string record_json(const EvalRecord& r);
void write_eval_jsonl(const std::string& path, const std::vector<EvalRecord>& records);
void write_eval_csv(const std::string& path, const EvalReport& r);

// Per-sample child streams keyed on (index, op) make the order of evaluation
// irrelevant to the outcome.
template <class Real>
EvalReport eval_model(net::Model<Real>& model, const tok::Vocabulary& v,
                      const std::vector<synth::Sample>& shard, const EvalOptions& opt,
                      std::vector<EvalRecord>* records_out = nullptr) {
    if (shard.empty()) throw std::invalid_argument("eval: empty shard");
    opt.image_req.validate();
    opt.text_req.validate();
    const tok::Layout lay{v.grid, v.text_len, tok::Order::image_first};
    const int n = opt.max_samples > 0 ? std::min<int>(opt.max_samples, int(shard.size()))
                                      : int(shard.size());
    const nd::Rng base(opt.seed);
    const mask::Task cycle[3] = {mask::Task::t2i, mask::Task::i2t, mask::Task::it2it};

    std::vector<EvalRecord> recs;
    for (int i = 0; i < n; ++i) {
        const auto& s = shard[size_t(i)];
        EvalRecord r;
        r.index = i;
        r.ref_caption = s.caption;
        const auto ref = tok::encode_text(v, s.caption);
        r.n_ref = ref.length;

        nd::Rng r_i2t = base.child(uint64_t(i) * 4 + 0);
        auto i2t = dec::decode_text(model, v, lay, s.image, opt.text_req, r_i2t);
        r.i2t_caption = i2t.caption;
        r.i2t_exact = i2t.caption == s.caption;
        r.i2t_oracle = safe_oracle(s.image, i2t.caption);
        r.n_hat = i2t.n_hat;
        r.length_ok = std::abs(i2t.n_hat - ref.length) <= 1;

        nd::Rng r_t2i = base.child(uint64_t(i) * 4 + 1);
        auto t2i = dec::decode_image(model, v, lay, ref, opt.image_req, r_t2i);
        r.t2i_oracle = safe_oracle(t2i.image, s.caption);
        r.t2i_cells = t2i.image.cells;

        nd::Rng r_joint = base.child(uint64_t(i) * 4 + 2);
        auto joint = dec::decode_joint(model, v, lay, opt.image_req, r_joint);
        r.joint_oracle = safe_oracle(joint.image, joint.caption);
        r.joint_caption = joint.caption;
        r.joint_cells = joint.image.cells;

        nd::Rng r_mask = base.child(uint64_t(i) * 4 + 3);
        const mask::Task task = cycle[i % 3];
        auto prep = train::prepare_sample(v, s);
        auto mb = train::build_masked_batch(r_mask, v, lay, {prep}, task);
        r.mask_task = mask::task_name(task);
        r.mask_loss = double(train::mask_loss<Real>(nullptr, model, mb, task, 0.0).item());
        recs.push_back(std::move(r));
    }

    EvalReport rep = report_from_records(recs, opt.seed, opt.config_hash);
    if (records_out) *records_out = std::move(recs);
    return rep;
}

// ---- decoding speed ------------------------------------------------------

struct BenchCell {
    std::string modality;  // "image" or "text"
    int K = 10;
};

struct BenchRow {
    std::string modality;
    int K = 0;
    int repeats = 0;
    int64_t nar_forwards = 0, ar_forwards = 0;  // totals over the repeats
    double invocation_ratio = 0;                // ar / nar
    double nar_ms_mean = 0, nar_ms_sd = 0;
    double ar_ms_mean = 0, ar_ms_sd = 0;
    double speedup = 0;  // ar mean wall / nar mean wall
    double nar_tokens_per_s = 0, ar_tokens_per_s = 0;
    // per-repeat audit data backing the aggregates above
    std::vector<double> nar_ms_each, ar_ms_each;
    std::vector<int> nar_fwd_each, ar_fwd_each;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    int repeats = 0;
    std::string config_hash;
};

void write_bench_csv(const std::string& path, const BenchReport& r);
// one line per (cell, repeat); the summary CSV is recomputable from this
void write_bench_jsonl(const std::string& path, const BenchReport& r);

namespace detail {

struct Stats {
    double mean = 0, sd = 0;
};

inline Stats mean_sd(const std::vector<double>& xs) {
    Stats st;
    for (double x : xs) st.mean += x;
    st.mean /= double(xs.size());
    if (xs.size() > 1) {
        double acc = 0;
        for (double x : xs) acc += (x - st.mean) * (x - st.mean);
        st.sd = std::sqrt(acc / double(xs.size() - 1));
    }
    return st;
}

inline double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace detail

// Times full decodes, one warm-up per engine excluded from the stats. The
// forward counts come straight off the decode counters, so the invocation
// ratio is exact arithmetic, not a measurement.
template <class Real>
BenchReport bench_decode(net::Model<Real>& nar, net::Model<Real>& ar, const tok::Vocabulary& v,
                         const std::vector<BenchCell>& cells, const dec::DecodeRequest& base_req,
                         int repeats, uint64_t seed, const std::string& config_hash) {
    if (repeats < 5) throw std::invalid_argument("bench: needs at least 5 repeats");
    if (cells.empty()) throw std::invalid_argument("bench: no cells");
    if (nar.cfg.causal || !ar.cfg.causal)
        throw std::invalid_argument("bench: expected a bidirectional and a causal model");
    net::ModelConfig matched = ar.cfg;
    matched.causal = false;
    if (!(matched == nar.cfg))
        throw std::invalid_argument("bench: model configs do not match");

    const tok::Layout lay_i2t{v.grid, v.text_len, tok::Order::image_first};
    const tok::Layout lay_t2i{v.grid, v.text_len, tok::Order::text_first};
    const nd::Rng base(seed);

    BenchReport rep;
    rep.repeats = repeats;
    rep.config_hash = config_hash;
    uint64_t tag = 0;
    for (const auto& cell : cells) {
        if (cell.modality != "image" && cell.modality != "text")
            throw std::invalid_argument("bench: unknown modality '" + cell.modality + "'");
        const bool image = cell.modality == "image";
        dec::DecodeRequest req = base_req;
        req.K = cell.K;
        req.validate();

        BenchRow row;
        row.modality = cell.modality;
        row.K = cell.K;
        row.repeats = repeats;
        std::vector<double> nar_ms, ar_ms;
        int64_t nar_tokens = 0, ar_tokens = 0;

        for (int rep_i = -1; rep_i < repeats; ++rep_i) {  // -1 is the warm-up
            nd::Rng data = base.child(++tag);
            const auto sample = synth::generate_sample(data, v.grid);
            const auto cond_text = tok::encode_text(v, sample.caption);
            nd::Rng ra = base.child(++tag), rb = base.child(++tag);

            int nar_fwd = 0, ar_fwd = 0, nar_tok = 0, ar_tok = 0;
            double t0 = 0, t1 = 0, t2 = 0;
            if (image) {
                t0 = detail::now_ms();
                auto a = dec::decode_image(nar, v, lay_i2t, cond_text, req, ra);
                t1 = detail::now_ms();
                auto b = dec::decode_ar_image(ar, v, lay_t2i, cond_text, req.temp_image, rb);
                t2 = detail::now_ms();
                nar_fwd = a.trace.forwards;
                ar_fwd = b.trace.forwards;
                nar_tok = lay_i2t.n_image();
                ar_tok = lay_t2i.n_image();
            } else {
                t0 = detail::now_ms();
                auto a = dec::decode_text(nar, v, lay_i2t, sample.image, req, ra);
                t1 = detail::now_ms();
                auto b = dec::decode_ar_text(ar, v, lay_i2t, sample.image, req.temp_text, rb);
                t2 = detail::now_ms();
                nar_fwd = a.trace.forwards;
                ar_fwd = b.trace.forwards;
                nar_tok = a.n_hat;
                ar_tok = b.n_hat;
            }
            if (rep_i < 0) continue;
            nar_ms.push_back(t1 - t0);
            ar_ms.push_back(t2 - t1);
            row.nar_forwards += nar_fwd;
            row.ar_forwards += ar_fwd;
            row.nar_fwd_each.push_back(nar_fwd);
            row.ar_fwd_each.push_back(ar_fwd);
            nar_tokens += nar_tok;
            ar_tokens += ar_tok;
        }

        row.invocation_ratio = double(row.ar_forwards) / double(row.nar_forwards);
        row.nar_ms_each = nar_ms;
        row.ar_ms_each = ar_ms;
        const auto ns = detail::mean_sd(nar_ms), as = detail::mean_sd(ar_ms);
        row.nar_ms_mean = ns.mean;
        row.nar_ms_sd = ns.sd;
        row.ar_ms_mean = as.mean;
        row.ar_ms_sd = as.sd;
        row.speedup = as.mean / ns.mean;
        double nar_total_s = 0, ar_total_s = 0;
        for (double x : nar_ms) nar_total_s += x / 1000.0;
        for (double x : ar_ms) ar_total_s += x / 1000.0;
        row.nar_tokens_per_s = nar_total_s > 0 ? double(nar_tokens) / nar_total_s : 0;
        row.ar_tokens_per_s = ar_total_s > 0 ? double(ar_tokens) / ar_total_s : 0;
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

// ---- mixed-context selection probe ---------------------------------------

struct ProbePair {
    synth::Sample left, right;
    int chosen = 0;  // 0 selects the left source, 1 the right
};

struct ProbeRecord {
    int index = 0;
    int chosen = 0;
    std::string caption;
    bool selected_hit = false, other_hit = false;
};

struct ProbeReport {
    int n_pairs = 0;
    double fidelity = 0;           // oracle on the selected source only
    double shuffled_fidelity = 0;  // same statistic under a caption rotation
    uint64_t seed = 0;
    std::string config_hash;
};

void write_probe_csv(const std::string& path, const ProbeReport& r);

// Left sources confined to the left half, right sources to the right half,
// so the mixed image shows each source's objects untouched. Symmetric pairs
// (identical images) would make fidelity undefined and are skipped during
// generation.
std::vector<ProbePair> build_probe_pairs(const tok::Vocabulary& v, int n_pairs, uint64_t seed);

template <class Real>
ProbeReport mixsel_probe(net::Model<Real>& model, const tok::Vocabulary& v,
                         const std::vector<ProbePair>& pairs,
                         const dec::DecodeRequest& text_req, uint64_t seed,
                         const std::string& config_hash,
                         std::vector<ProbeRecord>* records_out = nullptr) {
    if (pairs.empty()) throw std::invalid_argument("probe: no pairs");
    const tok::Layout lay{v.grid, v.text_len, tok::Order::image_first};
    const nd::Rng base(seed);

    std::vector<ProbeRecord> recs;
    for (int i = 0; i < int(pairs.size()); ++i) {
        const auto& p = pairs[size_t(i)];
        const auto mixed = synth::mix_images(p.left.image, p.right.image, 0);
        const int sel = p.chosen == 0 ? v.left() : v.right();
        nd::Rng rng = base.child(uint64_t(i));
        auto res = dec::decode_text(model, v, lay, mixed, text_req, rng, sel);

        ProbeRecord r;
        r.index = i;
        r.chosen = p.chosen;
        r.caption = res.caption;
        const auto& sel_img = p.chosen == 0 ? p.left.image : p.right.image;
        const auto& oth_img = p.chosen == 0 ? p.right.image : p.left.image;
        r.selected_hit = safe_oracle(sel_img, res.caption);
        r.other_hit = safe_oracle(oth_img, res.caption);
        recs.push_back(std::move(r));
    }

    ProbeReport rep;
    rep.n_pairs = int(recs.size());
    rep.seed = seed;
    rep.config_hash = config_hash;
    int hits = 0, shuffled_hits = 0;
    const int n = int(recs.size());
    for (int i = 0; i < n; ++i) {
        hits += recs[size_t(i)].selected_hit && !recs[size_t(i)].other_hit;
        // rotate captions by one pair for the chance baseline
        const auto& cap = recs[size_t((i + 1) % n)].caption;
        const auto& p = pairs[size_t(i)];
        const auto& sel_img = p.chosen == 0 ? p.left.image : p.right.image;
        const auto& oth_img = p.chosen == 0 ? p.right.image : p.left.image;
        shuffled_hits += safe_oracle(sel_img, cap) && !safe_oracle(oth_img, cap);
    }
    rep.fidelity = double(hits) / n;
    rep.shuffled_fidelity = double(shuffled_hits) / n;
    if (records_out) *records_out = std::move(recs);
    return rep;
}

// ---- ablations -----------------------------------------------------------

struct AblationCell {
    std::string name;
    double w_t2i = 8, w_i2t = 1, w_it2it = 1;
    double lambda_um = 1.0, lambda_ms = 0.5;
    uint64_t seed = 0;
};

struct AblationRow {
    AblationCell cell;
    double final_mask_loss = 0;  // mean over the last 50 applied steps
    EvalReport eval;
    double probe_fidelity = -1, probe_shuffled = -1;  // -1 when the probe is off
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::string config_hash;
};

void write_ablation_csv(const std::string& path, const AblationReport& r);

// Trains one model per cell under the shared budget in `base`, then runs the
// oracle evaluation on the validation shard. With probe_pairs > 0 every cell
// is additionally probed on one shared mixed-context set, which is what makes
// the cross-cell fidelity comparison a paired one. Deterministic per
// (cell, base).
template <class Real>
AblationReport run_ablation(const cfg::RunConfig& base, const std::vector<AblationCell>& cells,
                            const std::vector<synth::Sample>& train_shard,
                            const std::vector<synth::Sample>& val_shard, int probe_pairs = 0) {
    if (cells.empty()) throw std::invalid_argument("ablation: no cells");
    const auto v = base.vocabulary();
    AblationReport rep;
    rep.config_hash = base.hash_hex();
    std::vector<ProbePair> shared_probe;
    if (probe_pairs > 0) shared_probe = build_probe_pairs(v, probe_pairs, base.seed);
    for (const auto& cell : cells) {
        train::TrainerConfig tc = base.trainer_config();
        tc.weights = train::TaskWeights{cell.w_t2i, cell.w_i2t, cell.w_it2it};
        tc.lambda_um = cell.lambda_um;
        tc.lambda_ms = cell.lambda_ms;

        nd::Rng init = nd::Rng(cell.seed).child(0x696e6974);  // "init"
        auto model = net::Model<Real>::init(base.model_config(), init);
        train::Trainer<Real> tr(std::move(model), tc, v, train_shard, cell.seed);

        std::vector<double> tail;
        for (int64_t i = 0; i < tc.total_steps; ++i) {
            auto lr = tr.step();
            if (!lr.skipped) {
                tail.push_back(lr.mask);
                if (int(tail.size()) > 50) tail.erase(tail.begin());
            }
        }

        AblationRow row;
        row.cell = cell;
        for (double x : tail) row.final_mask_loss += x;
        if (!tail.empty()) row.final_mask_loss /= double(tail.size());

        EvalOptions opt;
        opt.image_req = base.decode_request(true);
        opt.text_req = base.decode_request(false);
        opt.max_samples = base.eval_samples;
        opt.seed = cell.seed;
        opt.config_hash = base.hash_hex();
        row.eval = eval_model(tr.model(), v, val_shard, opt);
        if (!shared_probe.empty()) {
            auto pr = mixsel_probe(tr.model(), v, shared_probe, base.decode_request(false),
                                   base.seed, base.hash_hex());
            row.probe_fidelity = pr.fidelity;
            row.probe_shuffled = pr.shuffled_fidelity;
        }
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

}  // namespace magvlt::evalb
