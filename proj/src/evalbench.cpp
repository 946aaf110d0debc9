#include "magvlt/evalbench.hpp"

#include <fstream>
#include <json.hpp>

namespace magvlt::evalb {

using nlohmann::json;

bool safe_oracle(const tok::GridImage& img, const std::string& caption) {
    try {
        return synth::oracle_check(img, caption);
    } catch (const std::invalid_argument&) {
        return false;  // ungrammatical captions simply fail the oracle
    }
}

EvalReport report_from_records(const std::vector<EvalRecord>& records, uint64_t seed,
                               const std::string& config_hash) {
    EvalReport r;
    r.n_samples = int(records.size());
    r.seed = seed;
    r.config_hash = config_hash;
    if (records.empty()) return r;
    for (const auto& rec : records) {
        r.i2t_exact += rec.i2t_exact;
        r.i2t_oracle += rec.i2t_oracle;
        r.t2i_oracle += rec.t2i_oracle;
        r.joint_oracle += rec.joint_oracle;
        r.length_acc += rec.length_ok;
        r.heldout_mask_loss += rec.mask_loss;
    }
    const double n = double(records.size());
    r.i2t_exact /= n;
    r.i2t_oracle /= n;
    r.t2i_oracle /= n;
    r.joint_oracle /= n;
    r.length_acc /= n;
    r.heldout_mask_loss /= n;
    return r;
}

std::string record_json(const EvalRecord& r) {
    json j;
    j["index"] = r.index;
    j["ref_caption"] = r.ref_caption;
    j["n_ref"] = r.n_ref;
    j["i2t"] = {{"caption", r.i2t_caption},
                {"exact", r.i2t_exact},
                {"oracle", r.i2t_oracle},
                {"n_hat", r.n_hat},
                {"length_ok", r.length_ok}};
    j["t2i"] = {{"oracle", r.t2i_oracle}, {"cells", r.t2i_cells}};
    j["joint"] = {{"oracle", r.joint_oracle},
                  {"caption", r.joint_caption},
                  {"cells", r.joint_cells}};
    j["mask"] = {{"task", r.mask_task}, {"loss", r.mask_loss}};
    return j.dump();
}

void write_eval_jsonl(const std::string& path, const std::vector<EvalRecord>& records) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("eval: cannot write '" + path + "'");
    for (const auto& r : records) os << record_json(r) << '\n';
}

void write_eval_csv(const std::string& path, const EvalReport& r) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("eval: cannot write '" + path + "'");
    os << "n_samples,i2t_exact,i2t_oracle,t2i_oracle,joint_oracle,length_acc,"
          "heldout_mask_loss,seed,config_hash\n";
    os << r.n_samples << ',' << train::fmt_g(r.i2t_exact) << ',' << train::fmt_g(r.i2t_oracle)
       << ',' << train::fmt_g(r.t2i_oracle) << ',' << train::fmt_g(r.joint_oracle) << ','
       << train::fmt_g(r.length_acc) << ',' << train::fmt_g(r.heldout_mask_loss) << ',' << r.seed
       << ',' << r.config_hash << '\n';
}

void write_bench_csv(const std::string& path, const BenchReport& r) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("bench: cannot write '" + path + "'");
    os << "modality,K,repeats,nar_forwards,ar_forwards,invocation_ratio,nar_ms_mean,nar_ms_sd,"
          "ar_ms_mean,ar_ms_sd,speedup,nar_tokens_per_s,ar_tokens_per_s,config_hash\n";
    for (const auto& row : r.rows) {
        os << row.modality << ',' << row.K << ',' << row.repeats << ',' << row.nar_forwards << ','
           << row.ar_forwards << ',' << train::fmt_g(row.invocation_ratio) << ','
           << train::fmt_g(row.nar_ms_mean) << ',' << train::fmt_g(row.nar_ms_sd) << ','
           << train::fmt_g(row.ar_ms_mean) << ',' << train::fmt_g(row.ar_ms_sd) << ','
           << train::fmt_g(row.speedup) << ',' << train::fmt_g(row.nar_tokens_per_s) << ','
           << train::fmt_g(row.ar_tokens_per_s) << ',' << r.config_hash << '\n';
    }
}

void write_ablation_csv(const std::string& path, const AblationReport& r) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("ablation: cannot write '" + path + "'");
    os << "name,seed,w_t2i,w_i2t,w_it2it,lambda_um,lambda_ms,final_mask_loss,i2t_exact,"
          "i2t_oracle,t2i_oracle,joint_oracle,length_acc,heldout_mask_loss,probe_fidelity,"
          "probe_shuffled,config_hash\n";
    for (const auto& row : r.rows) {
        const auto& c = row.cell;
        const auto& e = row.eval;
        os << c.name << ',' << c.seed << ',' << train::fmt_g(c.w_t2i) << ','
           << train::fmt_g(c.w_i2t) << ',' << train::fmt_g(c.w_it2it) << ','
           << train::fmt_g(c.lambda_um) << ',' << train::fmt_g(c.lambda_ms) << ','
           << train::fmt_g(row.final_mask_loss) << ',' << train::fmt_g(e.i2t_exact) << ','
           << train::fmt_g(e.i2t_oracle) << ',' << train::fmt_g(e.t2i_oracle) << ','
           << train::fmt_g(e.joint_oracle) << ',' << train::fmt_g(e.length_acc) << ','
           << train::fmt_g(e.heldout_mask_loss) << ',' << train::fmt_g(row.probe_fidelity) << ','
           << train::fmt_g(row.probe_shuffled) << ',' << r.config_hash << '\n';
    }
}

void write_bench_jsonl(const std::string& path, const BenchReport& r) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("bench: cannot write '" + path + "'");
    for (const auto& row : r.rows) {
        for (size_t i = 0; i < row.nar_ms_each.size(); ++i) {
            json j;
            j["modality"] = row.modality;
            j["K"] = row.K;
            j["repeat"] = int(i);
            j["nar_ms"] = row.nar_ms_each[i];
            j["ar_ms"] = row.ar_ms_each[i];
            j["nar_forwards"] = row.nar_fwd_each[i];
            j["ar_forwards"] = row.ar_fwd_each[i];
            j["config_hash"] = r.config_hash;
            os << j.dump() << '\n';
        }
    }
}

void write_probe_csv(const std::string& path, const ProbeReport& r) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("probe: cannot write '" + path + "'");
    os << "n_pairs,fidelity,shuffled_fidelity,seed,config_hash\n";
    os << r.n_pairs << ',' << train::fmt_g(r.fidelity) << ',' << train::fmt_g(r.shuffled_fidelity)
       << ',' << r.seed << ',' << r.config_hash << '\n';
}

std::vector<ProbePair> build_probe_pairs(const tok::Vocabulary& v, int n_pairs, uint64_t seed) {
    if (n_pairs < 1) throw std::invalid_argument("probe: n_pairs < 1");
    nd::Rng rng = nd::Rng(seed).child(0x70726f62);  // dedicated pair stream
    auto confined = [&](int side) {
        for (;;) {
            auto s = synth::generate_sample(rng, v.grid);
            if (synth::image_confined(s.image, 0, side)) return s;
        }
    };
    std::vector<ProbePair> pairs;
    for (int i = 0; i < n_pairs; ++i) {
        ProbePair p;
        p.left = confined(0);
        do {
            p.right = confined(1);
        } while (p.right.image == p.left.image);  // degenerate self-mix excluded
        p.chosen = i % 2;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace magvlt::evalb
