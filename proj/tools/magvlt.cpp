// Command-line front end: dataset generation, training, sampling, oracle
// evaluation, decoding benchmarks, and ablation sweeps. Every subcommand
// resolves one flat RunConfig (defaults <- --config file <- --set flags <-
// MAGVLT_SEED) and stamps its hash into whatever it writes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "magvlt/config.hpp"
#include "magvlt/decode.hpp"
#include "magvlt/evalbench.hpp"
#include "magvlt/synth.hpp"
#include "magvlt/train.hpp"

using namespace magvlt;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;

    cfg::RunConfig resolve() const {
        cfg::RunConfig c;
        if (!config_path.empty()) c = cfg::RunConfig::parse_file(config_path);
        for (const auto& kv : sets) {
            const size_t eq = kv.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config: --set expects key=value, got '" + kv + "'");
            c.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        c.apply_env_overrides();
        c.validate();
        return c;
    }

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "flat key=value config file");
        app->add_option("--set", sets, "override a config key, e.g. --set seed=7")
            ->take_all();
    }
};

void ensure_parent_dir(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

const char* kShapeChar = "sct";  // square, circle, triangle
const char* kColorChar = "rgby";

std::string render_ascii(const tok::GridImage& img) {
    std::ostringstream os;
    for (int r = 0; r < img.grid; ++r) {
        for (int c = 0; c < img.grid; ++c) {
            const int code = img.at(r, c);
            if (c) os << ' ';
            if (code == 0)
                os << "..";
            else
                os << kShapeChar[tok::Vocabulary::cell_shape(code)]
                   << kColorChar[tok::Vocabulary::cell_color(code)];
        }
        os << '\n';
    }
    return os.str();
}

tok::GridImage load_image_json(const std::string& path, int grid) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("sample: cannot open image file '" + path + "'");
    json j;
    is >> j;
    tok::GridImage img;
    img.grid = j.at("grid").get<int>();
    for (int c : j.at("cells").get<std::vector<int>>()) img.cells.push_back(uint8_t(c));
    if (img.grid != grid || int(img.cells.size()) != grid * grid)
        throw std::invalid_argument("config: image file does not match grid=" +
                                    std::to_string(grid));
    return img;
}

json trace_json(const dec::DecodeTrace& trace) {
    json steps = json::array();
    for (const auto& st : trace.steps) {
        json s;
        s["step"] = st.step;
        s["masked_image_before"] = st.masked_image_before;
        s["masked_image_after"] = st.masked_image_after;
        s["masked_text_before"] = st.masked_text_before;
        s["masked_text_after"] = st.masked_text_after;
        s["n_hat"] = st.n_hat;
        s["confidence"] = st.confidence;
        if (!st.image_after.empty()) s["image_after"] = st.image_after;
        if (!st.text_after.empty()) s["text_after"] = st.text_after;
        steps.push_back(std::move(s));
    }
    return json{{"forwards", trace.forwards}, {"steps", std::move(steps)}};
}

void write_json(const std::string& path, const json& j) {
    ensure_parent_dir(path);
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write '" + path + "'");
    os << j.dump(2) << '\n';
}

net::Model<float> load_model(const std::string& ckpt_prefix) {
    return net::load_checkpoint<float>(ckpt_prefix + ".model");
}

void check_model_matches(const net::Model<float>& m, const cfg::RunConfig& c) {
    const auto want = c.model_config();
    if (m.cfg.vocab_size != want.vocab_size || m.cfg.seq_len != want.seq_len ||
        m.cfg.n_text != want.n_text)
        throw std::invalid_argument(
            "config: checkpoint dims do not match grid/text_len; check 'grid' and 'text_len'");
}

train::Trainer<float>::Mode mode_of(const cfg::RunConfig& c) {
    if (c.mode == "ar_i2t") return train::Trainer<float>::Mode::ar_i2t;
    if (c.mode == "ar_t2i") return train::Trainer<float>::Mode::ar_t2i;
    return train::Trainer<float>::Mode::masked;
}

// ---- subcommands ---------------------------------------------------------

int cmd_gen_data(const cfg::RunConfig& c, const std::string& out_dir) {
    auto sum = synth::make_split(out_dir, c.n_train, c.n_val, c.grid, c.text_len, c.seed,
                                 c.hash_hex());
    c.vocabulary().save(out_dir + "/vocab.json");
    std::ofstream os(out_dir + "/config.cfg");
    if (!os) throw std::runtime_error("gen-data: cannot write '" + out_dir + "/config.cfg'");
    os << c.serialize();
    std::printf("gen-data: %d train / %d val -> %s (config %s)\n", sum.n_train, sum.n_val,
                out_dir.c_str(), c.hash_hex().c_str());
    return 0;
}

int cmd_train(const cfg::RunConfig& c, const std::string& data_dir, const std::string& out_prefix,
              bool resume) {
    const auto v = c.vocabulary();
    auto samples = synth::load_shard(data_dir + "/train.tsv", c.grid);
    nd::Rng init = nd::Rng(c.seed).child(0x696e6974);
    auto model = net::Model<float>::init(c.model_config(), init);
    train::Trainer<float> tr(std::move(model), c.trainer_config(), v, samples, c.seed,
                             mode_of(c));
    ensure_parent_dir(out_prefix);
    if (resume) tr.load(out_prefix);
    const int64_t remaining = c.total_steps - tr.step_index();
    if (remaining < 0) throw std::invalid_argument("config: total_steps below resumed step");
    tr.run(remaining, out_prefix + ".metrics.csv", out_prefix);
    write_json(out_prefix + ".meta.json", json{{"config_hash", c.hash_hex()},
                                               {"mode", c.mode},
                                               {"config", c.serialize()}});
    std::printf("train: reached step %lld (%lld skipped) -> %s.{model,opt,state.json}\n",
                (long long)tr.step_index(), (long long)tr.skipped_steps(), out_prefix.c_str());
    return 0;
}

struct SampleOpts {
    std::string kind;
    std::string ckpt;
    std::string text;
    std::string image_file;
    int64_t image_seed = -1;
    std::string region_str;
    std::string out_file, trace_file;
};

int cmd_sample(const cfg::RunConfig& c, const SampleOpts& so) {
    const auto v = c.vocabulary();
    const tok::Layout lay{c.grid, c.text_len, tok::Order::image_first};
    auto model = load_model(so.ckpt);
    check_model_matches(model, c);
    if (model.cfg.causal)
        throw std::invalid_argument("config: sample drives the parallel decoder; "
                                    "this checkpoint is autoregressive");

    // condition image, from a file or a seeded synthetic sample
    tok::GridImage cond_img;
    std::string ref_caption;
    bool have_img = false;
    if (!so.image_file.empty()) {
        cond_img = load_image_json(so.image_file, c.grid);
        have_img = true;
    } else if (so.image_seed >= 0) {
        nd::Rng g(uint64_t(so.image_seed));
        auto s = synth::generate_sample(g, c.grid);
        cond_img = s.image;
        ref_caption = s.caption;
        have_img = true;
    }

    dec::DecodeRequest ireq = c.decode_request(true), treq = c.decode_request(false);
    const bool want_trace = !so.trace_file.empty();
    ireq.keep_trace = want_trace;
    treq.keep_trace = want_trace;
    nd::Rng rng = nd::Rng(c.seed).child(0x73616d70);

    json out;
    out["kind"] = so.kind;
    out["config_hash"] = c.hash_hex();
    out["seed"] = c.seed;
    dec::DecodeTrace trace;

    if (so.kind == "t2i") {
        if (so.text.empty()) throw std::invalid_argument("config: t2i needs --text");
        auto res = dec::decode_image(model, v, lay, tok::encode_text(v, so.text), ireq, rng);
        std::printf("t2i: \"%s\" (forwards %d)\n%s", so.text.c_str(), res.trace.forwards,
                    render_ascii(res.image).c_str());
        out["caption"] = so.text;
        out["cells"] = res.image.cells;
        out["forwards"] = res.trace.forwards;
        trace = std::move(res.trace);
    } else if (so.kind == "i2t") {
        if (!have_img) throw std::invalid_argument("config: i2t needs --image-file or --image-seed");
        auto res = dec::decode_text(model, v, lay, cond_img, treq, rng);
        std::printf("i2t: \"%s\" (n %d, forwards %d)\n%s", res.caption.c_str(), res.n_hat,
                    res.trace.forwards, render_ascii(cond_img).c_str());
        if (!ref_caption.empty()) {
            std::printf("reference: \"%s\"\n", ref_caption.c_str());
            out["ref_caption"] = ref_caption;
        }
        out["caption"] = res.caption;
        out["n_hat"] = res.n_hat;
        out["forwards"] = res.trace.forwards;
        trace = std::move(res.trace);
    } else if (so.kind == "joint") {
        auto res = dec::decode_joint(model, v, lay, ireq, rng);
        std::printf("joint: \"%s\" (n %d, forwards %d)\n%s", res.caption.c_str(), res.n_hat,
                    res.trace.forwards, render_ascii(res.image).c_str());
        out["caption"] = res.caption;
        out["cells"] = res.image.cells;
        out["n_hat"] = res.n_hat;
        out["forwards"] = res.trace.forwards;
        trace = std::move(res.trace);
    } else if (so.kind == "inpaint") {
        if (!have_img)
            throw std::invalid_argument("config: inpaint needs --image-file or --image-seed");
        std::string text = so.text.empty() ? ref_caption : so.text;
        if (text.empty())
            throw std::invalid_argument("config: inpaint needs --text with --image-file");
        std::vector<int> region;
        if (so.region_str.empty()) {
            region = dec::central_region(c.grid);
        } else {
            std::istringstream rs(so.region_str);
            std::string tokstr;
            while (std::getline(rs, tokstr, ','))
                region.push_back(int(std::stol(tokstr)));
        }
        auto res =
            dec::inpaint(model, v, lay, cond_img, region, tok::encode_text(v, text), ireq, rng);
        std::printf("inpaint: \"%s\" over %zu cells (forwards %d)\n%s", text.c_str(),
                    region.size(), res.trace.forwards, render_ascii(res.image).c_str());
        out["caption"] = text;
        out["region"] = region;
        out["cells"] = res.image.cells;
        out["forwards"] = res.trace.forwards;
        trace = std::move(res.trace);
    } else if (so.kind == "infill") {
        if (so.text.empty()) throw std::invalid_argument("config: infill needs --text");
        if (!have_img)
            throw std::invalid_argument("config: infill needs --image-file or --image-seed");
        auto res = dec::infill(model, v, lay, cond_img, so.text, treq, rng);
        const auto span = dec::infill_span(tok::encode_text(v, so.text).length);
        std::printf("infill: \"%s\" -> \"%s\" (span %d+%d, forwards %d)\n", so.text.c_str(),
                    res.caption.c_str(), span.first, span.second, res.trace.forwards);
        out["caption_in"] = so.text;
        out["caption"] = res.caption;
        out["span_begin"] = span.first;
        out["span_count"] = span.second;
        out["forwards"] = res.trace.forwards;
        trace = std::move(res.trace);
    } else {
        throw std::invalid_argument("config: unknown sample kind '" + so.kind + "'");
    }

    if (!so.out_file.empty()) write_json(so.out_file, out);
    if (want_trace) write_json(so.trace_file, trace_json(trace));
    return 0;
}

int cmd_eval(const cfg::RunConfig& c, const std::string& ckpt, const std::string& data_dir,
             const std::string& out_prefix) {
    const auto v = c.vocabulary();
    auto val = synth::load_shard(data_dir + "/val.tsv", c.grid);
    auto model = load_model(ckpt);
    check_model_matches(model, c);

    evalb::EvalOptions opt;
    opt.image_req = c.decode_request(true);
    opt.text_req = c.decode_request(false);
    opt.max_samples = c.eval_samples;
    opt.seed = c.seed;
    opt.config_hash = c.hash_hex();
    std::vector<evalb::EvalRecord> records;
    auto rep = evalb::eval_model(model, v, val, opt, &records);
    ensure_parent_dir(out_prefix);
    evalb::write_eval_csv(out_prefix + ".csv", rep);
    evalb::write_eval_jsonl(out_prefix + ".jsonl", records);
    std::printf("eval: n=%d i2t_exact=%.4f i2t_oracle=%.4f t2i_oracle=%.4f joint=%.4f "
                "len_acc=%.4f mask=%.4f -> %s.{csv,jsonl}\n",
                rep.n_samples, rep.i2t_exact, rep.i2t_oracle, rep.t2i_oracle, rep.joint_oracle,
                rep.length_acc, rep.heldout_mask_loss, out_prefix.c_str());
    return 0;
}

int cmd_bench(const cfg::RunConfig& c, const std::string& ckpt, const std::string& ar_ckpt,
              int K, int repeats, const std::string& out_prefix) {
    const auto v = c.vocabulary();
    auto nar = load_model(ckpt);
    auto ar = load_model(ar_ckpt);
    check_model_matches(nar, c);

    std::vector<evalb::BenchCell> cells = {{"image", K > 0 ? K : c.k_image},
                                           {"text", c.k_text}};
    auto rep = evalb::bench_decode(nar, ar, v, cells, c.decode_request(true),
                                   repeats > 0 ? repeats : c.bench_repeats, c.seed, c.hash_hex());
    ensure_parent_dir(out_prefix);
    evalb::write_bench_csv(out_prefix + ".csv", rep);
    evalb::write_bench_jsonl(out_prefix + ".jsonl", rep);
    for (const auto& row : rep.rows)
        std::printf("bench: %s K=%d invocations %.2fx wall %.2fx (%.1f vs %.1f ms) -> %s.csv\n",
                    row.modality.c_str(), row.K, row.invocation_ratio, row.speedup,
                    row.ar_ms_mean, row.nar_ms_mean, out_prefix.c_str());
    return 0;
}

int cmd_ablate(const cfg::RunConfig& c, const std::string& data_dir, const std::string& out_file,
               const std::string& variants_str, const std::string& seeds_str, int probe_pairs) {
    std::vector<std::string> variants;
    {
        std::istringstream vs(variants_str);
        std::string t;
        while (std::getline(vs, t, ',')) variants.push_back(t);
    }
    std::vector<uint64_t> seeds;
    {
        std::istringstream ss(seeds_str);
        std::string t;
        while (std::getline(ss, t, ',')) seeds.push_back(std::stoull(t));
    }
    if (variants.empty() || seeds.empty())
        throw std::invalid_argument("config: ablate needs --variants and --seeds");

    std::vector<evalb::AblationCell> cells;
    for (const auto& var : variants) {
        double um, ms;
        if (var == "base") {
            um = 0;
            ms = 0;
        } else if (var == "um") {
            um = c.lambda_um;
            ms = 0;
        } else if (var == "um_ms") {
            um = c.lambda_um;
            ms = c.lambda_ms;
        } else {
            throw std::invalid_argument("config: unknown variant '" + var +
                                        "' (base, um, um_ms)");
        }
        for (uint64_t s : seeds)
            cells.push_back({var + "_s" + std::to_string(s), c.w_t2i, c.w_i2t, c.w_it2it, um, ms,
                             s});
    }

    auto train_shard = synth::load_shard(data_dir + "/train.tsv", c.grid);
    auto val_shard = synth::load_shard(data_dir + "/val.tsv", c.grid);
    auto rep = evalb::run_ablation<float>(c, cells, train_shard, val_shard, probe_pairs);
    ensure_parent_dir(out_file);
    evalb::write_ablation_csv(out_file, rep);
    std::printf("ablate: %zu rows -> %s\n", rep.rows.size(), out_file.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // big activation buffers churn through mmap otherwise, tripling sys time
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"masked generative vision-language toy model"};
    app.require_subcommand(1);

    CommonOpts common;

    auto* gen = app.add_subcommand("gen-data", "write train/val shards and the vocabulary");
    common.attach(gen);
    std::string out_dir;
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoints");
    common.attach(train_cmd);
    std::string data_dir, out_prefix;
    bool resume = false;
    int64_t steps_flag = -1;
    train_cmd->add_option("--data", data_dir, "directory from gen-data")->required();
    train_cmd->add_option("--out", out_prefix, "checkpoint/metrics prefix")->required();
    train_cmd->add_option("--steps", steps_flag, "override total_steps");
    train_cmd->add_flag("--resume", resume, "continue from the prefix checkpoint");

    auto* sample_cmd = app.add_subcommand("sample", "decode from a checkpoint");
    common.attach(sample_cmd);
    SampleOpts so;
    sample_cmd->add_option("kind", so.kind, "t2i | i2t | joint | inpaint | infill")->required();
    sample_cmd->add_option("--ckpt", so.ckpt, "checkpoint prefix")->required();
    sample_cmd->add_option("--text", so.text, "caption input");
    sample_cmd->add_option("--image-file", so.image_file, "JSON {grid, cells} condition image");
    sample_cmd->add_option("--image-seed", so.image_seed, "generate the condition image");
    sample_cmd->add_option("--region", so.region_str, "inpaint cells, e.g. 5,6,9,10");
    sample_cmd->add_option("--out", so.out_file, "write the result as JSON");
    sample_cmd->add_option("--trace", so.trace_file, "write the per-step decode trace");

    auto* eval_cmd = app.add_subcommand("eval", "oracle metrics on the validation shard");
    common.attach(eval_cmd);
    std::string eval_ckpt, eval_data, eval_out;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint prefix")->required();
    eval_cmd->add_option("--data", eval_data, "directory from gen-data")->required();
    eval_cmd->add_option("--out", eval_out, "report prefix")->required();

    auto* bench_cmd = app.add_subcommand("bench", "parallel vs autoregressive decode timing");
    common.attach(bench_cmd);
    std::string bench_ckpt, bench_ar, bench_out;
    int bench_K = 0, bench_repeats = 0;
    bench_cmd->add_option("--ckpt", bench_ckpt, "parallel-decoder checkpoint prefix")->required();
    bench_cmd->add_option("--ar-ckpt", bench_ar, "autoregressive checkpoint prefix")->required();
    bench_cmd->add_option("--K", bench_K, "image refinement steps");
    bench_cmd->add_option("--repeats", bench_repeats, "timed repeats per cell");
    bench_cmd->add_option("--out", bench_out, "report prefix")->required();

    auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate config variants");
    common.attach(ablate_cmd);
    std::string ab_data, ab_out, ab_variants = "base,um,um_ms", ab_seeds = "0,1,2";
    int ab_probe = 0;
    ablate_cmd->add_option("--data", ab_data, "directory from gen-data")->required();
    ablate_cmd->add_option("--out", ab_out, "output CSV path")->required();
    ablate_cmd->add_option("--variants", ab_variants, "subset of base,um,um_ms");
    ablate_cmd->add_option("--seeds", ab_seeds, "comma-separated seeds");
    ablate_cmd->add_option("--probe", ab_probe, "mixed-context probe pairs per cell");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        cfg::RunConfig c = common.resolve();
        if (gen->parsed()) return cmd_gen_data(c, out_dir);
        if (train_cmd->parsed()) {
            if (steps_flag >= 0) c.set("total_steps", std::to_string(steps_flag));
            c.validate();
            return cmd_train(c, data_dir, out_prefix, resume);
        }
        if (sample_cmd->parsed()) return cmd_sample(c, so);
        if (eval_cmd->parsed()) return cmd_eval(c, eval_ckpt, eval_data, eval_out);
        if (bench_cmd->parsed()) return cmd_bench(c, bench_ckpt, bench_ar, bench_K, bench_repeats, bench_out);
        if (ablate_cmd->parsed()) return cmd_ablate(c, ab_data, ab_out, ab_variants, ab_seeds, ab_probe);
        std::fprintf(stderr, "magvlt: error: no subcommand\n");
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "magvlt: error: %s\n", e.what());
        return 1;
    }
    return 0;
}
