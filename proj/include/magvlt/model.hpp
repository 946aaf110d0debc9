#pragma once
// Transformer over the flat multimodal token sequence, plus a small caption
// length head read off the hidden state at a caller-chosen row (the length
// marker position). Pre-LN blocks, GELU FFN, learned positional embeddings.

#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "magvlt/ops.hpp"
#include "magvlt/rng.hpp"

namespace magvlt::net {

struct ModelConfig {
    int vocab_size = 36;
    int seq_len = 80;
    int d_model = 128;
    int n_heads = 8;
    int n_layers = 4;
    int ffn_mult = 2;
    int n_text = 12;  // length head predicts caption lengths 1..n_text
    bool causal = false;
    bool tied_head = true;  // logits reuse the token embedding matrix

    bool operator==(const ModelConfig&) const = default;

    void validate() const {
        if (vocab_size < 2) throw std::invalid_argument("model config: vocab_size < 2");
        if (seq_len < 1) throw std::invalid_argument("model config: seq_len < 1");
        if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
            throw std::invalid_argument("model config: d_model must be a positive multiple of n_heads");
        if (n_layers < 1) throw std::invalid_argument("model config: n_layers < 1");
        if (ffn_mult < 1) throw std::invalid_argument("model config: ffn_mult < 1");
        if (n_text < 1) throw std::invalid_argument("model config: n_text < 1");
    }

    nlohmann::json to_json() const {
        return {{"vocab_size", vocab_size}, {"seq_len", seq_len},   {"d_model", d_model},
                {"n_heads", n_heads},       {"n_layers", n_layers}, {"ffn_mult", ffn_mult},
                {"n_text", n_text},         {"causal", causal},     {"tied_head", tied_head}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.vocab_size = j.at("vocab_size").get<int>();
        c.seq_len = j.at("seq_len").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.n_layers = j.at("n_layers").get<int>();
        c.ffn_mult = j.at("ffn_mult").get<int>();
        c.n_text = j.at("n_text").get<int>();
        c.causal = j.at("causal").get<bool>();
        c.tied_head = j.at("tied_head").get<bool>();
        c.validate();
        return c;
    }
};

template <class Real>
struct Model {
    using T = nd::Tensor<Real>;

    ModelConfig cfg;
    T tok_emb, pos_emb;
    struct Block {
        T ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
        T ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
    };
    std::vector<Block> blocks;
    T lnf_g, lnf_b;
    T head_w;  // only allocated when the head is untied
    T head_b;  // per-token logit bias, present either way
    T len_w, len_b;

    // Allocates every parameter zero-filled with grad buffers.
    static Model build(const ModelConfig& cfg) {
        cfg.validate();
        const int V = cfg.vocab_size, S = cfg.seq_len, D = cfg.d_model;
        const int F = cfg.ffn_mult * D;
        Model m;
        m.cfg = cfg;
        auto P = [](std::vector<int> shape) { return T::zeros(std::move(shape), true); };
        m.tok_emb = P({V, D});
        m.pos_emb = P({S, D});
        m.blocks.resize(size_t(cfg.n_layers));
        for (auto& b : m.blocks) {
            b.ln1_g = P({D}); b.ln1_b = P({D});
            b.qkv_w = P({D, 3 * D}); b.qkv_b = P({3 * D});
            b.proj_w = P({D, D}); b.proj_b = P({D});
            b.ln2_g = P({D}); b.ln2_b = P({D});
            b.fc1_w = P({D, F}); b.fc1_b = P({F});
            b.fc2_w = P({F, D}); b.fc2_b = P({D});
        }
        m.lnf_g = P({D}); m.lnf_b = P({D});
        if (!cfg.tied_head) m.head_w = P({V, D});
        m.head_b = P({V});
        m.len_w = P({D, cfg.n_text}); m.len_b = P({cfg.n_text});
        return m;
    }

    // Gaussian init, std 0.02, with the two residual-branch output matrices
    // (attention proj, fc2) scaled down by 1/sqrt(2 n_layers). LN gains start
    // at 1, every bias at 0. Draw order: tok_emb, pos_emb, then per block
    // qkv_w, proj_w, fc1_w, fc2_w, then head_w (untied only), then len_w.
    static Model init(const ModelConfig& cfg, nd::Rng& rng) {
        Model m = build(cfg);
        const Real base = Real(0.02);
        const Real resid = Real(0.02 / std::sqrt(2.0 * cfg.n_layers));
        auto fill = [&rng](T& t, Real std_) {
            for (auto& x : *t.data) x = Real(rng.gauss()) * std_;
        };
        auto ones = [](T& t) { for (auto& x : *t.data) x = Real(1); };
        fill(m.tok_emb, base);
        fill(m.pos_emb, base);
        for (auto& b : m.blocks) {
            fill(b.qkv_w, base);
            fill(b.proj_w, resid);
            fill(b.fc1_w, base);
            fill(b.fc2_w, resid);
            ones(b.ln1_g);
            ones(b.ln2_g);
        }
        ones(m.lnf_g);
        if (!cfg.tied_head) fill(m.head_w, base);
        fill(m.len_w, base);
        return m;
    }

    // Fixed parameter order; this order is the optimizer and checkpoint
    // contract. Pointers stay valid while the Model object stays put.
    std::vector<T*> parameters() {
        std::vector<T*> ps = {&tok_emb, &pos_emb};
        for (auto& b : blocks)
            for (T* t : {&b.ln1_g, &b.ln1_b, &b.qkv_w, &b.qkv_b, &b.proj_w, &b.proj_b,
                         &b.ln2_g, &b.ln2_b, &b.fc1_w, &b.fc1_b, &b.fc2_w, &b.fc2_b})
                ps.push_back(t);
        ps.push_back(&lnf_g);
        ps.push_back(&lnf_b);
        if (!cfg.tied_head) ps.push_back(&head_w);
        ps.push_back(&head_b);
        ps.push_back(&len_w);
        ps.push_back(&len_b);
        return ps;
    }

    std::vector<std::string> parameter_names() const {
        std::vector<std::string> ns = {"tok_emb", "pos_emb"};
        for (size_t l = 0; l < blocks.size(); ++l)
            for (const char* f : {"ln1_g", "ln1_b", "qkv_w", "qkv_b", "proj_w", "proj_b",
                                  "ln2_g", "ln2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b"})
                ns.push_back("blocks." + std::to_string(l) + "." + f);
        ns.push_back("lnf_g");
        ns.push_back("lnf_b");
        if (!cfg.tied_head) ns.push_back("head_w");
        ns.push_back("head_b");
        ns.push_back("len_w");
        ns.push_back("len_b");
        return ns;
    }

    int64_t parameter_count() {
        int64_t n = 0;
        for (auto* p : parameters()) n += p->numel();
        return n;
    }

    struct Out {
        T hidden;  // final-LN output, [batch*seq_len x d_model]
        T logits;  // [batch*seq_len x vocab_size]
    };

    Out forward(nd::Tape<Real>* tape, const std::vector<int>& ids, int batch) const {
        const int S = cfg.seq_len;
        if (batch < 1 || int64_t(ids.size()) != int64_t(batch) * S)
            throw std::invalid_argument("forward: got " + std::to_string(ids.size()) +
                                        " ids for batch " + std::to_string(batch) + " x seq " +
                                        std::to_string(S));
        std::vector<int> pos(ids.size());
        for (size_t i = 0; i < pos.size(); ++i) pos[i] = int(i % size_t(S));

        using namespace nd;
        T x = add(tape, embedding(tape, tok_emb, ids), embedding(tape, pos_emb, pos));
        for (const auto& b : blocks) {
            T h = layer_norm(tape, x, b.ln1_g, b.ln1_b);
            T qkv = linear(tape, h, b.qkv_w, b.qkv_b);
            T att = self_attention(tape, qkv, batch, S, cfg.n_heads, cfg.causal);
            x = add(tape, x, linear(tape, att, b.proj_w, b.proj_b));
            T h2 = layer_norm(tape, x, b.ln2_g, b.ln2_b);
            T f = linear(tape, gelu(tape, linear(tape, h2, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
            x = add(tape, x, f);
        }
        T hidden = layer_norm(tape, x, lnf_g, lnf_b);
        T logits = add_bias(tape, matmul_nt(tape, hidden, cfg.tied_head ? tok_emb : head_w), head_b);
        return {hidden, logits};
    }

    // Length logits for the given hidden rows (one row per sequence, at its
    // length marker). Output row r scores lengths 1..n_text for rows[r].
    T length_logits(nd::Tape<Real>* tape, const T& hidden, const std::vector<int>& rows) const {
        using namespace nd;
        return linear(tape, gather_rows(tape, hidden, rows), len_w, len_b);
    }
};

namespace ckpt {

inline void put_u32(std::ostream& os, uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                 char((v >> 24) & 0xff)};
    os.write(b, 4);
}
inline void put_u64(std::ostream& os, uint64_t v) {
    put_u32(os, uint32_t(v & 0xffffffffu));
    put_u32(os, uint32_t(v >> 32));
}
inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}
inline uint64_t get_u64(std::istream& is) {
    const uint64_t lo = get_u32(is);
    return lo | uint64_t(get_u32(is)) << 32;
}

inline constexpr char kMagic[4] = {'M', 'G', 'V', 'L'};
inline constexpr uint32_t kVersion = 1;

}  // namespace ckpt

// Layout: "MGVL", u32 version, u32 json length, json header (config, dtype,
// parameter names and sizes), u64 total scalar count, raw little-endian
// parameter payload in parameters() order.
template <class Real>
void save_checkpoint(Model<Real>& model, const std::string& path) {
    nlohmann::json names = nlohmann::json::array();
    auto ps = model.parameters();
    auto ns = model.parameter_names();
    for (size_t i = 0; i < ps.size(); ++i)
        names.push_back({{"name", ns[i]}, {"numel", ps[i]->numel()}});
    nlohmann::json hdr = {{"config", model.cfg.to_json()},
                          {"dtype", sizeof(Real) == 4 ? "f32" : "f64"},
                          {"params", names}};
    const std::string s = hdr.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    os.write(ckpt::kMagic, 4);
    ckpt::put_u32(os, ckpt::kVersion);
    ckpt::put_u32(os, uint32_t(s.size()));
    os.write(s.data(), std::streamsize(s.size()));
    ckpt::put_u64(os, uint64_t(model.parameter_count()));
    for (auto* p : ps)
        os.write(reinterpret_cast<const char*>(p->ptr()),
                 std::streamsize(size_t(p->numel()) * sizeof(Real)));
    if (!os) throw std::runtime_error("short write on checkpoint '" + path + "'");
}

template <class Real>
Model<Real> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != std::string(ckpt::kMagic, 4))
        throw std::runtime_error("'" + path + "' is not a checkpoint file");
    const uint32_t ver = ckpt::get_u32(is);
    if (ver != ckpt::kVersion)
        throw std::runtime_error("checkpoint version " + std::to_string(ver) + " unsupported");
    const uint32_t jlen = ckpt::get_u32(is);
    std::string s(jlen, '\0');
    is.read(s.data(), std::streamsize(jlen));
    if (!is) throw std::runtime_error("truncated checkpoint header in '" + path + "'");
    nlohmann::json hdr;
    try {
        hdr = nlohmann::json::parse(s);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("bad checkpoint header in '" + path + "': " + e.what());
    }
    const std::string want_dtype = sizeof(Real) == 4 ? "f32" : "f64";
    if (hdr.at("dtype").get<std::string>() != want_dtype)
        throw std::runtime_error("checkpoint dtype " + hdr.at("dtype").get<std::string>() +
                                 " does not match requested " + want_dtype);
    Model<Real> m = Model<Real>::build(ModelConfig::from_json(hdr.at("config")));
    auto ps = m.parameters();
    auto ns = m.parameter_names();
    const auto& params_j = hdr.at("params");
    if (params_j.size() != ps.size())
        throw std::runtime_error("checkpoint layout mismatch: " + std::to_string(params_j.size()) +
                                 " params, expected " + std::to_string(ps.size()));
    for (size_t i = 0; i < ps.size(); ++i) {
        if (params_j[i].at("name").get<std::string>() != ns[i] ||
            params_j[i].at("numel").get<int64_t>() != ps[i]->numel())
            throw std::runtime_error("checkpoint layout mismatch at parameter " + ns[i]);
    }
    const uint64_t total = ckpt::get_u64(is);
    if (total != uint64_t(m.parameter_count()))
        throw std::runtime_error("checkpoint scalar count mismatch in '" + path + "'");
    for (auto* p : ps)
        is.read(reinterpret_cast<char*>(p->ptr()),
                std::streamsize(size_t(p->numel()) * sizeof(Real)));
    if (!is) throw std::runtime_error("truncated checkpoint payload in '" + path + "'");
    is.peek();
    if (!is.eof()) throw std::runtime_error("trailing bytes in checkpoint '" + path + "'");
    return m;
}

}  // namespace magvlt::net
