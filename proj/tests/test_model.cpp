#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <sstream>

#include "magvlt/model.hpp"
#include "testutil.hpp"

using namespace magvlt;
using namespace magvlt::nd;
using net::Model;
using net::ModelConfig;

namespace {

ModelConfig tiny_cfg() {
    ModelConfig c;
    c.vocab_size = 10;
    c.seq_len = 6;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 2;
    c.ffn_mult = 2;
    c.n_text = 4;
    return c;
}

int64_t expected_param_count(const ModelConfig& c) {
    const int64_t D = c.d_model, F = int64_t(c.ffn_mult) * D, V = c.vocab_size;
    int64_t per_block = 2 * D + (D * 3 * D + 3 * D) + (D * D + D) + 2 * D + (D * F + F) + (F * D + D);
    int64_t n = V * D + int64_t(c.seq_len) * D + c.n_layers * per_block + 2 * D;
    n += c.tied_head ? V : V * D + V;
    n += D * c.n_text + c.n_text;
    return n;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(bool(is));
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config validation and json round trip") {
    ModelConfig c = tiny_cfg();
    CHECK_NOTHROW(c.validate());
    CHECK(ModelConfig::from_json(c.to_json()) == c);

    ModelConfig bad = c;
    bad.d_model = 9;  // not divisible by n_heads=2
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.n_layers = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.vocab_size = 1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("parameter count and naming match the layout") {
    for (bool tied : {true, false}) {
        ModelConfig c = tiny_cfg();
        c.tied_head = tied;
        Rng rng(1);
        auto m = Model<float>::init(c, rng);
        CHECK(m.parameter_count() == expected_param_count(c));
        auto ps = m.parameters();
        auto ns = m.parameter_names();
        REQUIRE(ps.size() == ns.size());
        bool saw_head_w = false;
        for (const auto& n : ns) saw_head_w |= (n == "head_w");
        CHECK(saw_head_w == !tied);
        CHECK(ns.front() == "tok_emb");
        CHECK(ns.back() == "len_b");
    }
}

TEST_CASE("init statistics follow the documented scheme") {
    ModelConfig c;
    c.vocab_size = 36;
    c.seq_len = 40;
    c.d_model = 64;
    c.n_heads = 4;
    c.n_layers = 4;
    Rng rng(7);
    auto m = Model<double>::init(c, rng);

    auto sample_std = [](const Tensor<double>& t) {
        double s = 0, s2 = 0;
        for (double x : *t.data) { s += x; s2 += x * x; }
        const double n = double(t.numel());
        return std::sqrt(s2 / n - (s / n) * (s / n));
    };
    CHECK(sample_std(m.tok_emb) == doctest::Approx(0.02).epsilon(0.05));
    const double resid = 0.02 / std::sqrt(2.0 * c.n_layers);
    CHECK(sample_std(m.blocks[0].proj_w) == doctest::Approx(resid).epsilon(0.05));
    CHECK(sample_std(m.blocks[2].fc2_w) == doctest::Approx(resid).epsilon(0.05));
    for (double x : *m.blocks[1].ln1_g.data) CHECK(x == 1.0);
    for (double x : *m.blocks[1].qkv_b.data) CHECK(x == 0.0);
    for (double x : *m.head_b.data) CHECK(x == 0.0);
}

TEST_CASE("same seed gives bitwise-identical init and forward") {
    ModelConfig c = tiny_cfg();
    Rng r1(42), r2(42);
    auto a = Model<float>::init(c, r1);
    auto b = Model<float>::init(c, r2);
    std::vector<int> ids = {1, 2, 3, 4, 5, 6, 0, 9, 8, 7, 2, 2};
    auto oa = a.forward(nullptr, ids, 2);
    auto ob = b.forward(nullptr, ids, 2);
    CHECK(*oa.logits.data == *ob.logits.data);
    CHECK(*oa.hidden.data == *ob.hidden.data);

    Rng r3(43);
    auto d = Model<float>::init(c, r3);
    CHECK(*d.forward(nullptr, ids, 2).logits.data != *oa.logits.data);
}

TEST_CASE("forward shapes and input validation") {
    ModelConfig c = tiny_cfg();
    Rng rng(3);
    auto m = Model<float>::init(c, rng);
    std::vector<int> ids(size_t(3 * c.seq_len), 1);
    auto out = m.forward(nullptr, ids, 3);
    CHECK(out.logits.shape == std::vector<int>{3 * c.seq_len, c.vocab_size});
    CHECK(out.hidden.shape == std::vector<int>{3 * c.seq_len, c.d_model});
    auto len = m.length_logits(nullptr, out.hidden, {0, c.seq_len, 2 * c.seq_len});
    CHECK(len.shape == std::vector<int>{3, c.n_text});

    CHECK_THROWS_AS(m.forward(nullptr, ids, 2), std::invalid_argument);
    std::vector<int> bad_ids(size_t(c.seq_len), c.vocab_size);  // out of range
    CHECK_THROWS(m.forward(nullptr, bad_ids, 1));
}

TEST_CASE("every parameter passes a finite-difference check") {
    for (bool tied : {true, false}) {
        ModelConfig c = tiny_cfg();
        c.tied_head = tied;
        Rng rng(11);
        auto m = Model<double>::init(c, rng);
        const int B = 2;
        std::vector<int> ids = {0, 3, 5, 2, 8, 9, 1, 1, 4, 6, 7, 0};
        std::vector<int> rows = {1, 3, 8, 10};         // a few supervised slots
        std::vector<int> targets = {4, 0, 9, 2};
        std::vector<int> bot_rows = {0, 6};            // one marker row per sequence
        std::vector<int> len_targets = {2, 0};

        auto build = [&](Tape<double>* tape) {
            auto out = m.forward(tape, ids, B);
            auto l1 = ce_smoothed_rows(tape, out.logits, rows, targets, 0.1);
            auto len = m.length_logits(tape, out.hidden, bot_rows);
            auto l2 = ce_smoothed_rows(tape, len, {0, 1}, len_targets, 0.0);
            return add(tape, l1, l2);
        };
        auto st = testutil::fd_check(m.parameters(), build, 6, 1e-4, 555);
        CHECK(st.checked > 150);
    }
}

TEST_CASE("causal model logits ignore future tokens bitwise") {
    ModelConfig c = tiny_cfg();
    c.causal = true;
    c.seq_len = 8;
    Rng rng(5);
    auto m = Model<float>::init(c, rng);
    std::vector<int> ids = {1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1, 2, 3, 4, 5, 6};
    auto base = m.forward(nullptr, ids, 2);
    auto ids2 = ids;
    ids2[8 + 4] = 0;  // batch item 1, position 4
    auto pert = m.forward(nullptr, ids2, 2);

    const int V = c.vocab_size, S = c.seq_len;
    auto row_equal = [&](const Tensor<float>& a, const Tensor<float>& b, int r) {
        for (int j = 0; j < V; ++j)
            if ((*a.data)[size_t(r * V + j)] != (*b.data)[size_t(r * V + j)]) return false;
        return true;
    };
    for (int r = 0; r < S; ++r) CHECK(row_equal(base.logits, pert.logits, r));  // item 0 untouched
    for (int r = S; r < S + 4; ++r) CHECK(row_equal(base.logits, pert.logits, r));
    CHECK_FALSE(row_equal(base.logits, pert.logits, S + 4));
}

TEST_CASE("bidirectional model sees the whole sequence") {
    ModelConfig c = tiny_cfg();
    Rng rng(5);
    auto m = Model<float>::init(c, rng);
    std::vector<int> ids = {1, 2, 3, 4, 5, 6};
    auto base = m.forward(nullptr, ids, 1);
    auto ids2 = ids;
    ids2[5] = 9;  // last position
    auto pert = m.forward(nullptr, ids2, 1);
    bool row0_changed = false;
    for (int j = 0; j < c.vocab_size; ++j)
        row0_changed |= ((*base.logits.data)[size_t(j)] != (*pert.logits.data)[size_t(j)]);
    CHECK(row0_changed);
}

TEST_CASE("checkpoint round trips bitwise") {
    const std::string path = "ckpt_test.bin";
    ModelConfig c = tiny_cfg();
    Rng rng(77);
    auto m = Model<float>::init(c, rng);
    // make the state less symmetric than a fresh init
    (*m.head_b.data)[3] = 0.25f;
    net::save_checkpoint(m, path);
    auto m2 = net::load_checkpoint<float>(path);
    CHECK(m2.cfg == c);
    auto pa = m.parameters();
    auto pb = m2.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i]->data == *pb[i]->data);

    std::vector<int> ids = {1, 2, 3, 4, 5, 6};
    CHECK(*m.forward(nullptr, ids, 1).logits.data == *m2.forward(nullptr, ids, 1).logits.data);

    const std::string path2 = "ckpt_test2.bin";
    net::save_checkpoint(m2, path2);
    CHECK(slurp(path) == slurp(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("checkpoint loading rejects junk") {
    CHECK_THROWS_AS(net::load_checkpoint<float>("no_such_file.bin"), std::runtime_error);

    const std::string bad = "ckpt_bad.bin";
    {
        std::ofstream os(bad, std::ios::binary);
        os << "JUNKJUNKJUNK";
    }
    CHECK_THROWS_WITH_AS(net::load_checkpoint<float>(bad),
                         doctest::Contains("not a checkpoint"), std::runtime_error);
    std::remove(bad.c_str());

    // dtype mismatch: written as f64, read as f32
    ModelConfig c = tiny_cfg();
    Rng rng(9);
    auto md = Model<double>::init(c, rng);
    const std::string dpath = "ckpt_f64.bin";
    net::save_checkpoint(md, dpath);
    CHECK_THROWS_WITH_AS(net::load_checkpoint<float>(dpath), doctest::Contains("dtype"),
                         std::runtime_error);
    CHECK_NOTHROW(net::load_checkpoint<double>(dpath));

    // truncation
    std::string bytes = slurp(dpath);
    const std::string tpath = "ckpt_trunc.bin";
    {
        std::ofstream os(tpath, std::ios::binary);
        os.write(bytes.data(), std::streamsize(bytes.size() - 16));
    }
    CHECK_THROWS_WITH_AS(net::load_checkpoint<double>(tpath), doctest::Contains("truncated"),
                         std::runtime_error);
    std::remove(dpath.c_str());
    std::remove(tpath.c_str());
}
