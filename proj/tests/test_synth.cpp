#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "magvlt/synth.hpp"

using namespace magvlt::synth;
using magvlt::nd::Rng;
using magvlt::tok::GridImage;
using magvlt::tok::Vocabulary;

namespace {

// Second opinion for the semantic oracle: works on raw grid cells and its own
// word matching, sharing no code with the library implementation.
bool brute_force_truth(const GridImage& img, const std::string& caption) {
    std::istringstream is(caption);
    std::vector<std::string> w;
    std::string t;
    while (is >> t) w.push_back(t);
    auto code_of = [](const std::string& color, const std::string& shape) {
        static const char* shapes[] = {"square", "circle", "triangle"};
        static const char* colors[] = {"red", "green", "blue", "yellow"};
        for (int s = 0; s < 3; ++s)
            for (int c = 0; c < 4; ++c)
                if (shape == shapes[s] && color == colors[c]) return 1 + s * 4 + c;
        return -1;
    };
    if (w.size() == 3) {
        const int code = code_of(w[1], w[2]);
        if (code < 0) return false;
        for (auto cell : img.cells)
            if (int(cell) == code) return true;
        return false;
    }
    const int first = code_of(w[1], w[2]);
    const size_t base = w.size() == 7 ? 4 : 5;
    const int second = code_of(w[base + 1], w[base + 2]);
    if (first < 0 || second < 0) return false;
    const std::string rel = w[3];
    for (int r1 = 0; r1 < img.grid; ++r1)
        for (int c1 = 0; c1 < img.grid; ++c1) {
            if (int(img.at(r1, c1)) != first) continue;
            for (int r2 = 0; r2 < img.grid; ++r2)
                for (int c2 = 0; c2 < img.grid; ++c2) {
                    if (r1 == r2 && c1 == c2) continue;
                    if (int(img.at(r2, c2)) != second) continue;
                    if (rel == "above" && r1 < r2) return true;
                    if (rel == "below" && r1 > r2) return true;
                    if (rel == "left" && c1 < c2) return true;
                    if (rel == "right" && c1 > c2) return true;
                }
        }
    return false;
}

}  // namespace

TEST_CASE("render and object extraction round trip") {
    Scene sc;
    sc.objects = {{0, 1, 2, 3}, {2, 0, 5, 5}};
    auto img = render(sc, 8);
    CHECK(img.at(2, 3) == Vocabulary::cell_code(0, 1));
    CHECK(img.at(5, 5) == Vocabulary::cell_code(2, 0));
    auto objs = objects_from_image(img);
    REQUIRE(objs.size() == 2);
    CHECK(objs[0] == ObjectSpec{0, 1, 2, 3});
    CHECK(objs[1] == ObjectSpec{2, 0, 5, 5});

    Scene clash;
    clash.objects = {{0, 0, 1, 1}, {1, 1, 1, 1}};
    CHECK_THROWS_AS(render(clash, 8), std::invalid_argument);
    Scene outside;
    outside.objects = {{0, 0, 9, 0}};
    CHECK_THROWS_AS(render(outside, 8), std::invalid_argument);
    CHECK_THROWS_AS(render(Scene{}, 8), std::invalid_argument);
}

TEST_CASE("caption grammar: exhaustive realize/parse round trip") {
    int checked = 0;
    for (int s1 = 0; s1 < 3; ++s1)
        for (int c1 = 0; c1 < 4; ++c1) {
            CaptionSpec single;
            single.shape1 = s1;
            single.color1 = c1;
            auto p = CaptionSpec::parse(single.realize());
            CHECK(!p.relational);
            CHECK(p.shape1 == s1);
            CHECK(p.color1 == c1);
            ++checked;
            for (auto rel : {Relation::above, Relation::below, Relation::left_of,
                             Relation::right_of})
                for (int s2 = 0; s2 < 3; ++s2)
                    for (int c2 = 0; c2 < 4; ++c2) {
                        CaptionSpec full;
                        full.relational = true;
                        full.shape1 = s1;
                        full.color1 = c1;
                        full.rel = rel;
                        full.shape2 = s2;
                        full.color2 = c2;
                        const std::string text = full.realize();
                        auto q = CaptionSpec::parse(text);
                        CHECK(q.relational);
                        CHECK(q.shape1 == s1);
                        CHECK(q.color1 == c1);
                        CHECK(q.rel == rel);
                        CHECK(q.shape2 == s2);
                        CHECK(q.color2 == c2);
                        // declared word count matches the realized string
                        std::istringstream is(text);
                        std::string w;
                        int n = 0;
                        while (is >> w) ++n;
                        CHECK(n == full.word_count());
                        ++checked;
                    }
        }
    CHECK(checked == 12 + 12 * 4 * 12);
}

TEST_CASE("caption parse failures carry context") {
    for (const char* bad :
         {"", "red square", "a red", "a purple square", "a red blob",
          "a red square beside a blue circle", "a red square left a blue circle",
          "a red square above blue circle", "a red square above a blue circle extra words here"}) {
        CAPTURE(bad);
        CHECK_THROWS_WITH_AS(CaptionSpec::parse(bad), doctest::Contains("parse error"),
                             std::invalid_argument);
    }
}

TEST_CASE("oracle semantics on hand-built scenes") {
    // red square at (1,1), blue circle at (4,1): same column
    Scene sc;
    sc.objects = {{0, 0, 1, 1}, {1, 2, 4, 1}};
    auto img = render(sc, 8);
    CHECK(oracle_check(img, "a red square"));
    CHECK(oracle_check(img, "a blue circle"));
    CHECK(!oracle_check(img, "a green triangle"));
    CHECK(oracle_check(img, "a red square above a blue circle"));
    CHECK(oracle_check(img, "a blue circle below a red square"));
    CHECK(!oracle_check(img, "a red square below a blue circle"));
    // same column: strict inequality rejects left/right both ways
    CHECK(!oracle_check(img, "a red square left of a blue circle"));
    CHECK(!oracle_check(img, "a red square right of a blue circle"));

    // any-binding: two red squares, only one is above the circle
    Scene sc2;
    sc2.objects = {{0, 0, 6, 0}, {0, 0, 0, 5}, {1, 2, 3, 3}};
    auto img2 = render(sc2, 8);
    CHECK(oracle_check(img2, "a red square above a blue circle"));
    CHECK(oracle_check(img2, "a red square below a blue circle"));

    // the two matching objects must be distinct cells
    Scene sc3;
    sc3.objects = {{0, 0, 2, 2}};
    auto img3 = render(sc3, 8);
    CHECK(!oracle_check(img3, "a red square above a red square"));
    Scene sc4;
    sc4.objects = {{0, 0, 2, 2}, {0, 0, 5, 2}};
    auto img4 = render(sc4, 8);
    CHECK(oracle_check(img4, "a red square above a red square"));
    CHECK(oracle_check(img4, "a red square below a red square"));
}

TEST_CASE("oracle agrees with an independent brute-force checker") {
    Rng rng(99);
    int agreements = 0;
    for (int i = 0; i < 1000; ++i) {
        auto s = generate_sample(rng, 8);
        // half the checks use the generated (true) caption, half a random one
        std::string cap;
        if (i % 2 == 0) {
            cap = s.caption;
        } else {
            CaptionSpec c;
            c.relational = rng.coin();
            c.shape1 = rng.below(3);
            c.color1 = rng.below(4);
            c.shape2 = rng.below(3);
            c.color2 = rng.below(4);
            c.rel = Relation(rng.below(4));
            cap = c.realize();
        }
        const bool lib = oracle_check(s.image, cap);
        const bool ref = brute_force_truth(s.image, cap);
        CHECK(lib == ref);
        agreements += int(lib == ref);
    }
    CHECK(agreements == 1000);
}

TEST_CASE("generated samples are deterministic, valid, and length-typed") {
    Rng a(5), b(5);
    for (int i = 0; i < 20; ++i) {
        auto s1 = generate_sample(a, 8);
        auto s2 = generate_sample(b, 8);
        CHECK(s1.image == s2.image);
        CHECK(s1.caption == s2.caption);
    }
    Rng rng(6);
    for (int i = 0; i < 500; ++i) {
        auto s = generate_sample(rng, 8);
        CHECK(oracle_check(s.image, s.caption));
        const size_t n_obj = s.scene.objects.size();
        CHECK(n_obj >= 1);
        CHECK(n_obj <= 3);
        std::unordered_set<int> cells;
        for (const auto& o : s.scene.objects) cells.insert(o.row * 8 + o.col);
        CHECK(cells.size() == n_obj);
        std::istringstream is(s.caption);
        std::string w;
        int words = 0;
        while (is >> w) ++words;
        if (n_obj == 1) CHECK(words == 3);
        else CHECK((words == 7 || words == 8));
    }
}

TEST_CASE("image mixing keeps the declared halves") {
    GridImage a = GridImage::empty(4), b = GridImage::empty(4);
    a.at(0, 0) = 1;
    a.at(0, 3) = 2;
    a.at(3, 1) = 3;
    b.at(0, 0) = 4;
    b.at(2, 2) = 5;
    b.at(3, 3) = 6;

    auto v = mix_images(a, b, 0);  // left cols from a, right cols from b
    CHECK(v.at(0, 0) == 1);
    CHECK(v.at(3, 1) == 3);
    CHECK(v.at(0, 3) == 0);  // a's right-half content dropped
    CHECK(v.at(2, 2) == 5);
    CHECK(v.at(3, 3) == 6);

    auto h = mix_images(a, b, 1);  // top rows from a, bottom rows from b
    CHECK(h.at(0, 0) == 1);
    CHECK(h.at(0, 3) == 2);
    CHECK(h.at(3, 1) == 0);
    CHECK(h.at(2, 2) == 5);
    CHECK(h.at(3, 3) == 6);

    CHECK(mix_images(a, a, 0) == a);
    CHECK(mix_images(a, a, 1) == a);
    CHECK_THROWS_AS(mix_images(a, GridImage::empty(8), 0), std::invalid_argument);
    CHECK_THROWS_AS(mix_images(a, b, 2), std::invalid_argument);

    CHECK(image_confined(a, 0, 0) == false);  // a has content in both column halves
    GridImage leftonly = GridImage::empty(4);
    leftonly.at(2, 1) = 7;
    CHECK(image_confined(leftonly, 0, 0));
    CHECK(!image_confined(leftonly, 0, 1));
    CHECK(!image_confined(GridImage::empty(4), 0, 0));  // empty: nothing to confine
}

TEST_CASE("text mixing concatenates with separator and truncates") {
    auto v = Vocabulary::make(8, 12);
    auto a = encode_text(v, "a red square");
    auto b = encode_text(v, "a blue circle");
    auto m = mix_texts(v, a, b);
    CHECK(m.occupied == 7);
    CHECK(m.sep_pos == 3);
    CHECK(m.seg_begin[0] == 0);
    CHECK(m.seg_len[0] == 3);
    CHECK(m.seg_begin[1] == 4);
    CHECK(m.seg_len[1] == 3);
    CHECK(m.ids[3] == v.sep());
    CHECK(m.ids[0] == v.word_id("a"));
    CHECK(m.ids[4] == v.word_id("a"));
    CHECK(m.ids[11] == v.pad());

    auto big1 = encode_text(v, "a red square left of a blue circle");
    auto big2 = encode_text(v, "a green triangle right of a yellow square");
    auto t = mix_texts(v, big1, big2);
    CHECK(t.occupied == 12);
    CHECK(t.sep_pos == 8);
    CHECK(t.seg_len[0] == 8);
    CHECK(t.seg_begin[1] == 9);
    CHECK(t.seg_len[1] == 3);  // truncated second caption
}

TEST_CASE("shard round trip and split disjointness") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "magvlt_synth_test";
    fs::remove_all(dir);
    auto sum = make_split(dir.string(), 300, 60, 4, 12, 123, "deadbeef");
    CHECK(sum.n_train == 300);

    auto train = load_shard(sum.train_path, 4);
    auto val = load_shard(sum.val_path, 4);
    CHECK(train.size() == 300);
    CHECK(val.size() == 60);
    std::unordered_set<uint64_t> vh;
    for (const auto& s : val) vh.insert(s.image.content_hash());
    for (const auto& s : train) CHECK(!vh.count(s.image.content_hash()));
    for (const auto& s : val) CHECK(oracle_check(s.image, s.caption));

    // same seed regenerates byte-identical shards
    const auto dir2 = fs::temp_directory_path() / "magvlt_synth_test2";
    fs::remove_all(dir2);
    make_split(dir2.string(), 300, 60, 4, 12, 123, "deadbeef");
    auto bytes = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(is), {});
    };
    CHECK(bytes(dir / "train.tsv") == bytes(dir2 / "train.tsv"));
    CHECK(bytes(dir / "val.tsv") == bytes(dir2 / "val.tsv"));

    // manifest carries the provenance fields
    std::ifstream mf(sum.manifest_path);
    nlohmann::json m;
    mf >> m;
    CHECK(m["grid"] == 4);
    CHECK(m["config_hash"] == "deadbeef");
    CHECK(m["grammar_version"] == 1);

    // malformed shards are rejected with line context
    const auto bad = dir / "bad.tsv";
    std::ofstream(bad) << "1 2 3\n";
    CHECK_THROWS_WITH_AS(load_shard(bad.string(), 4), doctest::Contains("line 1"),
                         std::runtime_error);
    std::ofstream(bad) << std::string("0 ") + "99 0 0 0 0 0 0 0 0 0 0 0 0 0 0\ta red square\n";
    CHECK_THROWS_AS(load_shard(bad.string(), 4), std::runtime_error);
    fs::remove_all(dir);
    fs::remove_all(dir2);
}
