#include "magvlt/synth.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace magvlt::synth {

using tok::GridImage;
using tok::Vocabulary;

tok::GridImage render(const Scene& scene, int grid) {
    if (scene.objects.empty() || scene.objects.size() > 3)
        throw std::invalid_argument("render: scene must hold 1..3 objects");
    GridImage img = GridImage::empty(grid);
    for (const auto& o : scene.objects) {
        if (o.row < 0 || o.row >= grid || o.col < 0 || o.col >= grid)
            throw std::invalid_argument("render: object outside the grid");
        if (img.at(o.row, o.col) != 0)
            throw std::invalid_argument("render: two objects share a cell");
        img.at(o.row, o.col) = uint8_t(Vocabulary::cell_code(o.shape, o.color));
    }
    return img;
}

std::vector<ObjectSpec> objects_from_image(const GridImage& img) {
    std::vector<ObjectSpec> out;
    for (int r = 0; r < img.grid; ++r)
        for (int c = 0; c < img.grid; ++c) {
            const uint8_t code = img.at(r, c);
            if (code == 0) continue;
            out.push_back({Vocabulary::cell_shape(code), Vocabulary::cell_color(code), r, c});
        }
    return out;
}

static const char* rel_words(Relation r) {
    switch (r) {
        case Relation::above: return "above";
        case Relation::below: return "below";
        case Relation::left_of: return "left of";
        case Relation::right_of: return "right of";
    }
    throw std::logic_error("rel_words: bad relation");
}

std::string CaptionSpec::realize() const {
    std::string s = std::string("a ") + tok::kColorNames[size_t(color1)] + " " +
                    tok::kShapeNames[size_t(shape1)];
    if (!relational) return s;
    return s + " " + rel_words(rel) + " a " + tok::kColorNames[size_t(color2)] + " " +
           tok::kShapeNames[size_t(shape2)];
}

static int color_index(const std::string& w) {
    for (int i = 0; i < tok::kColorCount; ++i)
        if (w == tok::kColorNames[size_t(i)]) return i;
    return -1;
}
static int shape_index(const std::string& w) {
    for (int i = 0; i < tok::kShapeCount; ++i)
        if (w == tok::kShapeNames[size_t(i)]) return i;
    return -1;
}

CaptionSpec CaptionSpec::parse(const std::string& caption) {
    std::istringstream is(caption);
    std::vector<std::string> w;
    std::string t;
    while (is >> t) w.push_back(t);

    auto fail = [&](const std::string& why) -> CaptionSpec {
        throw std::invalid_argument("caption parse error: " + why + " in '" + caption + "'");
    };
    auto noun = [&](size_t at, int& shape, int& color) {
        if (at + 3 > w.size()) fail("truncated noun phrase");
        if (w[at] != "a") fail("expected 'a'");
        color = color_index(w[at + 1]);
        if (color < 0) fail("expected a color, got '" + w[at + 1] + "'");
        shape = shape_index(w[at + 2]);
        if (shape < 0) fail("expected a shape, got '" + w[at + 2] + "'");
    };

    CaptionSpec c;
    if (w.size() == 3) {
        noun(0, c.shape1, c.color1);
        return c;
    }
    if (w.size() == 7 || w.size() == 8) {
        noun(0, c.shape1, c.color1);
        c.relational = true;
        size_t second;
        if (w.size() == 7) {
            if (w[3] == "above") c.rel = Relation::above;
            else if (w[3] == "below") c.rel = Relation::below;
            else fail("expected 'above' or 'below', got '" + w[3] + "'");
            second = 4;
        } else {
            if (w[4] != "of") fail("expected 'of', got '" + w[4] + "'");
            if (w[3] == "left") c.rel = Relation::left_of;
            else if (w[3] == "right") c.rel = Relation::right_of;
            else fail("expected 'left' or 'right', got '" + w[3] + "'");
            second = 5;
        }
        noun(second, c.shape2, c.color2);
        return c;
    }
    return fail("caption must have 3, 7 or 8 words, got " + std::to_string(w.size()));
}

static bool relation_holds(const ObjectSpec& a, const ObjectSpec& b, Relation r) {
    switch (r) {
        case Relation::above: return a.row < b.row;
        case Relation::below: return a.row > b.row;
        case Relation::left_of: return a.col < b.col;
        case Relation::right_of: return a.col > b.col;
    }
    return false;
}

bool oracle_check(const GridImage& img, const std::string& caption) {
    const CaptionSpec c = CaptionSpec::parse(caption);
    const auto objs = objects_from_image(img);
    if (!c.relational) {
        for (const auto& o : objs)
            if (o.shape == c.shape1 && o.color == c.color1) return true;
        return false;
    }
    for (const auto& a : objs) {
        if (a.shape != c.shape1 || a.color != c.color1) continue;
        for (const auto& b : objs) {
            if (&a == &b) continue;
            if (b.shape != c.shape2 || b.color != c.color2) continue;
            if (relation_holds(a, b, c.rel)) return true;
        }
    }
    return false;
}

Sample generate_sample(nd::Rng& rng, int grid) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const int n = 1 + rng.below(3);
        Scene scene;
        std::unordered_set<int> used;
        for (int i = 0; i < n; ++i) {
            int cell;
            do { cell = rng.below(grid * grid); } while (used.count(cell));
            used.insert(cell);
            scene.objects.push_back({rng.below(tok::kShapeCount), rng.below(tok::kColorCount),
                                     cell / grid, cell % grid});
        }
        CaptionSpec cap;
        if (n == 1) {
            cap.shape1 = scene.objects[0].shape;
            cap.color1 = scene.objects[0].color;
        } else {
            const int i = rng.below(n);
            int j = rng.below(n - 1);
            if (j >= i) ++j;
            const auto& a = scene.objects[size_t(i)];
            const auto& b = scene.objects[size_t(j)];
            std::vector<Relation> truths;
            for (Relation r : {Relation::above, Relation::below, Relation::left_of,
                               Relation::right_of})
                if (relation_holds(a, b, r)) truths.push_back(r);
            if (truths.empty()) continue;  // cannot happen for distinct cells
            cap.relational = true;
            cap.shape1 = a.shape;
            cap.color1 = a.color;
            cap.shape2 = b.shape;
            cap.color2 = b.color;
            cap.rel = truths[size_t(rng.below(int(truths.size())))];
        }
        Sample s{scene, render(scene, grid), cap.realize()};
        if (oracle_check(s.image, s.caption)) return s;
    }
    throw std::logic_error("generate_sample: rejection sampling failed 1000 times");
}

tok::GridImage mix_images(const GridImage& a, const GridImage& b, int axis) {
    if (a.grid != b.grid) throw std::invalid_argument("mix_images: grid size mismatch");
    if (axis != 0 && axis != 1) throw std::invalid_argument("mix_images: axis must be 0 or 1");
    GridImage out = GridImage::empty(a.grid);
    const int half = a.grid / 2;
    for (int r = 0; r < a.grid; ++r)
        for (int c = 0; c < a.grid; ++c) {
            const bool first = axis == 0 ? (c < half) : (r < half);
            out.at(r, c) = first ? a.at(r, c) : b.at(r, c);
        }
    return out;
}

bool image_confined(const GridImage& img, int axis, int side) {
    if (axis != 0 && axis != 1) throw std::invalid_argument("image_confined: axis must be 0 or 1");
    if (side != 0 && side != 1) throw std::invalid_argument("image_confined: side must be 0 or 1");
    const int half = img.grid / 2;
    bool any = false;
    for (const auto& o : objects_from_image(img)) {
        const int coord = axis == 0 ? o.col : o.row;
        const bool in_half = side == 0 ? coord < half : coord >= half;
        if (!in_half) return false;
        any = true;
    }
    return any;
}

MixedText mix_texts(const Vocabulary& v, const tok::EncodedText& a, const tok::EncodedText& b) {
    MixedText m;
    m.ids.assign(size_t(v.text_len), v.pad());
    int k = 0;
    m.seg_begin[0] = 0;
    for (int i = 0; i < a.length && k < v.text_len; ++i) m.ids[size_t(k++)] = a.ids[size_t(i)];
    m.seg_len[0] = k;
    if (k < v.text_len) {
        m.sep_pos = k;
        m.ids[size_t(k++)] = v.sep();
    }
    m.seg_begin[1] = k;
    for (int i = 0; i < b.length && k < v.text_len; ++i) m.ids[size_t(k++)] = b.ids[size_t(i)];
    m.seg_len[1] = k - m.seg_begin[1];
    m.occupied = k;
    return m;
}

// ---- shards -------------------------------------------------------------
void write_shard(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write shard " + path);
    for (const auto& s : samples) {
        for (size_t i = 0; i < s.image.cells.size(); ++i) {
            if (i) os << ' ';
            os << int(s.image.cells[i]);
        }
        os << '\t' << s.caption << '\n';
    }
    if (!os) throw std::runtime_error("short write on shard " + path);
}

std::vector<Sample> load_shard(const std::string& path, int grid) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read shard " + path);
    std::vector<Sample> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("shard " + path + " line " + std::to_string(lineno) +
                                     ": missing tab separator");
        std::istringstream cells(line.substr(0, tab));
        GridImage img = GridImage::empty(grid);
        int code, n = 0;
        while (cells >> code) {
            if (n >= grid * grid || code < 0 || code >= tok::kImageCodes)
                throw std::runtime_error("shard " + path + " line " + std::to_string(lineno) +
                                         ": bad cell codes");
            img.cells[size_t(n++)] = uint8_t(code);
        }
        if (n != grid * grid)
            throw std::runtime_error("shard " + path + " line " + std::to_string(lineno) + ": got " +
                                     std::to_string(n) + " cells, want " +
                                     std::to_string(grid * grid));
        Sample s;
        s.image = img;
        s.caption = line.substr(tab + 1);
        CaptionSpec::parse(s.caption);  // grammar validation
        for (const auto& o : objects_from_image(img)) s.scene.objects.push_back(o);
        out.push_back(std::move(s));
    }
    return out;
}

SplitSummary make_split(const std::string& dir, int n_train, int n_val, int grid, int text_len,
                        uint64_t seed, const std::string& config_hash) {
    if (n_train <= 0 || n_val <= 0)
        throw std::invalid_argument("make_split: sample counts must be positive");
    std::filesystem::create_directories(dir);
    nd::Rng val_rng = nd::Rng(seed).child(0x76616cull);    // "val"
    nd::Rng train_rng = nd::Rng(seed).child(0x7472ull);    // "tr"

    std::vector<Sample> val;
    std::unordered_set<uint64_t> val_hashes;
    for (int i = 0; i < n_val; ++i) {
        val.push_back(generate_sample(val_rng, grid));
        val_hashes.insert(val.back().image.content_hash());
    }
    std::vector<Sample> train;
    const int64_t guard = int64_t(n_train) * 100 + 1000;
    int64_t tries = 0;
    while (int(train.size()) < n_train) {
        if (++tries > guard)
            throw std::runtime_error("make_split: cannot find enough scenes disjoint from val");
        Sample s = generate_sample(train_rng, grid);
        if (val_hashes.count(s.image.content_hash())) continue;
        train.push_back(std::move(s));
    }

    SplitSummary sum;
    sum.n_train = n_train;
    sum.n_val = n_val;
    sum.train_path = (std::filesystem::path(dir) / "train.tsv").string();
    sum.val_path = (std::filesystem::path(dir) / "val.tsv").string();
    sum.manifest_path = (std::filesystem::path(dir) / "manifest.json").string();
    write_shard(sum.train_path, train);
    write_shard(sum.val_path, val);

    nlohmann::json m;
    m["version"] = 1;
    m["grammar_version"] = 1;
    m["grid"] = grid;
    m["text_len"] = text_len;
    m["n_train"] = n_train;
    m["n_val"] = n_val;
    m["seed"] = seed;
    m["config_hash"] = config_hash;
    m["files"] = {{"train", "train.tsv"}, {"val", "val.tsv"}};
    std::ofstream os(sum.manifest_path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write manifest " + sum.manifest_path);
    os << m.dump(2) << "\n";
    return sum;
}

}  // namespace magvlt::synth
