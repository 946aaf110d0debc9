#include "magvlt/vocab.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace magvlt::tok {

const std::array<const char*, kShapeCount> kShapeNames = {"square", "circle", "triangle"};
const std::array<const char*, kColorCount> kColorNames = {"red", "green", "blue", "yellow"};

static const std::vector<std::string> kWords = {
    "a",     "red",      "green", "blue",  "yellow", "square", "circle",
    "triangle", "above", "below", "left",  "right",  "of"};

static const std::array<const char*, kSpecialCount> kSpecialNames = {
    "<boi>", "<bot>", "<mask>", "<pad>", "<sep>",
    "<left>", "<right>", "<top>", "<bottom>", "<none>"};

Vocabulary Vocabulary::make(int grid, int text_len) {
    if (grid < 2) throw std::invalid_argument("Vocabulary: grid must be at least 2");
    if (text_len < 8)
        throw std::invalid_argument(
            "Vocabulary: text_len must be at least 8 to fit relational captions");
    Vocabulary v;
    v.grid = grid;
    v.text_len = text_len;
    return v;
}

int Vocabulary::cell_code(int shape, int color) {
    if (shape < 0 || shape >= kShapeCount || color < 0 || color >= kColorCount)
        throw std::invalid_argument("cell_code: shape or color out of range");
    return 1 + shape * kColorCount + color;
}

int Vocabulary::cell_shape(int code) {
    if (code < 1 || code >= kImageCodes)
        throw std::invalid_argument("cell_shape: code " + std::to_string(code) +
                                    " is not an object cell");
    return (code - 1) / kColorCount;
}

int Vocabulary::cell_color(int code) {
    if (code < 1 || code >= kImageCodes)
        throw std::invalid_argument("cell_color: code " + std::to_string(code) +
                                    " is not an object cell");
    return (code - 1) % kColorCount;
}

const std::vector<std::string>& Vocabulary::words() const { return kWords; }

int Vocabulary::word_id(const std::string& word) const {
    for (size_t i = 0; i < kWords.size(); ++i)
        if (kWords[i] == word) return word_begin() + int(i);
    throw std::invalid_argument("unknown word '" + word + "'");
}

std::string Vocabulary::id_name(int id) const {
    if (is_image_id(id)) {
        if (id == 0) return "<bg>";
        return std::string(kColorNames[size_t(cell_color(id))]) + "-" +
               kShapeNames[size_t(cell_shape(id))];
    }
    if (is_word_id(id)) return kWords[size_t(id - word_begin())];
    if (is_special_id(id)) return kSpecialNames[size_t(id - special_begin())];
    throw std::invalid_argument("id_name: id " + std::to_string(id) + " outside vocabulary");
}

nlohmann::json Vocabulary::to_json() const {
    nlohmann::json j;
    j["version"] = kVersion;
    j["grid"] = grid;
    j["text_len"] = text_len;
    j["image_codes"] = kImageCodes;
    nlohmann::json words = nlohmann::json::array();
    for (const auto& w : kWords) words.push_back(w);
    j["words"] = words;
    nlohmann::json specials = nlohmann::json::array();
    for (const auto* s : kSpecialNames) specials.push_back(s);
    j["specials"] = specials;
    return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    if (!j.contains("version") || j["version"].get<int>() != kVersion)
        throw std::runtime_error("vocabulary: unsupported or missing version");
    Vocabulary v = make(j.at("grid").get<int>(), j.at("text_len").get<int>());
    if (j.at("image_codes").get<int>() != kImageCodes)
        throw std::runtime_error("vocabulary: image code count mismatch");
    const auto words = j.at("words").get<std::vector<std::string>>();
    if (words != kWords) throw std::runtime_error("vocabulary: word list mismatch");
    const auto specials = j.at("specials").get<std::vector<std::string>>();
    for (size_t i = 0; i < specials.size(); ++i)
        if (i >= kSpecialNames.size() || specials[i] != kSpecialNames[i])
            throw std::runtime_error("vocabulary: special token list mismatch");
    if (specials.size() != kSpecialNames.size())
        throw std::runtime_error("vocabulary: special token list mismatch");
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write vocabulary to " + path);
    os << to_json().dump(2) << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read vocabulary from " + path);
    nlohmann::json j;
    is >> j;
    return from_json(j);
}

uint64_t GridImage::content_hash() const {
    uint64_t h = 1469598103934665603ull;
    for (uint8_t c : cells) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::vector<int> encode_image(const GridImage& img) {
    std::vector<int> out;
    out.reserve(img.cells.size());
    for (uint8_t c : img.cells) {
        if (c >= kImageCodes)
            throw std::invalid_argument("encode_image: cell code " + std::to_string(int(c)) +
                                        " out of range");
        out.push_back(int(c));
    }
    return out;
}

GridImage decode_image_tokens(int grid, const std::vector<int>& ids) {
    if (int(ids.size()) != grid * grid)
        throw std::invalid_argument("decode_image_tokens: expected " + std::to_string(grid * grid) +
                                    " ids, got " + std::to_string(ids.size()));
    GridImage img = GridImage::empty(grid);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= kImageCodes)
            throw std::invalid_argument("decode_image_tokens: id " + std::to_string(ids[i]) +
                                        " is not an image code");
        img.cells[i] = uint8_t(ids[i]);
    }
    return img;
}

EncodedText encode_text(const Vocabulary& v, const std::string& caption) {
    std::istringstream is(caption);
    EncodedText e;
    std::string w;
    while (is >> w) {
        if (int(e.ids.size()) >= v.text_len)
            throw std::invalid_argument("encode_text: caption longer than " +
                                        std::to_string(v.text_len) + " words");
        e.ids.push_back(v.word_id(w));
    }
    if (e.ids.empty()) throw std::invalid_argument("encode_text: empty caption");
    e.length = int(e.ids.size());
    e.ids.resize(size_t(v.text_len), v.pad());
    return e;
}

std::string decode_text_tokens(const Vocabulary& v, const std::vector<int>& ids, int length) {
    if (length < 0 || length > int(ids.size()) || length > v.text_len)
        throw std::invalid_argument("decode_text_tokens: bad length " + std::to_string(length));
    std::string out;
    for (int i = 0; i < length; ++i) {
        if (!v.is_word_id(ids[size_t(i)]))
            throw std::invalid_argument("decode_text_tokens: id " + std::to_string(ids[size_t(i)]) +
                                        " at slot " + std::to_string(i) + " is not a word");
        if (i) out += ' ';
        out += v.words()[size_t(ids[size_t(i)] - v.word_begin())];
    }
    return out;
}

int Layout::image_pos(int i) const {
    if (i < 0 || i >= n_image())
        throw std::invalid_argument("Layout::image_pos: index " + std::to_string(i) +
                                    " outside grid");
    return boi_pos() + 2 + i;
}

int Layout::text_pos(int j) const {
    if (j < 0 || j >= text_len)
        throw std::invalid_argument("Layout::text_pos: index " + std::to_string(j) +
                                    " outside text region");
    return bot_pos() + 2 + j;
}

PosKind Layout::kind(int pos) const {
    if (pos < 0 || pos >= seq_len())
        throw std::invalid_argument("Layout::kind: position " + std::to_string(pos) +
                                    " outside sequence");
    if (pos == boi_pos() || pos == sel_i_pos() || pos == bot_pos() || pos == sel_t_pos())
        return PosKind::special;
    if (pos >= boi_pos() + 2 && pos < boi_pos() + 2 + n_image()) return PosKind::image;
    return PosKind::text;
}

int Layout::image_index(int pos) const {
    if (kind(pos) != PosKind::image)
        throw std::invalid_argument("Layout::image_index: position " + std::to_string(pos) +
                                    " is not an image slot");
    return pos - (boi_pos() + 2);
}

int Layout::text_index(int pos) const {
    if (kind(pos) != PosKind::text)
        throw std::invalid_argument("Layout::text_index: position " + std::to_string(pos) +
                                    " is not a text slot");
    return pos - (bot_pos() + 2);
}

TokenSequence build_sequence(const Vocabulary& v, const Layout& lay,
                             const std::vector<int>& image_ids, const std::vector<int>& text_ids,
                             int sel_i_id, int sel_t_id) {
    if (lay.grid != v.grid || lay.text_len != v.text_len)
        throw std::invalid_argument("build_sequence: layout does not match vocabulary");
    if (int(image_ids.size()) != lay.n_image())
        throw std::invalid_argument("build_sequence: expected " + std::to_string(lay.n_image()) +
                                    " image ids, got " + std::to_string(image_ids.size()));
    if (int(text_ids.size()) != lay.text_len)
        throw std::invalid_argument("build_sequence: expected " + std::to_string(lay.text_len) +
                                    " text ids, got " + std::to_string(text_ids.size()));
    const bool sel_i_ok = sel_i_id == v.none() || sel_i_id == v.left() || sel_i_id == v.right() ||
                          sel_i_id == v.top() || sel_i_id == v.bottom();
    if (!sel_i_ok) throw std::invalid_argument("build_sequence: bad image selector id");
    if (sel_t_id != v.none() && sel_t_id != v.left() && sel_t_id != v.right())
        throw std::invalid_argument("build_sequence: bad text selector id");

    TokenSequence seq;
    seq.ids.assign(size_t(lay.seq_len()), v.pad());
    seq.masked.assign(size_t(lay.seq_len()), 0);
    seq.ids[size_t(lay.boi_pos())] = v.boi();
    seq.ids[size_t(lay.sel_i_pos())] = sel_i_id;
    seq.ids[size_t(lay.bot_pos())] = v.bot();
    seq.ids[size_t(lay.sel_t_pos())] = sel_t_id;
    for (int i = 0; i < lay.n_image(); ++i) {
        const int id = image_ids[size_t(i)];
        if (!v.is_image_id(id))
            throw std::invalid_argument("build_sequence: id " + std::to_string(id) +
                                        " is not an image code");
        seq.ids[size_t(lay.image_pos(i))] = id;
    }
    for (int j = 0; j < lay.text_len; ++j) {
        const int id = text_ids[size_t(j)];
        if (!v.is_word_id(id) && id != v.pad() && id != v.sep())
            throw std::invalid_argument("build_sequence: id " + std::to_string(id) +
                                        " not allowed in a text slot");
        seq.ids[size_t(lay.text_pos(j))] = id;
    }
    return seq;
}

}  // namespace magvlt::tok
