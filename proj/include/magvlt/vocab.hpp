#pragma once
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace magvlt::tok {

inline constexpr int kShapeCount = 3;
inline constexpr int kColorCount = 4;
inline constexpr int kImageCodes = 1 + kShapeCount * kColorCount;  // background + cells
inline constexpr int kWordCount = 13;
inline constexpr int kSpecialCount = 10;
inline constexpr int kVersion = 1;

extern const std::array<const char*, kShapeCount> kShapeNames;  // square circle triangle
extern const std::array<const char*, kColorCount> kColorNames;  // red green blue yellow

// Token id space, fixed: image cell codes [0,13), caption words [13,26),
// specials [26,36). Background is id 0; a cell holding a shape carries
// 1 + shape*4 + color.
struct Vocabulary {
    int grid = 0;
    int text_len = 0;

    static Vocabulary make(int grid, int text_len);

    int image_begin() const { return 0; }
    int image_end() const { return kImageCodes; }
    int word_begin() const { return kImageCodes; }
    int word_end() const { return kImageCodes + kWordCount; }
    int special_begin() const { return word_end(); }
    int size() const { return special_begin() + kSpecialCount; }

    int boi() const { return special_begin() + 0; }
    int bot() const { return special_begin() + 1; }
    int mask() const { return special_begin() + 2; }
    int pad() const { return special_begin() + 3; }
    int sep() const { return special_begin() + 4; }
    int left() const { return special_begin() + 5; }
    int right() const { return special_begin() + 6; }
    int top() const { return special_begin() + 7; }
    int bottom() const { return special_begin() + 8; }
    int none() const { return special_begin() + 9; }

    bool is_image_id(int id) const { return id >= image_begin() && id < image_end(); }
    bool is_word_id(int id) const { return id >= word_begin() && id < word_end(); }
    bool is_special_id(int id) const { return id >= special_begin() && id < size(); }

    static int cell_code(int shape, int color);
    static int cell_shape(int code);
    static int cell_color(int code);

    const std::vector<std::string>& words() const;
    int word_id(const std::string& word) const;  // throws on unknown word
    std::string id_name(int id) const;

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    bool operator==(const Vocabulary&) const = default;
};

struct GridImage {
    int grid = 0;
    std::vector<uint8_t> cells;  // grid*grid cell codes, row-major

    static GridImage empty(int g) { return {g, std::vector<uint8_t>(size_t(g) * g, 0)}; }
    uint8_t& at(int r, int c) { return cells[size_t(r) * grid + c]; }
    uint8_t at(int r, int c) const { return cells[size_t(r) * grid + c]; }
    uint64_t content_hash() const;
    bool operator==(const GridImage&) const = default;
};

std::vector<int> encode_image(const GridImage& img);
GridImage decode_image_tokens(int grid, const std::vector<int>& ids);

struct EncodedText {
    std::vector<int> ids;  // padded to text_len with PAD
    int length = 0;        // words before padding
};

EncodedText encode_text(const Vocabulary& v, const std::string& caption);
std::string decode_text_tokens(const Vocabulary& v, const std::vector<int>& ids, int length);

enum class PosKind { special, image, text };
enum class Order { image_first, text_first };

// Position map for the flat sequence
//   [BOI, SEL_I, x_1..x_NI, BOT, SEL_T, y_1..y_NT]      (image_first)
//   [BOT, SEL_T, y_1..y_NT, BOI, SEL_I, x_1..x_NI]      (text_first, AR t2i)
struct Layout {
    int grid = 0;
    int text_len = 0;
    Order order = Order::image_first;

    int n_image() const { return grid * grid; }
    int seq_len() const { return n_image() + text_len + 4; }

    int boi_pos() const { return order == Order::image_first ? 0 : 2 + text_len; }
    int sel_i_pos() const { return boi_pos() + 1; }
    int image_pos(int i) const;
    int bot_pos() const { return order == Order::image_first ? 2 + n_image() : 0; }
    int sel_t_pos() const { return bot_pos() + 1; }
    int text_pos(int j) const;

    PosKind kind(int pos) const;
    int image_index(int pos) const;  // inverse of image_pos, throws otherwise
    int text_index(int pos) const;
};

struct TokenSequence {
    std::vector<int> ids;
    std::vector<char> masked;  // set by mask application, all zero on build
};

// Validates ranges and slot contents; selectors default to NONE.
TokenSequence build_sequence(const Vocabulary& v, const Layout& lay,
                             const std::vector<int>& image_ids, const std::vector<int>& text_ids,
                             int sel_i_id, int sel_t_id);

}  // namespace magvlt::tok
