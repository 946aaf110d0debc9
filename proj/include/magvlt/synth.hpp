#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "magvlt/rng.hpp"
#include "magvlt/vocab.hpp"

namespace magvlt::synth {

struct ObjectSpec {
    int shape = 0, color = 0;  // indices into kShapeNames / kColorNames
    int row = 0, col = 0;
    bool operator==(const ObjectSpec&) const = default;
};

struct Scene {
    std::vector<ObjectSpec> objects;  // 1..3, pairwise distinct cells
};

tok::GridImage render(const Scene& scene, int grid);
std::vector<ObjectSpec> objects_from_image(const tok::GridImage& img);

enum class Relation { above, below, left_of, right_of };

// Parsed caption: either "a <color> <shape>" or
// "a <color> <shape> <rel> a <color> <shape>" with rel in
// {above, below, left of, right of}.
struct CaptionSpec {
    bool relational = false;
    int shape1 = 0, color1 = 0;
    Relation rel = Relation::above;
    int shape2 = 0, color2 = 0;

    std::string realize() const;
    int word_count() const { return relational ? (rel == Relation::above || rel == Relation::below ? 7 : 8) : 3; }
    static CaptionSpec parse(const std::string& caption);  // throws on bad grammar
};

// True iff the caption holds for the image: some object matches the first
// description, and for relational captions some distinct matching pair
// satisfies the relation with strict cell-coordinate inequality.
bool oracle_check(const tok::GridImage& img, const std::string& caption);

struct Sample {
    Scene scene;
    tok::GridImage image;
    std::string caption;
};

// Scene size is uniform on {1,2,3}; single-object scenes get the single-form
// caption, larger scenes a relational one about a random true pair. Resamples
// until the oracle accepts (it always should; the guard catches logic rot).
Sample generate_sample(nd::Rng& rng, int grid);

// axis 0 splits columns (LEFT half from a, RIGHT from b),
// axis 1 splits rows (TOP from a, BOTTOM from b)
tok::GridImage mix_images(const tok::GridImage& a, const tok::GridImage& b, int axis);

// all objects of the image inside the kept half? side 0 = left/top
bool image_confined(const tok::GridImage& img, int axis, int side);

struct MixedText {
    std::vector<int> ids;  // text_len, padded
    int occupied = 0;      // slots before padding
    int sep_pos = -1;      // slot holding SEP, -1 if truncated away
    int seg_begin[2] = {0, 0};
    int seg_len[2] = {0, 0};
};

// y1 (+) SEP (+) y2, truncated to text_len
MixedText mix_texts(const tok::Vocabulary& v, const tok::EncodedText& a,
                    const tok::EncodedText& b);

// ---- dataset shards -----------------------------------------------------
void write_shard(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> load_shard(const std::string& path, int grid);

struct SplitSummary {
    int n_train = 0, n_val = 0;
    std::string train_path, val_path, manifest_path;
};

// Writes train.tsv, val.tsv and manifest.json under dir. No scene (by cell
// content) appears in both files.
SplitSummary make_split(const std::string& dir, int n_train, int n_val, int grid, int text_len,
                        uint64_t seed, const std::string& config_hash);

}  // namespace magvlt::synth
