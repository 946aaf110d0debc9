#pragma once
// Iterative mask-predict decoding. Images refine over a cosine schedule with
// a growing frozen set; text predicts its length once, then keeps every slot
// re-maskable on a linear schedule. Joint generation interleaves both from a
// single forward per step and re-reads the length head as it goes. The
// autoregressive path generates one token per forward for the baseline.
//
// Confidence of a freshly sampled image token is its log-probability under
// the sampling distribution plus Gumbel noise annealed linearly to zero;
// text confidence is the current token's renormalized in-range probability,
// noise-free. All confidence math runs in double regardless of model type.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "magvlt/model.hpp"
#include "magvlt/rng.hpp"
#include "magvlt/schedule.hpp"
#include "magvlt/synth.hpp"
#include "magvlt/vocab.hpp"

namespace magvlt::dec {

struct DecodeRequest {
    int K = 10;                // refinement forwards (mask-predict)
    double temp_image = 1.0;
    double temp_text = 0.7;
    double conf_noise = 2.0;   // image confidence Gumbel scale
    int candidates = 1;        // reranking pool size
    int len_init_lo = 2, len_init_hi = 0;  // joint length init range; 0 = text_len
    bool keep_trace = false;

    void validate() const {
        if (K < 1) throw std::invalid_argument("decode request: K < 1");
        if (candidates < 1) throw std::invalid_argument("decode request: candidates < 1");
        if (temp_image <= 0 || temp_text <= 0)
            throw std::invalid_argument("decode request: sampling temperature must be positive");
        if (conf_noise < 0) throw std::invalid_argument("decode request: negative noise scale");
    }
};

struct StepTrace {
    int step = 0;
    int masked_image_before = 0, masked_image_after = 0;
    int masked_text_before = 0, masked_text_after = 0;
    int n_hat = 0;
    std::vector<double> confidence;  // generation-modality confidences at selection
    // token ids entering the next step (MASK for still-open slots)
    std::vector<int> image_after, text_after;
};

struct DecodeTrace {
    std::vector<StepTrace> steps;
    int forwards = 0;
};

struct ImageResult {
    tok::GridImage image;
    DecodeTrace trace;
};

struct TextResult {
    std::vector<int> word_ids;
    std::string caption;
    int n_hat = 0;
    DecodeTrace trace;
};

struct JointResult {
    tok::GridImage image;
    std::vector<int> word_ids;
    std::string caption;
    int n_hat = 0;
    DecodeTrace trace;
};

// the central (G/2) x (G/2) block, row-major image positions
inline std::vector<int> central_region(int grid) {
    const int side = grid / 2, start = (grid - side) / 2;
    std::vector<int> out;
    for (int r = start; r < start + side; ++r)
        for (int c = start; c < start + side; ++c) out.push_back(r * grid + c);
    return out;
}

// erase ceil(n/2) slots centered in an n-word caption
inline std::pair<int, int> infill_span(int n) {
    if (n < 1) throw std::invalid_argument("infill span: empty caption");
    const int count = (n + 1) / 2;
    return {(n - count) / 2, count};
}

namespace detail {

template <class Real>
void check_finite_row(const nd::Tensor<Real>& logits, int row) {
    const Real* lr = logits.ptr() + int64_t(row) * logits.shape[1];
    for (int j = 0; j < logits.shape[1]; ++j)
        if (!std::isfinite(double(lr[j])))
            throw std::runtime_error("generation produced non-finite logits");
}

// softmax over an explicit candidate list at the given temperature;
// temperature 0 means argmax (ties toward the earlier list entry)
template <class Real>
std::pair<int, double> sample_from(const nd::Tensor<Real>& logits, int row,
                                   const std::vector<int>& cand, double temp, double u) {
    check_finite_row(logits, row);
    const Real* lr = logits.ptr() + int64_t(row) * logits.shape[1];
    if (temp == 0) {
        int best = cand[0];
        for (int id : cand)
            if (double(lr[id]) > double(lr[best])) best = id;
        return {best, 1.0};
    }
    double mx = -1e300;
    for (int id : cand) mx = std::max(mx, double(lr[id]) / temp);
    double z = 0;
    for (int id : cand) z += std::exp(double(lr[id]) / temp - mx);
    const double cut = u * z;
    double acc = 0;
    int pick = cand.back();
    for (int id : cand) {
        acc += std::exp(double(lr[id]) / temp - mx);
        if (acc >= cut) { pick = id; break; }
    }
    return {pick, std::exp(double(lr[pick]) / temp - mx) / z};
}

// renormalized probability of `id` within [lo, hi) at temperature 1
template <class Real>
double prob_in_range(const nd::Tensor<Real>& logits, int row, int lo, int hi, int id) {
    check_finite_row(logits, row);
    const Real* lr = logits.ptr() + int64_t(row) * logits.shape[1];
    double mx = -1e300;
    for (int j = lo; j < hi; ++j) mx = std::max(mx, double(lr[j]));
    double z = 0;
    for (int j = lo; j < hi; ++j) z += std::exp(double(lr[j]) - mx);
    return std::exp(double(lr[id]) - mx) / z;
}

inline std::vector<int> range_ids(int lo, int hi) {
    std::vector<int> out;
    for (int i = lo; i < hi; ++i) out.push_back(i);
    return out;
}

}  // namespace detail

// Generates only the erased image positions; everything else is frozen from
// step 0. The schedule counts run over the region size. Passing the full
// position list [0, n_image) makes this plain text-to-image decoding.
template <class Real>
ImageResult inpaint(net::Model<Real>& model, const tok::Vocabulary& v, const tok::Layout& lay,
                    const tok::GridImage& given, const std::vector<int>& region,
                    const tok::EncodedText& cond, const DecodeRequest& req, nd::Rng& rng) {
    req.validate();
    if (given.grid != lay.grid)
        throw std::invalid_argument("inpaint: image grid does not match the layout");
    const int NI = lay.n_image();
    std::vector<char> in_region(size_t(NI), 0);
    for (int p : region) {
        if (p < 0 || p >= NI)
            throw std::invalid_argument("inpaint: region position " + std::to_string(p) +
                                        " outside the image");
        if (in_region[size_t(p)])
            throw std::invalid_argument("inpaint: duplicate region position " + std::to_string(p));
        in_region[size_t(p)] = 1;
    }

    ImageResult res;
    res.image = given;
    res.image.grid = lay.grid;
    if (region.empty()) return res;

    auto seq = tok::build_sequence(v, lay, tok::encode_image(given), cond.ids, v.none(), v.none());
    for (int p : region) seq.ids[size_t(lay.image_pos(p))] = v.mask();

    const auto img_range = detail::range_ids(v.image_begin(), v.image_end());
    const int R = int(region.size());
    std::vector<double> conf(size_t(NI), 0.0);
    std::vector<char> masked = in_region;  // currently masked, region-local semantics
    int masked_count = R;

    for (int k = 0; k < req.K; ++k) {
        StepTrace st;
        st.step = k;
        st.masked_image_before = masked_count;
        auto out = model.forward(nullptr, seq.ids, 1);
        ++res.trace.forwards;

        const double noise = req.conf_noise * (1.0 - double(k + 1) / req.K);
        for (int p = 0; p < NI; ++p) {
            if (!masked[size_t(p)]) continue;
            const int row = lay.image_pos(p);
            auto [id, prob] = detail::sample_from(out.logits, row, img_range, req.temp_image,
                                                  rng.uniform());
            seq.ids[size_t(row)] = id;
            conf[size_t(p)] = std::log(std::max(prob, 1e-300)) + rng.gumbel() * noise;
        }

        if (k + 1 < req.K) {
            // region-local confidence/candidate views keep the count formula
            // running over the region size
            std::vector<double> lconf;
            std::vector<char> lcand;
            std::vector<int> lpos;
            for (int p = 0; p < NI; ++p)
                if (in_region[size_t(p)]) {
                    lconf.push_back(conf[size_t(p)]);
                    lcand.push_back(masked[size_t(p)]);
                    lpos.push_back(p);
                }
            auto keep_masked = mask::select_decode_mask(lconf, lcand, mask::ScheduleKind::cosine,
                                                        k + 1, req.K, R);
            std::fill(masked.begin(), masked.end(), 0);
            masked_count = 0;
            for (int li : keep_masked) {
                const int p = lpos[size_t(li)];
                masked[size_t(p)] = 1;
                ++masked_count;
                seq.ids[size_t(lay.image_pos(p))] = v.mask();
            }
            if (req.keep_trace)
                for (size_t li = 0; li < lpos.size(); ++li)
                    st.confidence.push_back(lconf[li]);
        } else {
            masked_count = 0;
        }
        st.masked_image_after = masked_count;
        if (req.keep_trace) {
            for (int p = 0; p < NI; ++p)
                st.image_after.push_back(seq.ids[size_t(lay.image_pos(p))]);
            res.trace.steps.push_back(std::move(st));
        }
    }

    for (int p = 0; p < NI; ++p) {
        const int id = seq.ids[size_t(lay.image_pos(p))];
        res.image.cells[size_t(p)] = uint8_t(id);
    }
    return res;
}

template <class Real>
ImageResult decode_image(net::Model<Real>& model, const tok::Vocabulary& v,
                         const tok::Layout& lay, const tok::EncodedText& cond,
                         const DecodeRequest& req, nd::Rng& rng) {
    std::vector<int> all;
    for (int p = 0; p < lay.n_image(); ++p) all.push_back(p);
    return inpaint(model, v, lay, tok::GridImage::empty(lay.grid), all, cond, req, rng);
}

namespace detail {

// Shared text refinement: `cand_pos` lists the re-maskable slots (all of
// [0, n_hat) for plain decoding, the erased span for infilling); they start
// masked and every one of them is a candidate again at every step.
template <class Real>
void refine_text(net::Model<Real>& model, const tok::Vocabulary& v, const tok::Layout& lay,
                 std::vector<int>& ids, const std::vector<int>& cand_pos,
                 const DecodeRequest& req, nd::Rng& rng, DecodeTrace& trace) {
    const auto word_range = range_ids(v.word_begin(), v.word_end());
    const int n_mod = int(cand_pos.size());
    std::vector<char> masked(size_t(n_mod), 1);
    int masked_count = n_mod;

    for (int k = 0; k < req.K; ++k) {
        StepTrace st;
        st.step = k;
        st.masked_text_before = masked_count;
        auto out = model.forward(nullptr, ids, 1);
        ++trace.forwards;

        std::vector<double> conf(size_t(n_mod), 0.0);
        for (int j = 0; j < n_mod; ++j) {
            const int row = lay.text_pos(cand_pos[size_t(j)]);
            if (masked[size_t(j)]) {
                auto [id, prob] = detail::sample_from(out.logits, row, word_range, req.temp_text,
                                                      rng.uniform());
                ids[size_t(row)] = id;
            }
            conf[size_t(j)] = prob_in_range(out.logits, row, v.word_begin(), v.word_end(),
                                            ids[size_t(row)]);
        }

        if (k + 1 < req.K) {
            std::vector<char> all_cand(size_t(n_mod), 1);
            auto next = mask::select_decode_mask(conf, all_cand, mask::ScheduleKind::linear,
                                                 k + 1, req.K, n_mod);
            std::fill(masked.begin(), masked.end(), 0);
            masked_count = 0;
            for (int j : next) {
                masked[size_t(j)] = 1;
                ++masked_count;
                ids[size_t(lay.text_pos(cand_pos[size_t(j)]))] = v.mask();
            }
            if (req.keep_trace) st.confidence = conf;
        } else {
            masked_count = 0;
        }
        st.masked_text_after = masked_count;
        if (req.keep_trace) {
            for (int j = 0; j < n_mod; ++j)
                st.text_after.push_back(ids[size_t(lay.text_pos(cand_pos[size_t(j)]))]);
            trace.steps.push_back(std::move(st));
        }
    }
}

inline TextResult finish_text(const tok::Vocabulary& v, const tok::Layout& lay,
                              const std::vector<int>& ids, int n_hat, DecodeTrace trace) {
    TextResult res;
    res.n_hat = n_hat;
    for (int j = 0; j < n_hat; ++j) res.word_ids.push_back(ids[size_t(lay.text_pos(j))]);
    res.caption = tok::decode_text_tokens(v, res.word_ids, n_hat);
    res.trace = std::move(trace);
    return res;
}

}  // namespace detail

// Length pass first (all slots masked at maximum length), then K refinement
// steps over the predicted n_hat slots. K + 1 forwards total. `sel_image`
// can name an image-selector token (LEFT/RIGHT/TOP/BOTTOM) when captioning a
// mixed context; -1 keeps the selector at NONE.
template <class Real>
TextResult decode_text(net::Model<Real>& model, const tok::Vocabulary& v, const tok::Layout& lay,
                       const tok::GridImage& cond, const DecodeRequest& req, nd::Rng& rng,
                       int sel_image = -1) {
    req.validate();
    const int NT = lay.text_len;
    auto seq = tok::build_sequence(v, lay, tok::encode_image(cond),
                                   std::vector<int>(size_t(NT), v.pad()),
                                   sel_image < 0 ? v.none() : sel_image, v.none());
    for (int j = 0; j < NT; ++j) seq.ids[size_t(lay.text_pos(j))] = v.mask();

    DecodeTrace trace;
    auto out = model.forward(nullptr, seq.ids, 1);
    ++trace.forwards;
    auto len_logits = model.length_logits(nullptr, out.hidden, {lay.bot_pos()});
    detail::check_finite_row(len_logits, 0);
    int n_hat = 1;
    for (int c = 1; c < NT; ++c)
        if (len_logits.ptr()[c] > len_logits.ptr()[n_hat - 1]) n_hat = c + 1;

    std::vector<int> cand_pos;
    for (int j = 0; j < NT; ++j) {
        if (j < n_hat)
            cand_pos.push_back(j);
        else
            seq.ids[size_t(lay.text_pos(j))] = v.pad();
    }
    detail::refine_text(model, v, lay, seq.ids, cand_pos, req, rng, trace);
    return detail::finish_text(v, lay, seq.ids, n_hat, std::move(trace));
}

// Keeps the caption's context words fixed and regenerates the centered
// half-length span. The length is known, so there is no length pass.
template <class Real>
TextResult infill(net::Model<Real>& model, const tok::Vocabulary& v, const tok::Layout& lay,
                  const tok::GridImage& cond, const std::string& caption,
                  const DecodeRequest& req, nd::Rng& rng) {
    req.validate();
    const auto enc = tok::encode_text(v, caption);
    auto seq = tok::build_sequence(v, lay, tok::encode_image(cond), enc.ids, v.none(), v.none());
    auto [begin, count] = infill_span(enc.length);
    std::vector<int> cand_pos;
    for (int j = begin; j < begin + count; ++j) {
        cand_pos.push_back(j);
        seq.ids[size_t(lay.text_pos(j))] = v.mask();
    }
    DecodeTrace trace;
    detail::refine_text(model, v, lay, seq.ids, cand_pos, req, rng, trace);
    return detail::finish_text(v, lay, seq.ids, enc.length, std::move(trace));
}

// Both modalities start fully masked; the text length is seeded uniformly in
// [len_init_lo, len_init_hi] and re-read from the length head on every step
// but the last, growing slots arriving masked and shrinking ones padding out.
// One forward per step serves both modalities.
template <class Real>
JointResult decode_joint(net::Model<Real>& model, const tok::Vocabulary& v,
                         const tok::Layout& lay, const DecodeRequest& req, nd::Rng& rng) {
    req.validate();
    const int NI = lay.n_image(), NT = lay.text_len;
    const int hi = req.len_init_hi > 0 ? req.len_init_hi : NT;
    if (req.len_init_lo < 1 || hi > NT || req.len_init_lo > hi)
        throw std::invalid_argument("decode request: bad length init range");

    auto seq = tok::build_sequence(v, lay, std::vector<int>(size_t(NI), 0),
                                   std::vector<int>(size_t(NT), v.pad()), v.none(), v.none());
    int n_hat = rng.range_int(req.len_init_lo, hi);
    for (int p = 0; p < NI; ++p) seq.ids[size_t(lay.image_pos(p))] = v.mask();
    for (int j = 0; j < n_hat; ++j) seq.ids[size_t(lay.text_pos(j))] = v.mask();

    const auto img_range = detail::range_ids(v.image_begin(), v.image_end());
    const auto word_range = detail::range_ids(v.word_begin(), v.word_end());
    std::vector<char> masked_img(size_t(NI), 1), masked_txt(size_t(NT), 0);
    for (int j = 0; j < n_hat; ++j) masked_txt[size_t(j)] = 1;
    std::vector<double> conf_img(size_t(NI), 0.0), conf_txt(size_t(NT), 0.0);

    JointResult res;
    for (int k = 0; k < req.K; ++k) {
        StepTrace st;
        st.step = k;
        st.masked_image_before = int(std::count(masked_img.begin(), masked_img.end(), 1));
        st.masked_text_before = int(std::count(masked_txt.begin(), masked_txt.end(), 1));
        auto out = model.forward(nullptr, seq.ids, 1);
        ++res.trace.forwards;

        if (k + 1 < req.K) {
            auto len_logits = model.length_logits(nullptr, out.hidden, {lay.bot_pos()});
            detail::check_finite_row(len_logits, 0);
            int n_new = 1;
            for (int c = 1; c < NT; ++c)
                if (len_logits.ptr()[c] > len_logits.ptr()[n_new - 1]) n_new = c + 1;
            for (int j = n_hat; j < n_new; ++j) {  // grown: arrives masked
                seq.ids[size_t(lay.text_pos(j))] = v.mask();
                masked_txt[size_t(j)] = 1;
            }
            for (int j = n_new; j < n_hat; ++j) {  // shrunk: pads out
                seq.ids[size_t(lay.text_pos(j))] = v.pad();
                masked_txt[size_t(j)] = 0;
            }
            n_hat = n_new;
        }
        st.n_hat = n_hat;

        const double noise = req.conf_noise * (1.0 - double(k + 1) / req.K);
        for (int p = 0; p < NI; ++p) {
            if (!masked_img[size_t(p)]) continue;
            const int row = lay.image_pos(p);
            auto [id, prob] = detail::sample_from(out.logits, row, img_range, req.temp_image,
                                                  rng.uniform());
            seq.ids[size_t(row)] = id;
            conf_img[size_t(p)] = std::log(std::max(prob, 1e-300)) + rng.gumbel() * noise;
        }
        for (int j = 0; j < n_hat; ++j) {
            const int row = lay.text_pos(j);
            if (masked_txt[size_t(j)]) {
                auto [id, prob] = detail::sample_from(out.logits, row, word_range, req.temp_text,
                                                      rng.uniform());
                seq.ids[size_t(row)] = id;
            }
            conf_txt[size_t(j)] = detail::prob_in_range(out.logits, row, v.word_begin(),
                                                        v.word_end(), seq.ids[size_t(row)]);
        }

        if (k + 1 < req.K) {
            auto keep_img = mask::select_decode_mask(conf_img, masked_img,
                                                     mask::ScheduleKind::cosine, k + 1, req.K, NI);
            std::fill(masked_img.begin(), masked_img.end(), 0);
            for (int p : keep_img) {
                masked_img[size_t(p)] = 1;
                seq.ids[size_t(lay.image_pos(p))] = v.mask();
            }
            std::vector<double> lconf(conf_txt.begin(), conf_txt.begin() + n_hat);
            std::vector<char> lcand(size_t(n_hat), 1);
            auto next_txt = mask::select_decode_mask(lconf, lcand, mask::ScheduleKind::linear,
                                                     k + 1, req.K, n_hat);
            std::fill(masked_txt.begin(), masked_txt.end(), 0);
            for (int j : next_txt) {
                masked_txt[size_t(j)] = 1;
                seq.ids[size_t(lay.text_pos(j))] = v.mask();
            }
        } else {
            std::fill(masked_img.begin(), masked_img.end(), 0);
            std::fill(masked_txt.begin(), masked_txt.end(), 0);
        }
        st.masked_image_after = int(std::count(masked_img.begin(), masked_img.end(), 1));
        st.masked_text_after = int(std::count(masked_txt.begin(), masked_txt.end(), 1));
        if (req.keep_trace) {
            for (int p = 0; p < NI; ++p)
                st.image_after.push_back(seq.ids[size_t(lay.image_pos(p))]);
            for (int j = 0; j < n_hat; ++j)
                st.text_after.push_back(seq.ids[size_t(lay.text_pos(j))]);
            res.trace.steps.push_back(std::move(st));
        }
    }

    res.image = tok::GridImage::empty(lay.grid);
    for (int p = 0; p < NI; ++p)
        res.image.cells[size_t(p)] = uint8_t(seq.ids[size_t(lay.image_pos(p))]);
    res.n_hat = n_hat;
    for (int j = 0; j < n_hat; ++j) res.word_ids.push_back(seq.ids[size_t(lay.text_pos(j))]);
    res.caption = tok::decode_text_tokens(v, res.word_ids, n_hat);
    return res;
}

// One forward per generated token; the prefix fully determines each step's
// logits, so untouched future slots can sit at PAD.
template <class Real>
ImageResult decode_ar_image(net::Model<Real>& model, const tok::Vocabulary& v,
                            const tok::Layout& lay, const tok::EncodedText& cond,
                            double temperature, nd::Rng& rng) {
    if (!model.cfg.causal) throw std::invalid_argument("ar decode: needs a causal model");
    if (lay.order != tok::Order::text_first)
        throw std::invalid_argument("ar decode: image generation needs the text-first layout");
    if (temperature < 0) throw std::invalid_argument("ar decode: negative temperature");
    const int NI = lay.n_image();
    auto seq = tok::build_sequence(v, lay, std::vector<int>(size_t(NI), 0), cond.ids, v.none(),
                                   v.none());
    for (int p = 0; p < NI; ++p) seq.ids[size_t(lay.image_pos(p))] = v.pad();

    const auto img_range = detail::range_ids(v.image_begin(), v.image_end());
    ImageResult res;
    for (int p = 0; p < NI; ++p) {
        auto out = model.forward(nullptr, seq.ids, 1);
        ++res.trace.forwards;
        const int row = lay.image_pos(p) - 1;
        auto [id, prob] =
            detail::sample_from(out.logits, row, img_range, temperature, rng.uniform());
        (void)prob;
        seq.ids[size_t(lay.image_pos(p))] = id;
    }
    res.image = tok::GridImage::empty(lay.grid);
    for (int p = 0; p < NI; ++p)
        res.image.cells[size_t(p)] = uint8_t(seq.ids[size_t(lay.image_pos(p))]);
    return res;
}

// Text generation stops at an emitted PAD or the slot budget.
template <class Real>
TextResult decode_ar_text(net::Model<Real>& model, const tok::Vocabulary& v,
                          const tok::Layout& lay, const tok::GridImage& cond,
                          double temperature, nd::Rng& rng) {
    if (!model.cfg.causal) throw std::invalid_argument("ar decode: needs a causal model");
    if (lay.order != tok::Order::image_first)
        throw std::invalid_argument("ar decode: text generation needs the image-first layout");
    if (temperature < 0) throw std::invalid_argument("ar decode: negative temperature");
    const int NT = lay.text_len;
    auto seq = tok::build_sequence(v, lay, tok::encode_image(cond),
                                   std::vector<int>(size_t(NT), v.pad()), v.none(), v.none());

    auto cand = detail::range_ids(v.word_begin(), v.word_end());
    cand.push_back(v.pad());
    TextResult res;
    int n = 0;
    for (int j = 0; j < NT; ++j) {
        auto out = model.forward(nullptr, seq.ids, 1);
        ++res.trace.forwards;
        const int row = lay.text_pos(j) - 1;
        auto [id, prob] = detail::sample_from(out.logits, row, cand, temperature, rng.uniform());
        (void)prob;
        if (id == v.pad()) break;
        seq.ids[size_t(lay.text_pos(j))] = id;
        ++n;
    }
    res.n_hat = n;
    for (int j = 0; j < n; ++j) res.word_ids.push_back(seq.ids[size_t(lay.text_pos(j))]);
    res.caption = n > 0 ? tok::decode_text_tokens(v, res.word_ids, n) : std::string();
    return res;
}

// Log-likelihood proxy for reranking: one fully visible forward, summing the
// full-vocabulary log-probabilities of the scored modality's tokens (text
// scoring covers the first text_len real words).
template <class Real>
double score_sequence(net::Model<Real>& model, const tok::Vocabulary& v, const tok::Layout& lay,
                      const std::vector<int>& image_ids, const std::vector<int>& text_ids,
                      int text_len, tok::PosKind scored) {
    if (scored == tok::PosKind::special)
        throw std::invalid_argument("score_sequence: pick a modality to score");
    auto seq = tok::build_sequence(v, lay, image_ids, text_ids, v.none(), v.none());
    auto out = model.forward(nullptr, seq.ids, 1);
    const int V = model.cfg.vocab_size;
    double total = 0;
    auto add_row = [&](int row, int id) {
        detail::check_finite_row(out.logits, row);
        const Real* lr = out.logits.ptr() + int64_t(row) * V;
        double mx = -1e300;
        for (int j = 0; j < V; ++j) mx = std::max(mx, double(lr[j]));
        double z = 0;
        for (int j = 0; j < V; ++j) z += std::exp(double(lr[j]) - mx);
        total += double(lr[id]) - mx - std::log(z);
    };
    if (scored == tok::PosKind::image) {
        for (int p = 0; p < lay.n_image(); ++p)
            add_row(lay.image_pos(p), seq.ids[size_t(lay.image_pos(p))]);
    } else {
        for (int j = 0; j < text_len; ++j)
            add_row(lay.text_pos(j), seq.ids[size_t(lay.text_pos(j))]);
    }
    return total;
}

// argmax with ties toward the first index
inline int best_index(const std::vector<double>& scores) {
    if (scores.empty()) throw std::invalid_argument("best_index: no candidates");
    int best = 0;
    for (int i = 1; i < int(scores.size()); ++i)
        if (scores[size_t(i)] > scores[size_t(best)]) best = i;
    return best;
}

}  // namespace magvlt::dec
